//! Independent reference implementations and fixed cases.

use harsiam::branch::Embedding;
use harsiam::clustering::{merge_sequence, single_linkage, DistanceMatrix, Merge, StopRule};
use harsiam::evaluation::{many_to_one_accuracy, weighted_f1};
use harsiam::layers::{lstm_sequence, lstm_step, LstmCell};
use harsiam::params::ParamStore;
use harsiam::recognition::similarity;
use harsiam::segmentation::{assess_segmentation, Assessment};
use harsiam::{Exact, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---- LSTM ----

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar loops over one sample; gates in the order i, f, c, o.
pub fn reference_step(store: &ParamStore<f64>, cell: &LstmCell, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (n_in, n_h) = (cell.input, cell.hidden);
    let gate = |g: usize, j: usize| -> f64 {
        let w = store.get(cell.w[g]).data();
        let u = store.get(cell.u[g]).data();
        let mut acc = store.get(cell.b[g]).data()[j];
        for k in 0..n_in {
            acc += w[j * n_in + k] * x[k];
        }
        for k in 0..n_h {
            acc += u[j * n_h + k] * h[k];
        }
        acc
    };
    let mut h_new = vec![0.0; n_h];
    let mut c_new = vec![0.0; n_h];
    for j in 0..n_h {
        let i = sigmoid(gate(0, j));
        let f = sigmoid(gate(1, j));
        let cand = gate(2, j).tanh();
        let o = sigmoid(gate(3, j));
        c_new[j] = f * c[j] + i * cand;
        h_new[j] = o * c_new[j].tanh();
    }
    (h_new, c_new)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_cell(rng: &mut ChaCha8Rng) -> (ParamStore<f64>, LstmCell) {
    let mut store = ParamStore::new();
    let (i, h) = (rng.random_range(1..=6), rng.random_range(1..=6));
    let cell = LstmCell::new(&mut store, rng, "cell", i, h);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    (store, cell)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst absolute difference between the library's step and the reference
/// over `cases` random cells, inputs and states.
pub fn lstm_step_oracle(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (store, cell) = random_cell(&mut rng);
        let batch = rng.random_range(1..=3);
        let x = random_vec(&mut rng, batch * cell.input, 2.0);
        let h = random_vec(&mut rng, batch * cell.hidden, 1.0);
        let c = random_vec(&mut rng, batch * cell.hidden, 2.0);
        let t = |d: &[f64], w: usize| Tensor::new(vec![batch, w], d.to_vec()).unwrap();
        let (hl, cl) = lstm_step(&store, &cell, &t(&x, cell.input), &t(&h, cell.hidden), &t(&c, cell.hidden)).unwrap();
        for b in 0..batch {
            let r = |v: &[f64], w: usize| v[b * w..(b + 1) * w].to_vec();
            let (hr, cr) = reference_step(&store, &cell, &r(&x, cell.input), &r(&h, cell.hidden), &r(&c, cell.hidden));
            worst = worst.max(max_diff(&r(hl.data(), cell.hidden), &hr));
            worst = worst.max(max_diff(&r(cl.data(), cell.hidden), &cr));
        }
    }
    worst
}

/// As [`lstm_step_oracle`] for whole sequences from zero state.
pub fn lstm_sequence_oracle(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (store, cell) = random_cell(&mut rng);
        let (batch, steps) = (rng.random_range(1..=3), rng.random_range(1..=8));
        let x = random_vec(&mut rng, batch * steps * cell.input, 2.0);
        let seq = Tensor::new(vec![batch, steps, cell.input], x.clone()).unwrap();
        let out = lstm_sequence(&store, &cell, &seq).unwrap();
        for b in 0..batch {
            let mut h = vec![0.0; cell.hidden];
            let mut c = vec![0.0; cell.hidden];
            for t in 0..steps {
                let xt = &x[(b * steps + t) * cell.input..][..cell.input];
                (h, c) = reference_step(&store, &cell, xt, &h, &c);
                let got = &out.data()[(b * steps + t) * cell.hidden..][..cell.hidden];
                worst = worst.max(max_diff(got, &h));
            }
        }
    }
    worst
}

// ---- single linkage ----

/// Textbook agglomeration: recompute every inter-cluster minimum distance
/// each round and merge the closest pair; among equally close pairs the one
/// whose (smaller, larger) cluster ids is lexicographically smallest. A
/// cluster's id is its smallest member.
pub fn naive_merges(n: usize, d: &dyn Fn(usize, usize) -> f64) -> Vec<(usize, usize, f64)> {
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut m = f64::INFINITY;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        m = m.min(d(i, j));
                    }
                }
                let key = (clusters[a][0].min(clusters[b][0]), clusters[a][0].max(clusters[b][0]));
                let better = match best {
                    None => true,
                    Some((bd, ba, bb)) => {
                        let bkey = (clusters[ba][0].min(clusters[bb][0]), clusters[ba][0].max(clusters[bb][0]));
                        m < bd || (m == bd && key < bkey)
                    }
                };
                if better {
                    best = Some((m, a, b));
                }
            }
        }
        let (m, a, b) = best.unwrap();
        let merged: Vec<usize> = {
            let mut v = [clusters[a].clone(), clusters[b].clone()].concat();
            v.sort_unstable();
            v
        };
        out.push((clusters[a][0].min(clusters[b][0]), clusters[a][0].max(clusters[b][0]), m));
        clusters.remove(b);
        clusters[a] = merged;
        clusters.sort_by_key(|c| c[0]);
    }
    out
}

/// Random condensed distances; half the instances draw from a handful of
/// values so that ties are common.
pub fn random_distances(rng: &mut ChaCha8Rng) -> DistanceMatrix<f64> {
    let n = rng.random_range(2..=8);
    let coarse = rng.random::<bool>();
    DistanceMatrix::from_fn(n, |_, _| {
        if coarse {
            f64::from(rng.random_range(0..4u8)) * 0.5
        } else {
            rng.random_range(0.0..10.0)
        }
    })
    .unwrap()
}

fn as_tuples(m: &[Merge<f64>]) -> Vec<(usize, usize, f64)> {
    m.iter().map(|m| (m.a, m.b, m.distance)).collect()
}

/// Number of instances (out of `instances`) whose merge sequence and every
/// k-cluster cut match the naive agglomerator.
pub fn linkage_oracle(instances: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0;
    for _ in 0..instances {
        let dm = random_distances(&mut rng);
        let n = dm.n();
        let fast = as_tuples(&merge_sequence(&dm));
        let naive = naive_merges(n, &|i, j| dm.get(i, j));
        let mut ok = fast == naive;
        for k in 1..=n {
            let a = single_linkage(&dm, StopRule::Clusters(k)).unwrap();
            ok &= a.k == k && labels_from_naive(n, &naive[..n - k]) == a.labels;
        }
        agree += usize::from(ok);
    }
    agree
}

fn labels_from_naive(n: usize, merges: &[(usize, usize, f64)]) -> Vec<usize> {
    let mut owner: Vec<usize> = (0..n).collect();
    for &(a, b, _) in merges {
        let (ra, rb) = (owner[a], owner[b]);
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        for o in owner.iter_mut() {
            if *o == hi {
                *o = lo;
            }
        }
    }
    let mut roots: Vec<usize> = owner.clone();
    roots.sort_unstable();
    roots.dedup();
    owner.iter().map(|r| roots.binary_search(r).unwrap()).collect()
}

/// Number of instances whose merge pairs survive a strictly increasing
/// transform of the distances unchanged.
pub fn monotone_invariance(instances: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0;
    for _ in 0..instances {
        let dm = random_distances(&mut rng);
        let g = |x: f64| x * x * x + 2.0 * x + (0.3 * x).exp();
        let moved = dm.map(g).unwrap();
        let pairs = |m: Vec<Merge<f64>>| m.into_iter().map(|m| (m.a, m.b)).collect::<Vec<_>>();
        let same = pairs(merge_sequence(&dm)) == pairs(merge_sequence(&moved))
            && merge_sequence(&dm).iter().zip(merge_sequence(&moved)).all(|(a, b)| g(a.distance) == b.distance);
        agree += usize::from(same);
    }
    agree
}

// ---- metrics ----

/// The binary case whose weighted F1 is 11/15 by hand: per-class F1 2/3 and
/// 4/5, both classes with weight 1/2.
pub fn f1_case() -> Exact {
    weighted_f1(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap()
}

/// Clusters {A, A, B} and {B, B}: majority relabeling gets 4 of 5 right.
pub fn many_to_one_case() -> Exact {
    many_to_one_accuracy(&[0, 0, 0, 1, 1], &[0, 0, 1, 1, 1]).unwrap()
}

/// Ground truth, prediction and verdict of every row of the assessment
/// table.
pub const ASSESSMENT_TABLE: [(&str, &str, Assessment); 12] = [
    ("A-A-A", "A-A-A", Assessment::Correct),
    ("A-A-A", "A-B-A", Assessment::Incorrect),
    ("A-A-A", "A-T-A", Assessment::Incorrect),
    ("A-A-A", "A-U-A", Assessment::Incorrect),
    ("A-B", "A-B", Assessment::Correct),
    ("A-B", "A-C-B", Assessment::Incorrect),
    ("A-B", "A-T-B", Assessment::Incorrect),
    ("A-B", "A-U-B", Assessment::Incorrect),
    ("A-T-B", "A-B", Assessment::Correct),
    ("A-T-B", "A-C-B", Assessment::Incorrect),
    ("A-T-B", "A-T-B", Assessment::Correct),
    ("A-T-B", "A-U-B", Assessment::Correct),
];

/// Rows of the table the implementation reproduces.
pub fn assessment_rows_matching() -> usize {
    ASSESSMENT_TABLE
        .iter()
        .filter(|(t, p, want)| assess_segmentation(t, p).ok() == Some(*want))
        .count()
}

// ---- similarity ----

pub fn random_embedding(rng: &mut ChaCha8Rng, d: usize) -> Embedding<f64> {
    Embedding {
        id: 0,
        vector: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

#[derive(Debug, Default)]
pub struct SimilarityFindings {
    pub self_not_one: usize,
    pub asymmetric: usize,
    pub triangle_violations: usize,
    pub worst_slack: f64,
}

/// Checks `D(a, a) = 1`, bitwise symmetry and the triangle inequality of
/// `-ln D` on random triples.
pub fn similarity_contract(triples: usize, seed: u64) -> SimilarityFindings {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = SimilarityFindings::default();
    for _ in 0..triples {
        let d = rng.random_range(1..=16);
        let (a, b, c) = (random_embedding(&mut rng, d), random_embedding(&mut rng, d), random_embedding(&mut rng, d));
        for e in [&a, &b, &c] {
            if similarity(e, e).unwrap() != 1.0 {
                f.self_not_one += 1;
            }
        }
        for (x, y) in [(&a, &b), (&b, &c), (&a, &c)] {
            if similarity(x, y).unwrap().to_bits() != similarity(y, x).unwrap().to_bits() {
                f.asymmetric += 1;
            }
        }
        let dist = |x: &Embedding<f64>, y: &Embedding<f64>| -similarity(x, y).unwrap().ln();
        let slack = dist(&a, &c) - dist(&a, &b) - dist(&b, &c);
        f.worst_slack = f.worst_slack.max(slack);
        if slack > 1e-9 {
            f.triangle_violations += 1;
        }
    }
    f
}
