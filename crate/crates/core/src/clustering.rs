//! Single-linkage agglomerative clustering.
//!
//! Merges are computed Kruskal-style: edges are visited in order of
//! distance, and all edges of one distance are resolved together so that
//! equal-distance merges follow the documented tie rule: the pair of
//! clusters with the lexicographically smallest `(min id, max id)` merges
//! first, where a cluster's id is its smallest member index.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::branch::Embedding;
use crate::error::{Error, Result};
use crate::recognition::l1_distance;
use crate::scalar::Scalar;

/// Pairwise distances stored as the condensed upper triangle, row-major:
/// `(0,1), (0,2), …, (0,n-1), (1,2), …`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> DistanceMatrix<T> {
    pub fn new(n: usize, condensed: Vec<T>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Contract(format!("distance matrix needs n >= 2, got {n}")));
        }
        if condensed.len() != n * (n - 1) / 2 {
            return Err(Error::dim(
                "distance_matrix",
                format!("{} entries for n = {n}", condensed.len()),
            ));
        }
        if let Some(v) = condensed.iter().find(|v| !(v.is_finite() && **v >= T::zero())) {
            return Err(Error::Contract(format!("distance {v} is negative or not finite")));
        }
        Ok(DistanceMatrix { n, data: condensed })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                data.push(f(i, j));
            }
        }
        Self::new(n, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn condensed(&self) -> &[T] {
        &self.data
    }

    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if i == j {
            T::zero()
        } else {
            self.data[self.index(i, j)]
        }
    }

    /// Applies `f` to every off-diagonal entry.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(self.n, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// L1 distances between embeddings, i.e. `-ln` of their similarity.
pub fn pairwise_distances<T: Scalar>(embeddings: &[Embedding<T>]) -> Result<DistanceMatrix<T>> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::Contract(format!("need at least 2 embeddings, got {n}")));
    }
    let mut data = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            data.push(l1_distance(&embeddings[i].vector, &embeddings[j].vector)?);
        }
    }
    DistanceMatrix::new(n, data)
}

/// One agglomeration step: clusters with ids `a < b` joined at `distance`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge<T> {
    pub a: usize,
    pub b: usize,
    pub distance: T,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    /// Root of `x`; roots are always the smallest member index.
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.parent[hi] = lo;
    }
}

/// The complete merge sequence (`n - 1` merges), in merge order.
pub fn merge_sequence<T: Scalar>(dm: &DistanceMatrix<T>) -> Vec<Merge<T>> {
    let n = dm.n();
    let mut edges: Vec<(T, usize, usize)> = Vec::with_capacity(dm.data.len());
    for i in 0..n {
        for j in i + 1..n {
            edges.push((dm.get(i, j), i, j));
        }
    }
    edges.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite distances").then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut uf = UnionFind::new(n);
    let mut merges = Vec::with_capacity(n - 1);
    let mut lo = 0;
    while lo < edges.len() && merges.len() + 1 < n {
        let d = edges[lo].0;
        let mut hi = lo;
        while hi < edges.len() && edges[hi].0 == d {
            hi += 1;
        }
        let mut level: Vec<(usize, usize)> = edges[lo..hi].iter().map(|e| (e.1, e.2)).collect();
        loop {
            let mut best: Option<(usize, usize)> = None;
            level.retain(|&(i, j)| {
                let (ri, rj) = (uf.find(i), uf.find(j));
                if ri == rj {
                    return false;
                }
                let key = (ri.min(rj), ri.max(rj));
                if best.is_none_or(|b| key < b) {
                    best = Some(key);
                }
                true
            });
            let Some((a, b)) = best else { break };
            uf.union(a, b);
            merges.push(Merge { a, b, distance: d });
        }
        lo = hi;
    }
    merges
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum StopRule {
    /// Stop once this many clusters remain.
    Clusters(usize),
    /// Perform only merges at distance `<=` this value.
    Threshold(f64),
    /// Cut the merge sequence at its largest distance jump.
    LargestGap,
}

/// Cluster labels `0..k`, numbered in order of each cluster's smallest
/// member.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
}

/// How many of `merges` a stop rule keeps.
pub fn merges_to_keep<T: Scalar>(merges: &[Merge<T>], n: usize, stop: StopRule) -> Result<usize> {
    match stop {
        StopRule::Clusters(k) => {
            if k < 1 || k > n {
                return Err(Error::Config(format!("cannot form {k} clusters from {n} points")));
            }
            Ok(n - k)
        }
        StopRule::Threshold(t) => Ok(merges.iter().take_while(|m| m.distance.to_f64_lossy() <= t).count()),
        StopRule::LargestGap => {
            if merges.len() < 2 {
                return Ok(merges.len());
            }
            let mut best = (T::neg_infinity(), merges.len());
            for (i, w) in merges.windows(2).enumerate() {
                let gap = w[1].distance - w[0].distance;
                if gap > best.0 {
                    best = (gap, i + 1);
                }
            }
            Ok(best.1)
        }
    }
}

pub fn assignment_from_merges<T: Scalar>(n: usize, merges: &[Merge<T>]) -> ClusterAssignment {
    let mut uf = UnionFind::new(n);
    for m in merges {
        let (a, b) = (uf.find(m.a), uf.find(m.b));
        uf.union(a, b);
    }
    let mut ids = vec![usize::MAX; n];
    let mut labels = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        let r = uf.find(i);
        if ids[r] == usize::MAX {
            ids[r] = k;
            k += 1;
        }
        labels.push(ids[r]);
    }
    ClusterAssignment { labels, k }
}

pub fn single_linkage<T: Scalar>(dm: &DistanceMatrix<T>, stop: StopRule) -> Result<ClusterAssignment> {
    let merges = merge_sequence(dm);
    let keep = merges_to_keep(&merges, dm.n(), stop)?;
    Ok(assignment_from_merges(dm.n(), &merges[..keep]))
}

pub fn write_assignment_csv(path: &Path, ids: &[String], a: &ClusterAssignment) -> Result<()> {
    if ids.len() != a.labels.len() {
        return Err(Error::dim("write_assignments", format!("{} ids, {} labels", ids.len(), a.labels.len())));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "segment_id,cluster_id")?;
    for (id, c) in ids.iter().zip(&a.labels) {
        writeln!(f, "{id},{c}")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_assignment_csv(path: &Path) -> Result<(Vec<String>, ClusterAssignment)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let parsed = line.rsplit_once(',').and_then(|(id, c)| Some((id.to_string(), c.parse::<usize>().ok()?)));
        let (id, c) = parsed.ok_or_else(|| Error::Parse {
            file: path.to_path_buf(),
            line: i + 1,
            msg: "expected segment_id,cluster_id".into(),
        })?;
        ids.push(id);
        labels.push(c);
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    Ok((ids, ClusterAssignment { labels, k }))
}
