//! Pair-supervised metric learning.
//!
//! Two weight-shared bidirectional branches encode windows `x_A`, `x_B`; the
//! similarity `D = exp(-‖f(x_A) - f(x_B)‖₁)` is fitted to the pair label `y`
//! (1 for same activity, 0 otherwise) by mean squared error. Nothing here
//! sees a class identity except through `y`.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::branch::{stack_windows, Branch, BranchConfig, Embedding};
use crate::checkpoint;
use crate::data::{Segment, SensorStream};
use crate::error::{Error, Result};
use crate::layers::LstmKind;
use crate::optim::OptimizerState;
use crate::params::{Mode, ParamStore, Session};
use crate::scalar::Scalar;
use crate::segmentation::mse;
use crate::tape::Var;
use crate::tensor::Tensor;

pub fn l1_distance<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::dim("similarity", format!("embedding sizes {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum())
}

/// `exp(-‖a - b‖₁)`, in `(0, 1]`.
pub fn similarity<T: Scalar>(a: &Embedding<T>, b: &Embedding<T>) -> Result<T> {
    Ok((-l1_distance(&a.vector, &b.vector)?).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSample<T> {
    pub a: Tensor<T>,
    pub b: Tensor<T>,
    /// 1 when both windows show the same activity, else 0.
    pub y: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecNetConfig {
    pub branch: BranchConfig,
    /// When set, a segment longer than this is embedded as the mean of the
    /// embeddings of its windows of this length (every `embed_hop` frames,
    /// plus one window flush with the segment end), so that embeddings see
    /// the sequence length the network was trained on.
    #[serde(default)]
    pub embed_window: Option<usize>,
    #[serde(default = "default_hop")]
    pub embed_hop: usize,
}

fn default_hop() -> usize {
    32
}

impl RecNetConfig {
    pub fn new(input_channels: usize) -> Self {
        RecNetConfig {
            branch: BranchConfig::new(input_channels, LstmKind::Bidirectional),
            embed_window: None,
            embed_hop: default_hop(),
        }
    }
}

/// Start frames of the `window`-long pieces of a `len`-frame segment.
fn piece_starts(len: usize, window: usize, hop: usize) -> Vec<usize> {
    if len <= window {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..=len - window).step_by(hop.max(1)).collect();
    if *starts.last().unwrap() != len - window {
        starts.push(len - window);
    }
    starts
}

#[derive(Clone, Debug)]
pub struct RecognitionNet<T> {
    pub config: RecNetConfig,
    pub store: ParamStore<T>,
    branch: Branch,
}

impl<T: Scalar> RecognitionNet<T> {
    pub fn new<R: Rng + ?Sized>(config: RecNetConfig, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let branch = Branch::new(&mut store, rng, "rec.branch", config.branch.clone())?;
        Ok(RecognitionNet { config, store, branch })
    }

    pub fn branch(&self) -> &Branch {
        &self.branch
    }

    pub fn min_window(&self) -> usize {
        self.branch.min_window()
    }

    /// Similarities `[B]` of two window batches `[B × C × T]`.
    pub fn forward(&self, s: &mut Session<'_, T>, a: Var, b: Var) -> Result<Var> {
        let ea = self.branch.forward(s, a)?;
        let eb = self.branch.forward(s, b)?;
        let d = s.tape.sub(ea, eb)?;
        let d = s.tape.abs(d)?;
        let d = s.tape.row_sum(d)?;
        let d = s.tape.neg(d)?;
        s.tape.exp(d)
    }

    /// One Adam step on the mean squared error between similarity and
    /// pair label.
    pub fn train_step(&mut self, opt: &mut OptimizerState<T>, batch: &[PairSample<T>]) -> Result<T> {
        if batch.len() < 2 {
            return Err(Error::Contract(format!(
                "training batch needs at least 2 pairs, got {}",
                batch.len()
            )));
        }
        let a: Vec<Tensor<T>> = batch.iter().map(|p| p.a.clone()).collect();
        let b: Vec<Tensor<T>> = batch.iter().map(|p| p.b.clone()).collect();
        let y: Vec<T> = batch.iter().map(|p| p.y).collect();
        let (loss, grads, updates) = {
            let mut s = Session::new(&self.store, Mode::Train);
            let av = s.input(stack_windows(&a)?)?;
            let bv = s.input(stack_windows(&b)?)?;
            let d = self.forward(&mut s, av, bv)?;
            let t = s.input(Tensor::new(vec![batch.len()], y)?)?;
            let loss = mse(&mut s, d, t)?;
            let value = s.tape.value(loss).item()?;
            let grads = s.backward(loss)?;
            (value, grads, s.into_bn_updates())
        };
        opt.step(&mut self.store, &grads)?;
        self.store.apply_bn_updates(updates);
        Ok(loss)
    }

    /// Inference-mode loss over `pairs` without updating anything.
    pub fn loss(&self, pairs: &[PairSample<T>]) -> Result<T> {
        let mut total = T::zero();
        for p in pairs {
            let ea = self.branch.encode(&self.store, &p.a, 0)?;
            let eb = self.branch.encode(&self.store, &p.b, 0)?;
            let d = similarity(&ea, &eb)? - p.y;
            total = total + d * d;
        }
        Ok(total / T::of_usize(pairs.len().max(1)))
    }

    /// Embeds every segment, preserving order (see
    /// [`RecNetConfig::embed_window`]).
    pub fn embed(&self, segments: &[Tensor<T>]) -> Result<Vec<Embedding<T>>> {
        let Some(window) = self.config.embed_window else {
            return self.embed_whole(segments);
        };
        let mut pieces = Vec::new();
        let mut owner = Vec::new();
        for (i, seg) in segments.iter().enumerate() {
            if seg.ndim() != 2 {
                return Err(Error::dim("embed", format!("segment shape {:?}", seg.shape())));
            }
            let (ch, len) = (seg.shape()[0], seg.shape()[1]);
            if len <= window {
                pieces.push(seg.clone());
                owner.push(i);
                continue;
            }
            for st in piece_starts(len, window, self.config.embed_hop) {
                let mut data = Vec::with_capacity(ch * window);
                for c in 0..ch {
                    data.extend_from_slice(&seg.data()[c * len + st..c * len + st + window]);
                }
                pieces.push(Tensor::new(vec![ch, window], data)?);
                owner.push(i);
            }
        }
        let parts = self.embed_whole(&pieces)?;
        let d = self.branch.representation_dim();
        let mut sums = vec![vec![T::zero(); d]; segments.len()];
        let mut counts = vec![0usize; segments.len()];
        for (e, &i) in parts.iter().zip(&owner) {
            for (s, v) in sums[i].iter_mut().zip(&e.vector) {
                *s = *s + *v;
            }
            counts[i] += 1;
        }
        Ok(sums
            .into_iter()
            .zip(counts)
            .enumerate()
            .map(|(id, (v, n))| Embedding {
                id,
                vector: v.into_iter().map(|x| x / T::of_usize(n)).collect(),
            })
            .collect())
    }

    /// Embeds every window in one piece, preserving order. Consecutive
    /// windows of equal length are encoded together; results do not depend
    /// on the grouping.
    pub fn embed_whole(&self, windows: &[Tensor<T>]) -> Result<Vec<Embedding<T>>> {
        let mut out = Vec::with_capacity(windows.len());
        let mut i = 0;
        while i < windows.len() {
            let mut j = i + 1;
            while j < windows.len() && j - i < 32 && windows[j].shape() == windows[i].shape() {
                j += 1;
            }
            for mut e in self.branch.encode_batch(&self.store, &windows[i..j])? {
                e.id += i;
                out.push(e);
            }
            i = j;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({ "model": "recognition", "config": self.config, "extra": extra });
        checkpoint::save_store(path, &self.store, meta)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (tensors, meta) = checkpoint::load::<T>(path)?;
        if meta["model"] != "recognition" {
            return Err(Error::Checkpoint(format!("{} is not a recognition checkpoint", path.display())));
        }
        let config: RecNetConfig = serde_json::from_value(meta["config"].clone())?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = Self::new(config, &mut rng)?;
        net.store.load_from(&tensors)?;
        Ok((net, meta["extra"].clone()))
    }
}

pub fn rec_train_step<T: Scalar>(
    net: &mut RecognitionNet<T>,
    opt: &mut OptimizerState<T>,
    batch: &[PairSample<T>],
) -> Result<T> {
    net.train_step(opt, batch)
}

pub fn embed_segments<T: Scalar>(net: &RecognitionNet<T>, windows: &[Tensor<T>]) -> Result<Vec<Embedding<T>>> {
    net.embed(windows)
}

/// Draws `n_pairs` pairs, `round(n_pairs · positive_fraction)` of them from
/// one group and the rest across groups, then shuffles them. `group` is the
/// only supervision: which windows belong together.
pub fn sample_pairs<T: Scalar, G: PartialEq, R: Rng + ?Sized>(
    windows: &[(Tensor<T>, G)],
    n_pairs: usize,
    positive_fraction: f64,
    rng: &mut R,
) -> Result<Vec<PairSample<T>>> {
    if !(0.0..=1.0).contains(&positive_fraction) {
        return Err(Error::Config(format!("positive fraction {positive_fraction} outside [0, 1]")));
    }
    let n_pos = (n_pairs as f64 * positive_fraction).round() as usize;
    let n_neg = n_pairs - n_pos;
    let partners = |i: usize, same: bool| -> Vec<usize> {
        (0..windows.len())
            .filter(|&j| j != i && (windows[j].1 == windows[i].1) == same)
            .collect()
    };
    let pos_anchors: Vec<usize> = (0..windows.len()).filter(|&i| !partners(i, true).is_empty()).collect();
    let neg_anchors: Vec<usize> = (0..windows.len()).filter(|&i| !partners(i, false).is_empty()).collect();
    if n_pos > 0 && pos_anchors.is_empty() {
        return Err(Error::Contract("no group holds two windows; cannot form positive pairs".into()));
    }
    if n_neg > 0 && neg_anchors.is_empty() {
        return Err(Error::Contract("all windows share one group; cannot form negative pairs".into()));
    }
    let mut out = Vec::with_capacity(n_pairs);
    for (count, anchors, same) in [(n_pos, &pos_anchors, true), (n_neg, &neg_anchors, false)] {
        for _ in 0..count {
            let i = anchors[rng.random_range(0..anchors.len())];
            let js = partners(i, same);
            let j = js[rng.random_range(0..js.len())];
            out.push(PairSample {
                a: windows[i].0.clone(),
                b: windows[j].0.clone(),
                y: if same { T::one() } else { T::zero() },
            });
        }
    }
    out.shuffle(rng);
    Ok(out)
}

/// Cuts windows of `len` frames every `hop` frames out of each segment,
/// tagging them with the segment's group.
pub fn cut_windows<T: Scalar, G: Clone>(
    stream: &SensorStream<T>,
    segments: &[(Segment, G)],
    len: usize,
    hop: usize,
) -> Result<Vec<(Tensor<T>, G)>> {
    if len == 0 || hop == 0 {
        return Err(Error::Config("window length and hop must be positive".into()));
    }
    let mut out = Vec::new();
    for (seg, g) in segments {
        let mut t = seg.start;
        while t + len <= seg.end() {
            out.push((stream.window(t, len)?, g.clone()));
            t += hop;
        }
    }
    Ok(out)
}

pub fn write_embedding_csv<T: Scalar>(path: &Path, ids: &[String], embeddings: &[Embedding<T>]) -> Result<()> {
    if ids.len() != embeddings.len() {
        return Err(Error::dim("write_embeddings", format!("{} ids, {} embeddings", ids.len(), embeddings.len())));
    }
    let d = embeddings.first().map_or(0, |e| e.dim());
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "segment_id")?;
    for k in 1..=d {
        write!(f, ",v_{k}")?;
    }
    writeln!(f)?;
    for (id, e) in ids.iter().zip(embeddings) {
        write!(f, "{id}")?;
        for v in &e.vector {
            write!(f, ",{}", v.to_f64_lossy())?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_embedding_csv(path: &Path) -> Result<(Vec<String>, Vec<Embedding<f64>>)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        file: path.to_path_buf(),
        line: 1,
        msg: "empty embedding file".into(),
    })?;
    let d = header.split(',').count() - 1;
    let mut ids = Vec::new();
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut f = line.split(',');
        let id = f.next().unwrap_or_default().to_string();
        let v: std::result::Result<Vec<f64>, _> = f.map(str::parse::<f64>).collect();
        match v {
            Ok(v) if v.len() == d => {
                out.push(Embedding { id: ids.len(), vector: v });
                ids.push(id);
            }
            _ => {
                return Err(Error::Parse {
                    file: path.to_path_buf(),
                    line: i + 2,
                    msg: format!("expected segment id and {d} values"),
                })
            }
        }
    }
    Ok((ids, out))
}
