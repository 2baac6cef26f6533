//! Boundary detection.
//!
//! A candidate frame `t_M` splits the stream into a history window ending at
//! `t_M` (chronological) and a future window starting at `t_M + 1` (read in
//! reverse). Both are encoded by one unidirectional branch; a fully connected
//! head maps the concatenated representations to a boundary score in
//! `[0, 1]`, trained against a flat-topped generalized Gaussian around each
//! true boundary. Runs of consecutive frames scoring above a threshold form a
//! soft boundary region.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::branch::{stack_windows, Branch, BranchConfig};
use crate::checkpoint;
use crate::data::{BoundaryRegion, FrameLabel, SensorStream};
use crate::error::{Error, Result};
use crate::layers::{Activation, Fc, LstmKind};
use crate::optim::OptimizerState;
use crate::params::{Mode, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Generalized Gaussian `β / (2αΓ(1/β)) · exp(-(|x - μ| / α)^β)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GGTarget {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    /// Divide by the value at `μ` so that the peak is exactly 1.
    pub normalize_peak: bool,
}

impl GGTarget {
    pub fn validate(&self) -> Result<()> {
        if self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite() && self.mu.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "generalized Gaussian needs finite alpha > 0 and beta > 0, got {self:?}"
            )))
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        gg_value(x, self)
    }
}

pub fn gg_value(x: f64, t: &GGTarget) -> f64 {
    let shape = (-((x - t.mu).abs() / t.alpha).powf(t.beta)).exp();
    if t.normalize_peak {
        shape
    } else {
        t.beta / (2.0 * t.alpha * statrs::function::gamma::gamma(1.0 / t.beta)) * shape
    }
}

/// Width and shape of the boundary target; the center comes from the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetShape {
    pub alpha: f64,
    pub beta: f64,
}

impl TargetShape {
    pub fn at(&self, mu: f64) -> GGTarget {
        GGTarget {
            alpha: self.alpha,
            beta: self.beta,
            mu,
            normalize_peak: true,
        }
    }

    /// Normalized target at `t` given the sorted true boundary centers.
    pub fn target(&self, t: f64, centers: &[f64]) -> f64 {
        nearest(t, centers).map_or(0.0, |c| gg_value(t, &self.at(c)))
    }
}

fn nearest(t: f64, centers: &[f64]) -> Option<f64> {
    centers
        .iter()
        .copied()
        .min_by(|a, b| (a - t).abs().total_cmp(&(b - t).abs()))
}

/// History/future windows around a candidate frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationSample<T> {
    /// `[channels × L_h]`, frames `t_M - L_h + 1 ..= t_M`.
    pub history: Tensor<T>,
    /// `[channels × L_f]`, frames `t_M + L_f` down to `t_M + 1`.
    pub future_reversed: Tensor<T>,
    pub target: T,
    pub t_m: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Windows {
    pub history: usize,
    pub future: usize,
}

impl Windows {
    /// Valid candidate frames: `[L_h - 1, len - L_f)`.
    pub fn candidates(&self, len: usize) -> std::ops::Range<usize> {
        let lo = self.history.saturating_sub(1);
        let hi = len.saturating_sub(self.future);
        lo..hi.max(lo)
    }
}

pub fn make_sample<T: Scalar>(
    stream: &SensorStream<T>,
    t_m: usize,
    windows: Windows,
    shape: &TargetShape,
) -> Result<SegmentationSample<T>> {
    make_sample_with(stream, t_m, windows, shape, &stream.boundary_centers())
}

fn make_sample_with<T: Scalar>(
    stream: &SensorStream<T>,
    t_m: usize,
    w: Windows,
    shape: &TargetShape,
    centers: &[f64],
) -> Result<SegmentationSample<T>> {
    if w.history == 0 || w.future == 0 || !w.candidates(stream.len()).contains(&t_m) {
        return Err(Error::Contract(format!(
            "t_M = {t_m} needs {} history and {} future frames in a stream of {}",
            w.history,
            w.future,
            stream.len()
        )));
    }
    Ok(SegmentationSample {
        history: stream.window(t_m + 1 - w.history, w.history)?,
        future_reversed: stream.reversed_window(t_m + 1, w.future)?,
        target: T::of(shape.target(t_m as f64, centers)),
        t_m,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegNetConfig {
    pub branch: BranchConfig,
    /// Hidden widths of the head; each hidden layer has batch norm and ReLU.
    pub head_hidden: Vec<usize>,
}

impl SegNetConfig {
    pub fn new(input_channels: usize) -> Self {
        SegNetConfig {
            branch: BranchConfig::new(input_channels, LstmKind::Unidirectional),
            head_hidden: vec![128, 64],
        }
    }
}

/// Siamese boundary scorer with owned parameters.
#[derive(Clone, Debug)]
pub struct SegmentationNet<T> {
    pub config: SegNetConfig,
    pub store: ParamStore<T>,
    branch: Branch,
    head: Vec<Fc>,
}

impl<T: Scalar> SegmentationNet<T> {
    pub fn new<R: Rng + ?Sized>(config: SegNetConfig, rng: &mut R) -> Result<Self> {
        if config.branch.lstm_kind != LstmKind::Unidirectional {
            return Err(Error::Config("segmentation branch must be unidirectional".into()));
        }
        let mut store = ParamStore::new();
        let branch = Branch::new(&mut store, rng, "seg.branch", config.branch.clone())?;
        let mut head = Vec::new();
        let mut width = 2 * branch.representation_dim();
        for (i, &h) in config.head_hidden.iter().enumerate() {
            head.push(Fc::new(&mut store, rng, &format!("seg.head{i}"), width, h, true, Activation::Relu));
            width = h;
        }
        let last = config.head_hidden.len();
        head.push(Fc::new(&mut store, rng, &format!("seg.head{last}"), width, 1, false, Activation::Sigmoid));
        Ok(SegmentationNet {
            config,
            store,
            branch,
            head,
        })
    }

    pub fn branch(&self) -> &Branch {
        &self.branch
    }

    pub fn head(&self) -> &[Fc] {
        &self.head
    }

    /// Scores `[B × 1]` for history `[B × C × L_h]` and reversed future
    /// `[B × C × L_f]` batches.
    pub fn forward(&self, s: &mut Session<'_, T>, history: Var, future: Var) -> Result<Var> {
        let vh = self.branch.forward(s, history)?;
        let vf = self.branch.forward(s, future)?;
        let mut h = s.tape.concat_last(vh, vf)?;
        for fc in &self.head {
            h = fc.forward(s, h)?;
        }
        Ok(h)
    }

    fn inputs(s: &mut Session<'_, T>, samples: &[&SegmentationSample<T>]) -> Result<(Var, Var)> {
        let h: Vec<Tensor<T>> = samples.iter().map(|x| x.history.clone()).collect();
        let f: Vec<Tensor<T>> = samples.iter().map(|x| x.future_reversed.clone()).collect();
        let hv = s.input(stack_windows(&h)?)?;
        let fv = s.input(stack_windows(&f)?)?;
        Ok((hv, fv))
    }

    /// Inference-mode scores, one per sample.
    pub fn scores(&self, samples: &[SegmentationSample<T>]) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(64) {
            let refs: Vec<&SegmentationSample<T>> = chunk.iter().collect();
            let mut s = Session::new(&self.store, Mode::Inference);
            let (h, f) = Self::inputs(&mut s, &refs)?;
            let y = self.forward(&mut s, h, f)?;
            out.extend_from_slice(s.tape.value(y).data());
        }
        Ok(out)
    }

    /// One Adam step on the mean squared error between scores and targets.
    pub fn train_step(&mut self, opt: &mut OptimizerState<T>, batch: &[SegmentationSample<T>]) -> Result<T> {
        if batch.len() < 2 {
            return Err(Error::Contract(format!(
                "training batch needs at least 2 samples, got {}",
                batch.len()
            )));
        }
        let refs: Vec<&SegmentationSample<T>> = batch.iter().collect();
        let targets: Vec<T> = batch.iter().map(|x| x.target).collect();
        let (loss, grads, updates) = {
            let mut s = Session::new(&self.store, Mode::Train);
            let (h, f) = Self::inputs(&mut s, &refs)?;
            let y = self.forward(&mut s, h, f)?;
            let t = s.input(Tensor::new(vec![batch.len(), 1], targets)?)?;
            let loss = mse(&mut s, y, t)?;
            let value = s.tape.value(loss).item()?;
            let grads = s.backward(loss)?;
            (value, grads, s.into_bn_updates())
        };
        opt.step(&mut self.store, &grads)?;
        self.store.apply_bn_updates(updates);
        Ok(loss)
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = serde_json::json!({ "model": "segmentation", "config": self.config, "extra": extra });
        checkpoint::save_store(path, &self.store, meta)
    }

    /// Restores a network written by [`SegmentationNet::save`], returning the
    /// extra metadata stored with it.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (tensors, meta) = checkpoint::load::<T>(path)?;
        if meta["model"] != "segmentation" {
            return Err(Error::Checkpoint(format!("{} is not a segmentation checkpoint", path.display())));
        }
        let config: SegNetConfig = serde_json::from_value(meta["config"].clone())?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = Self::new(config, &mut rng)?;
        net.store.load_from(&tensors)?;
        Ok((net, meta["extra"].clone()))
    }
}

pub(crate) fn mse<T: Scalar>(s: &mut Session<'_, T>, y: Var, t: Var) -> Result<Var> {
    let d = s.tape.sub(y, t)?;
    let sq = s.tape.mul(d, d)?;
    s.tape.mean(sq)
}

pub fn seg_score<T: Scalar>(net: &SegmentationNet<T>, sample: &SegmentationSample<T>) -> Result<T> {
    Ok(net.scores(std::slice::from_ref(sample))?[0])
}

pub fn seg_train_step<T: Scalar>(
    net: &mut SegmentationNet<T>,
    opt: &mut OptimizerState<T>,
    batch: &[SegmentationSample<T>],
) -> Result<T> {
    net.train_step(opt, batch)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectParams {
    pub windows: Windows,
    pub threshold: f64,
    pub stride: usize,
}

/// Merges per-candidate scores into regions. Candidate `frames[i]` stands for
/// the `stride` frames centered on it; consecutive candidates above
/// `threshold` form one region whose peak is their highest score.
pub fn merge_regions(frames: &[usize], scores: &[f64], threshold: f64, stride: usize, len: usize) -> Vec<BoundaryRegion> {
    let half = stride / 2;
    let cell = |f: usize| (f.saturating_sub(half), (f - half.min(f) + stride).min(len));
    let mut out: Vec<BoundaryRegion> = Vec::new();
    let mut open = false;
    for (&f, &sc) in frames.iter().zip(scores) {
        if sc > threshold {
            let (a, b) = cell(f);
            match out.last_mut() {
                Some(r) if open => {
                    r.end = b;
                    r.peak_score = r.peak_score.max(sc);
                }
                _ => out.push(BoundaryRegion::new(a, b, sc)),
            }
            open = true;
        } else {
            open = false;
        }
    }
    out
}

/// Candidate frames and their scores over the whole stream.
pub fn score_stream<T: Scalar>(
    net: &SegmentationNet<T>,
    stream: &SensorStream<T>,
    windows: Windows,
    stride: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let need = windows.history + windows.future;
    if stream.len() < need {
        return Err(Error::SequenceTooShort {
            op: "detect_boundaries",
            required: need,
            actual: stream.len(),
        });
    }
    if stride == 0 {
        return Err(Error::Config("detection stride must be positive".into()));
    }
    let frames: Vec<usize> = windows.candidates(stream.len()).step_by(stride).collect();
    let shape = TargetShape { alpha: 1.0, beta: 1.0 };
    let mut scores = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(64) {
        let samples = chunk
            .iter()
            .map(|&t| make_sample_with(stream, t, windows, &shape, &[]))
            .collect::<Result<Vec<_>>>()?;
        scores.extend(net.scores(&samples)?.into_iter().map(|v| v.to_f64_lossy()));
    }
    Ok((frames, scores))
}

pub fn detect_boundaries<T: Scalar>(
    net: &SegmentationNet<T>,
    stream: &SensorStream<T>,
    p: &DetectParams,
) -> Result<Vec<BoundaryRegion>> {
    let (frames, scores) = score_stream(net, stream, p.windows, p.stride)?;
    Ok(merge_regions(&frames, &scores, p.threshold, p.stride, stream.len()))
}

/// Draws `count` training samples from `streams`. A fraction `near` of them
/// is centered within `2α` of a true boundary; the rest are uniform over all
/// valid candidate frames.
pub fn draw_samples<T: Scalar, R: Rng + ?Sized>(
    streams: &[SensorStream<T>],
    count: usize,
    near: f64,
    windows: Windows,
    shape: &TargetShape,
    rng: &mut R,
) -> Result<Vec<SegmentationSample<T>>> {
    let usable: Vec<(&SensorStream<T>, Vec<f64>)> = streams
        .iter()
        .filter(|s| !windows.candidates(s.len()).is_empty())
        .map(|s| (s, s.boundary_centers()))
        .collect();
    if usable.is_empty() {
        return Err(Error::Contract(format!(
            "no stream is longer than {} frames",
            windows.history + windows.future
        )));
    }
    let mut near_pool: Vec<(usize, usize)> = Vec::new();
    let reach = (2.0 * shape.alpha).ceil() as i64;
    for (i, (s, centers)) in usable.iter().enumerate() {
        let range = windows.candidates(s.len());
        for &c in centers {
            let c = c.round() as i64;
            for t in (c - reach)..=(c + reach) {
                if t >= 0 && range.contains(&(t as usize)) {
                    near_pool.push((i, t as usize));
                }
            }
        }
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (i, t) = if !near_pool.is_empty() && rng.random::<f64>() < near {
            near_pool[rng.random_range(0..near_pool.len())]
        } else {
            let i = rng.random_range(0..usable.len());
            (i, rng.random_range(windows.candidates(usable[i].0.len())))
        };
        let (s, centers) = &usable[i];
        out.push(make_sample_with(s, t, windows, shape, centers)?);
    }
    Ok(out)
}

/// Half the median transition/unknown run length over `streams`, or
/// `fallback` when they contain none.
pub fn estimate_alpha<T: Scalar>(streams: &[SensorStream<T>], fallback: f64) -> f64 {
    let mut lens: Vec<usize> = streams
        .iter()
        .flat_map(|s| {
            let runs = s.runs();
            let n = runs.len();
            runs.into_iter()
                .enumerate()
                .filter(move |(i, r)| *i > 0 && *i + 1 < n && !r.label().is_activity())
                .map(|(_, r)| r.len)
        })
        .collect();
    if lens.is_empty() {
        return fallback;
    }
    lens.sort_unstable();
    (lens[lens.len() / 2] as f64 / 2.0).max(0.5)
}

pub fn write_boundary_csv(path: &Path, regions: &[BoundaryRegion]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "start_frame,end_frame,peak_score")?;
    for r in regions {
        writeln!(f, "{},{},{}", r.start, r.end, r.peak_score)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_boundary_csv(path: &Path) -> Result<Vec<BoundaryRegion>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let parsed = (|| -> Option<BoundaryRegion> {
            if f.len() != 3 {
                return None;
            }
            Some(BoundaryRegion::new(f[0].parse().ok()?, f[1].parse().ok()?, f[2].parse().ok()?))
        })();
        out.push(parsed.ok_or_else(|| Error::Parse {
            file: path.to_path_buf(),
            line: i + 1,
            msg: "expected start_frame,end_frame,peak_score".into(),
        })?);
    }
    Ok(out)
}

/// Outcome of the segmentation-and-recognition error assessment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assessment {
    Correct,
    Incorrect,
}

impl fmt::Display for Assessment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Assessment::Correct => "correct",
            Assessment::Incorrect => "incorrect",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Token {
    Activity(String),
    /// Transition or unknown.
    Gap(bool),
}

fn tokenize(seq: &str) -> Result<Vec<Token>> {
    let mut out: Vec<Token> = Vec::new();
    for raw in seq.split('-') {
        let tok = raw.trim();
        if tok.is_empty() || !tok.chars().all(|c| c.is_alphanumeric() || c == '_') {
            return Err(Error::UnknownLabel(tok.to_string()));
        }
        let t = match tok {
            "T" => Token::Gap(true),
            "U" => Token::Gap(false),
            a => Token::Activity(a.to_string()),
        };
        if out.last() != Some(&t) {
            out.push(t);
        }
    }
    Ok(out)
}

fn frame_tokens(labels: &[FrameLabel]) -> Vec<Token> {
    let mut out: Vec<Token> = Vec::new();
    for l in labels {
        let t = match l {
            FrameLabel::Activity(a) => Token::Activity(a.to_string()),
            FrameLabel::Transition => Token::Gap(true),
            FrameLabel::Unknown => Token::Gap(false),
        };
        if out.last() != Some(&t) {
            out.push(t);
        }
    }
    out
}

/// Whether `pred` is an acceptable reading of `truth`: true activities must
/// be reproduced exactly and in order; a true transition or unknown period
/// may be predicted as nothing, as transitions, or as unknown activity.
fn acceptable(truth: &[Token], pred: &[Token]) -> bool {
    // (i, j, previous truth gap matched nothing)
    fn go(
        truth: &[Token],
        pred: &[Token],
        i: usize,
        j: usize,
        skipped: bool,
        memo: &mut HashMap<(usize, usize, bool), bool>,
    ) -> bool {
        if i == truth.len() {
            return j == pred.len();
        }
        if let Some(&v) = memo.get(&(i, j, skipped)) {
            return v;
        }
        let ok = match &truth[i] {
            Token::Activity(a) => {
                let fresh = pred.get(j) == Some(&truth[i]) && go(truth, pred, i + 1, j + 1, false, memo);
                // An omitted gap between two runs of one activity leaves a
                // single predicted run covering both.
                fresh
                    || (skipped
                        && j > 0
                        && matches!(&pred[j - 1], Token::Activity(b) if b == a)
                        && go(truth, pred, i + 1, j, false, memo))
            }
            Token::Gap(_) => {
                let mut k = j;
                let mut ok = go(truth, pred, i + 1, j, true, memo);
                while !ok && k < pred.len() && matches!(pred[k], Token::Gap(_)) {
                    k += 1;
                    ok = go(truth, pred, i + 1, k, false, memo);
                }
                ok
            }
        };
        memo.insert((i, j, skipped), ok);
        ok
    }
    go(truth, pred, 0, 0, false, &mut HashMap::new())
}

/// Assesses a predicted label sequence against the ground truth. Both are
/// `-`-separated symbol strings such as `A-T-B`, where `T` is a transition,
/// `U` unknown activity and any other alphanumeric symbol an activity.
/// Repeated adjacent symbols are one run.
pub fn assess_segmentation(truth: &str, predicted: &str) -> Result<Assessment> {
    let t = tokenize(truth)?;
    let p = tokenize(predicted)?;
    Ok(verdict(acceptable(&t, &p)))
}

fn verdict(ok: bool) -> Assessment {
    if ok {
        Assessment::Correct
    } else {
        Assessment::Incorrect
    }
}

/// Frame-level form of [`assess_segmentation`] over whole label sequences.
pub fn assess_frames(truth: &[FrameLabel], predicted: &[FrameLabel]) -> Result<Assessment> {
    if truth.len() != predicted.len() {
        return Err(Error::dim(
            "assess_frames",
            format!("{} truth frames, {} predicted", truth.len(), predicted.len()),
        ));
    }
    Ok(verdict(acceptable(&frame_tokens(truth), &frame_tokens(predicted))))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JunctionCounts {
    pub correct: usize,
    pub incorrect: usize,
}

/// Assesses every junction between consecutive true activity runs, each
/// over the frames from the middle of one run to the middle of the next. A
/// stream with a single activity run is assessed as one basic-activity case.
pub fn assess_junctions(truth: &[FrameLabel], predicted: &[FrameLabel]) -> Result<JunctionCounts> {
    if truth.len() != predicted.len() {
        return Err(Error::dim(
            "assess_junctions",
            format!("{} truth frames, {} predicted", truth.len(), predicted.len()),
        ));
    }
    let mids: Vec<usize> = crate::data::label_runs(truth)
        .into_iter()
        .filter(|r| r.label().is_activity())
        .map(|r| r.start + r.len / 2)
        .collect();
    let mut counts = JunctionCounts::default();
    let mut tally = |a: usize, b: usize| {
        let ok = acceptable(&frame_tokens(&truth[a..b]), &frame_tokens(&predicted[a..b]));
        if ok {
            counts.correct += 1;
        } else {
            counts.incorrect += 1;
        }
    };
    match mids.len() {
        0 => {}
        1 => tally(0, truth.len()),
        _ => {
            for w in mids.windows(2) {
                tally(w[0], w[1] + 1);
            }
        }
    }
    Ok(counts)
}
