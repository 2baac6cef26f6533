//! Clustering metrics and end-to-end pipeline scoring.
//!
//! Metrics are generic over [`MetricScalar`] so that they can be evaluated in
//! `f64` or exactly in [`crate::Exact`].

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::{pairwise_distances, single_linkage, ClusterAssignment, StopRule};
use crate::data::{slice_segments, BoundaryRegion, FrameLabel, Segment, SensorStream};
use crate::error::{Error, Result};
use crate::recognition::RecognitionNet;
use crate::scalar::{MetricScalar, Scalar};
use crate::segmentation::{assess_frames, assess_junctions, detect_boundaries, Assessment, DetectParams, SegmentationNet};

/// Per-class counts over paired predicted/true labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// Every class seen in truth or prediction, ascending.
    pub classes: Vec<usize>,
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub fn_: Vec<usize>,
    /// True class sizes `N_i`.
    pub support: Vec<usize>,
    pub total: usize,
}

fn check_lengths(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dim(op, format!("{a} predicted labels, {b} true labels")));
    }
    if a == 0 {
        return Err(Error::Contract(format!("{op} needs at least one label")));
    }
    Ok(())
}

impl ConfusionCounts {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        check_lengths("confusion", pred.len(), truth.len())?;
        let mut classes: Vec<usize> = pred.iter().chain(truth).copied().collect();
        classes.sort_unstable();
        classes.dedup();
        let pos = |c: usize| classes.binary_search(&c).expect("class collected above");
        let k = classes.len();
        let mut c = ConfusionCounts {
            tp: vec![0; k],
            fp: vec![0; k],
            fn_: vec![0; k],
            support: vec![0; k],
            total: truth.len(),
            classes: classes.clone(),
        };
        for (&p, &t) in pred.iter().zip(truth) {
            let (ip, it) = (pos(p), pos(t));
            c.support[it] += 1;
            if ip == it {
                c.tp[it] += 1;
            } else {
                c.fp[ip] += 1;
                c.fn_[it] += 1;
            }
        }
        Ok(c)
    }
}

/// Maps each cluster to its most frequent true class (ties: smallest id).
pub fn majority_mapping(clusters: &[usize], truth: &[usize]) -> Result<BTreeMap<usize, usize>> {
    check_lengths("many_to_one", clusters.len(), truth.len())?;
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&c, &t) in clusters.iter().zip(truth) {
        *counts.entry(c).or_default().entry(t).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(c, by_class)| {
            let best = by_class.values().copied().max().unwrap_or(0);
            let class = by_class.into_iter().find(|&(_, n)| n == best).map(|(t, _)| t).unwrap();
            (c, class)
        })
        .collect())
}

/// Accuracy after relabeling each cluster with its majority true class.
pub fn many_to_one_accuracy<M: MetricScalar>(clusters: &[usize], truth: &[usize]) -> Result<M> {
    let map = majority_mapping(clusters, truth)?;
    let hits = clusters.iter().zip(truth).filter(|(c, t)| map[*c] == **t).count();
    Ok(M::count(hits) / M::count(truth.len()))
}

/// `2 Σ_i (N_i / N) · P_i R_i / (P_i + R_i)`; classes with `P_i + R_i = 0`
/// contribute nothing.
pub fn weighted_f1<M: MetricScalar>(pred: &[usize], truth: &[usize]) -> Result<M> {
    let c = ConfusionCounts::new(pred, truth)?;
    let two = M::count(2);
    let total = M::count(c.total);
    let mut f = M::zero();
    for i in 0..c.classes.len() {
        let predicted = c.tp[i] + c.fp[i];
        let p = if predicted == 0 { M::zero() } else { M::count(c.tp[i]) / M::count(predicted) };
        let r = if c.support[i] == 0 { M::zero() } else { M::count(c.tp[i]) / M::count(c.support[i]) };
        if p + r == M::zero() {
            continue;
        }
        f = f + M::count(c.support[i]) / total * (p * r / (p + r));
    }
    Ok(two * f)
}

/// Boundaries and segments found in one stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSegmentation {
    pub stream_id: String,
    pub regions: Vec<BoundaryRegion>,
    pub segments: Vec<Segment>,
    pub dropped: usize,
}

impl StreamSegmentation {
    pub fn new<T: Scalar>(stream: &SensorStream<T>, regions: Vec<BoundaryRegion>, min_len: usize) -> Self {
        let sliced = slice_segments(stream, &regions, min_len);
        StreamSegmentation {
            stream_id: stream.id.clone(),
            regions,
            segments: sliced.segments,
            dropped: sliced.dropped,
        }
    }
}

/// Label given to frames that no cluster covers.
pub const NO_CLASS: usize = usize::MAX;

/// Machine-readable run summary. Field order and names are stable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub streams: usize,
    pub frames_evaluated: usize,
    pub true_boundaries: usize,
    pub boundaries_recovered: usize,
    pub boundary_regions: usize,
    pub segments: usize,
    pub dropped_segments: usize,
    pub clusters: usize,
    pub many_to_one_accuracy: f64,
    pub weighted_f1: f64,
    pub streams_correct: usize,
    pub junctions_correct: usize,
    pub junctions_incorrect: usize,
    /// `(truth, predicted)` frame counts; `predicted` is [`NO_CLASS`] for
    /// unsegmented frames.
    #[serde(skip)]
    pub confusion: BTreeMap<(usize, usize), usize>,
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        let mut out = String::new();
        for (k, val) in v.as_object().ok_or(fmt::Error)? {
            writeln!(out, "{k}: {val}")?;
        }
        f.write_str(&out)
    }
}

impl Report {
    pub fn write_confusion_csv(&self, path: &Path, class_names: &[String]) -> Result<()> {
        let name = |c: usize| {
            if c == NO_CLASS {
                "none".to_string()
            } else {
                class_names.get(c).cloned().unwrap_or_else(|| c.to_string())
            }
        };
        let mut truths: Vec<usize> = self.confusion.keys().map(|k| k.0).collect();
        truths.dedup();
        let mut preds: Vec<usize> = self.confusion.keys().map(|k| k.1).collect();
        preds.sort_unstable();
        preds.dedup();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "truth")?;
        for &p in &preds {
            write!(f, ",{}", name(p))?;
        }
        writeln!(f)?;
        for &t in &truths {
            write!(f, "{}", name(t))?;
            for &p in &preds {
                write!(f, ",{}", self.confusion.get(&(t, p)).copied().unwrap_or(0))?;
            }
            writeln!(f)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Scores a segmentation plus a clustering of its segments (in stream, then
/// segment order) against the true frame labels. Frames whose truth is a
/// transition or unknown are excluded from accuracy and F1.
pub fn score_assignment<T: Scalar>(
    streams: &[SensorStream<T>],
    segs: &[StreamSegmentation],
    clusters: &ClusterAssignment,
) -> Result<Report> {
    if streams.len() != segs.len() {
        return Err(Error::dim("score", format!("{} streams, {} segmentations", streams.len(), segs.len())));
    }
    let n_segments: usize = segs.iter().map(|s| s.segments.len()).sum();
    if n_segments != clusters.labels.len() {
        return Err(Error::dim(
            "score",
            format!("{n_segments} segments, {} cluster labels", clusters.labels.len()),
        ));
    }
    // frame-level cluster ids
    let mut frame_clusters: Vec<Vec<Option<usize>>> = Vec::with_capacity(streams.len());
    let mut next = 0;
    for (s, g) in streams.iter().zip(segs) {
        if s.id != g.stream_id {
            return Err(Error::Contract(format!("segmentation of {} paired with stream {}", g.stream_id, s.id)));
        }
        let mut fc = vec![None; s.len()];
        for seg in &g.segments {
            fc[seg.start..seg.end()].fill(Some(clusters.labels[next]));
            next += 1;
        }
        frame_clusters.push(fc);
    }
    let (mut cl, mut tr) = (Vec::new(), Vec::new());
    for (s, fc) in streams.iter().zip(&frame_clusters) {
        for (l, c) in s.labels.iter().zip(fc) {
            if let (Some(t), Some(c)) = (l.activity(), c) {
                cl.push(*c);
                tr.push(usize::from(t));
            }
        }
    }
    let map = if cl.is_empty() { BTreeMap::new() } else { majority_mapping(&cl, &tr)? };

    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    let mut report = Report {
        streams: streams.len(),
        frames_evaluated: 0,
        true_boundaries: 0,
        boundaries_recovered: 0,
        boundary_regions: segs.iter().map(|g| g.regions.len()).sum(),
        segments: n_segments,
        dropped_segments: segs.iter().map(|g| g.dropped).sum(),
        clusters: clusters.k,
        many_to_one_accuracy: 0.0,
        weighted_f1: 0.0,
        streams_correct: 0,
        junctions_correct: 0,
        junctions_incorrect: 0,
        confusion: BTreeMap::new(),
    };
    for ((s, g), fc) in streams.iter().zip(segs).zip(&frame_clusters) {
        let mut predicted = vec![FrameLabel::Unknown; s.len()];
        for r in &g.regions {
            predicted[r.start..r.end.min(s.len())].fill(FrameLabel::Transition);
        }
        for (t, c) in fc.iter().enumerate() {
            if let Some(class) = c.and_then(|c| map.get(&c)) {
                predicted[t] = FrameLabel::Activity(*class as u16);
            }
        }
        for (l, p) in s.labels.iter().zip(&predicted) {
            if let Some(t) = l.activity() {
                let p = p.activity().map_or(NO_CLASS, usize::from);
                truth.push(usize::from(t));
                pred.push(p);
                *report.confusion.entry((usize::from(t), p)).or_default() += 1;
            }
        }
        let centers = s.boundary_centers();
        report.true_boundaries += centers.len();
        report.boundaries_recovered += centers.iter().filter(|&&c| g.regions.iter().any(|r| r.contains(c))).count();
        if assess_frames(&s.labels, &predicted)? == Assessment::Correct {
            report.streams_correct += 1;
        }
        let j = assess_junctions(&s.labels, &predicted)?;
        report.junctions_correct += j.correct;
        report.junctions_incorrect += j.incorrect;
    }
    report.frames_evaluated = truth.len();
    if !truth.is_empty() {
        let hits = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
        report.many_to_one_accuracy = hits as f64 / truth.len() as f64;
        report.weighted_f1 = weighted_f1::<f64>(&pred, &truth)?;
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub detect: DetectParams,
    pub stop: StopRule,
}

/// Everything the pipeline produced, in stream then segment order.
#[derive(Clone, Debug)]
pub struct PipelineOutput<T> {
    pub segmentations: Vec<StreamSegmentation>,
    pub embeddings: Vec<crate::branch::Embedding<T>>,
    pub clusters: ClusterAssignment,
    pub report: Report,
}

/// Detect boundaries, slice, embed, cluster and score.
pub fn evaluate_pipeline<T: Scalar>(
    streams: &[SensorStream<T>],
    seg: &SegmentationNet<T>,
    rec: &RecognitionNet<T>,
    p: &PipelineParams,
) -> Result<PipelineOutput<T>> {
    let mut segmentations = Vec::with_capacity(streams.len());
    let mut windows = Vec::new();
    for s in streams {
        let regions = detect_boundaries(seg, s, &p.detect)?;
        let g = StreamSegmentation::new(s, regions, rec.min_window());
        for x in &g.segments {
            windows.push(x.window(s)?);
        }
        segmentations.push(g);
    }
    let mut embeddings = rec.embed(&windows)?;
    for (i, e) in embeddings.iter_mut().enumerate() {
        e.id = i;
    }
    let clusters = cluster_embeddings(&embeddings, p.stop)?;
    let report = score_assignment(streams, &segmentations, &clusters)?;
    Ok(PipelineOutput {
        segmentations,
        embeddings,
        clusters,
        report,
    })
}

/// Single-linkage clustering of embeddings; fewer than two embeddings form
/// one cluster each.
pub fn cluster_embeddings<T: Scalar>(embeddings: &[crate::branch::Embedding<T>], stop: StopRule) -> Result<ClusterAssignment> {
    match embeddings.len() {
        0 => Ok(ClusterAssignment { labels: vec![], k: 0 }),
        1 => Ok(ClusterAssignment { labels: vec![0], k: 1 }),
        n => {
            let stop = match stop {
                StopRule::Clusters(k) => StopRule::Clusters(k.min(n)),
                other => other,
            };
            single_linkage(&pairwise_distances(embeddings)?, stop)
        }
    }
}
