use serde::{Deserialize, Serialize};

use super::stream::SensorStream;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A run of frames `[start, end)` believed to contain an activity boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRegion {
    pub start: usize,
    pub end: usize,
    /// Highest boundary score inside the region (1 for ground truth).
    pub peak_score: f64,
}

impl BoundaryRegion {
    pub fn new(start: usize, end: usize, peak_score: f64) -> Self {
        BoundaryRegion {
            start,
            end,
            peak_score,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Whether fractional frame position `x` lies within the region's
    /// frames, `[start, end - 1]`.
    pub fn contains(&self, x: f64) -> bool {
        !self.is_empty() && x >= self.start as f64 && x <= (self.end - 1) as f64
    }

    /// Distance from `x` to the nearest frame of the region, zero inside.
    pub fn distance_to(&self, x: f64) -> f64 {
        if self.contains(x) {
            0.0
        } else if x < self.start as f64 {
            self.start as f64 - x
        } else {
            x - (self.end - 1) as f64
        }
    }
}

/// Frames `[start, start + len)` of one stream lying between boundaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub stream_id: String,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn window<T: Scalar>(&self, stream: &SensorStream<T>) -> Result<Tensor<T>> {
        stream.window(self.start, self.len)
    }

    /// Most frequent activity id inside the segment, ignoring transition and
    /// unknown frames; ties go to the smaller id.
    pub fn majority_label<T: Scalar>(&self, stream: &SensorStream<T>) -> Option<u16> {
        let mut counts = std::collections::BTreeMap::<u16, usize>::new();
        for l in &stream.labels[self.start..self.end()] {
            if let Some(a) = l.activity() {
                *counts.entry(a).or_default() += 1;
            }
        }
        let best = counts.values().copied().max()?;
        counts.into_iter().find(|&(_, c)| c == best).map(|(a, _)| a)
    }

    /// Fraction of the segment's activity frames that carry its majority
    /// label; `None` when it has no activity frames.
    pub fn purity<T: Scalar>(&self, stream: &SensorStream<T>) -> Option<f64> {
        let m = self.majority_label(stream)?;
        let labels = &stream.labels[self.start..self.end()];
        let act = labels.iter().filter(|l| l.is_activity()).count();
        let hit = labels.iter().filter(|l| l.activity() == Some(m)).count();
        Some(hit as f64 / act as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceResult {
    pub segments: Vec<Segment>,
    /// Spans dropped for being shorter than the minimum length.
    pub dropped: usize,
}

/// Cuts `stream` at `regions` (sorted and disjoint) and keeps the spans
/// between them that are at least `min_len` frames long.
pub fn slice_segments<T: Scalar>(
    stream: &SensorStream<T>,
    regions: &[BoundaryRegion],
    min_len: usize,
) -> SliceResult {
    let mut spans = Vec::with_capacity(regions.len() + 1);
    let mut cursor = 0;
    for r in regions {
        spans.push((cursor, r.start.max(cursor)));
        cursor = cursor.max(r.end);
    }
    spans.push((cursor, stream.len().max(cursor)));
    let mut out = SliceResult {
        segments: Vec::new(),
        dropped: 0,
    };
    for (a, b) in spans {
        let len = b - a;
        if len == 0 {
            continue;
        }
        if len < min_len.max(1) {
            out.dropped += 1;
            continue;
        }
        out.segments.push(Segment {
            stream_id: stream.id.clone(),
            start: a,
            len,
        });
    }
    if out.dropped > 0 {
        log::warn!("{}: dropped {} segments shorter than {min_len} frames", stream.id, out.dropped);
    }
    out
}

/// The transition and unknown runs that separate activity runs, as regions.
pub fn truth_regions<T: Scalar>(stream: &SensorStream<T>) -> Vec<BoundaryRegion> {
    stream
        .runs()
        .into_iter()
        .filter(|r| !r.label().is_activity())
        .map(|r| BoundaryRegion::new(r.start, r.end(), 1.0))
        .collect()
}
