use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-frame annotation. Transitions (`T`) and unknown activity (`U`) only
/// serve as boundary markers; they are never a recognition target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameLabel {
    Activity(u16),
    Transition,
    Unknown,
}

impl FrameLabel {
    /// Integer code used in files: activities are `>= 0`, `T = -1`, `U = -2`.
    pub fn code(self) -> i32 {
        match self {
            FrameLabel::Activity(c) => i32::from(c),
            FrameLabel::Transition => -1,
            FrameLabel::Unknown => -2,
        }
    }

    pub fn from_code(code: i32) -> Result<Self> {
        match code {
            -1 => Ok(FrameLabel::Transition),
            -2 => Ok(FrameLabel::Unknown),
            c if (0..=i32::from(u16::MAX)).contains(&c) => Ok(FrameLabel::Activity(c as u16)),
            c => Err(Error::UnknownLabel(c.to_string())),
        }
    }

    pub fn is_activity(self) -> bool {
        matches!(self, FrameLabel::Activity(_))
    }

    pub fn activity(self) -> Option<u16> {
        match self {
            FrameLabel::Activity(c) => Some(c),
            _ => None,
        }
    }
}

impl fmt::Display for FrameLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameLabel::Activity(c) => write!(f, "{c}"),
            FrameLabel::Transition => f.write_str("T"),
            FrameLabel::Unknown => f.write_str("U"),
        }
    }
}

/// A maximal run of equal labels, `[start, start + len)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRun {
    pub label_code: i32,
    pub start: usize,
    pub len: usize,
}

impl LabelRun {
    pub fn label(&self) -> FrameLabel {
        FrameLabel::from_code(self.label_code).expect("run holds a valid code")
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

pub fn label_runs(labels: &[FrameLabel]) -> Vec<LabelRun> {
    let mut runs: Vec<LabelRun> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match runs.last_mut() {
            Some(r) if r.label_code == l.code() => r.len += 1,
            _ => runs.push(LabelRun {
                label_code: l.code(),
                start: i,
                len: 1,
            }),
        }
    }
    runs
}

/// Multichannel time series with per-frame labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorStream<T> {
    pub id: String,
    pub subject_id: u32,
    pub rate_hz: f64,
    /// `[channels × time]`
    pub frames: Tensor<T>,
    pub labels: Vec<FrameLabel>,
    /// Names of the activity ids.
    pub class_names: Vec<String>,
}

impl<T: Scalar> SensorStream<T> {
    pub fn new(
        id: impl Into<String>,
        subject_id: u32,
        rate_hz: f64,
        frames: Tensor<T>,
        labels: Vec<FrameLabel>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if frames.ndim() != 2 {
            return Err(Error::dim(
                "sensor_stream",
                format!("frames must be [channels × time], got {:?}", frames.shape()),
            ));
        }
        if labels.len() != frames.shape()[1] {
            return Err(Error::dim(
                "sensor_stream",
                format!("{} labels for {} frames", labels.len(), frames.shape()[1]),
            ));
        }
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(Error::Config(format!("sampling rate {rate_hz} must be positive")));
        }
        Ok(SensorStream {
            id: id.into(),
            subject_id,
            rate_hz,
            frames,
            labels,
            class_names,
        })
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.len();
        &self.frames.data()[c * n..(c + 1) * n]
    }

    pub fn frame(&self, t: usize) -> Vec<T> {
        (0..self.channels()).map(|c| self.channel(c)[t]).collect()
    }

    /// Frames `[start, start + len)` as `[channels × len]`.
    pub fn window(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        if len == 0 || start + len > self.len() {
            return Err(Error::Contract(format!(
                "window [{start}, {}) outside stream of {} frames",
                start + len,
                self.len()
            )));
        }
        let mut data = Vec::with_capacity(self.channels() * len);
        for c in 0..self.channels() {
            data.extend_from_slice(&self.channel(c)[start..start + len]);
        }
        Ok(Tensor::from_parts(vec![self.channels(), len], data))
    }

    /// Frames `[start, start + len)` in reverse chronological order.
    pub fn reversed_window(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        Ok(reverse_time(&self.window(start, len)?))
    }

    pub fn runs(&self) -> Vec<LabelRun> {
        label_runs(&self.labels)
    }

    /// Ground-truth boundary centers in (possibly fractional) frame units.
    ///
    /// A transition or unknown run lying between two activity runs marks a
    /// boundary at its midpoint; two different adjacent activity runs mark a
    /// boundary halfway between their touching frames.
    pub fn boundary_centers(&self) -> Vec<f64> {
        let runs = self.runs();
        let mut out = Vec::new();
        for i in 0..runs.len() {
            let r = runs[i];
            let l = r.label();
            if l.is_activity() {
                if let Some(next) = runs.get(i + 1) {
                    if next.label().is_activity() {
                        out.push(next.start as f64 - 0.5);
                    }
                }
            } else if i > 0 && i + 1 < runs.len() {
                out.push(r.start as f64 + (r.len as f64 - 1.0) / 2.0);
            }
        }
        out
    }

    /// Activity id set present in the labels, sorted.
    pub fn activity_ids(&self) -> Vec<u16> {
        let mut ids: Vec<u16> = self.labels.iter().filter_map(|l| l.activity()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Reverses the time axis of a `[channels × time]` window.
pub fn reverse_time<T: Scalar>(w: &Tensor<T>) -> Tensor<T> {
    let (ch, len) = (w.shape()[0], w.shape()[1]);
    let mut data = Vec::with_capacity(w.len());
    for c in 0..ch {
        data.extend(w.data()[c * len..(c + 1) * len].iter().rev());
    }
    Tensor::from_parts(vec![ch, len], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use FrameLabel::*;

    fn stream(labels: Vec<FrameLabel>) -> SensorStream<f64> {
        let n = labels.len();
        let data: Vec<f64> = (0..2 * n).map(|i| i as f64).collect();
        SensorStream::new("s", 1, 10.0, Tensor::new(vec![2, n], data).unwrap(), labels, vec![])
            .unwrap()
    }

    #[test]
    fn boundaries_from_transitions_and_direct_changes() {
        let s = stream(vec![
            Activity(0),
            Activity(0),
            Transition,
            Transition,
            Transition,
            Activity(1),
            Activity(2),
            Unknown,
        ]);
        assert_eq!(s.boundary_centers(), vec![3.0, 5.5]);
    }

    #[test]
    fn reversed_window_is_involution() {
        let s = stream(vec![Activity(0); 10]);
        let w = s.window(2, 5).unwrap();
        let r = s.reversed_window(2, 5).unwrap();
        assert_eq!(r.data()[0], s.channel(0)[6]);
        assert_eq!(r.data()[5], s.channel(1)[6]);
        assert_eq!(reverse_time(&r), w);
    }

    #[test]
    fn label_mismatch_rejected() {
        let r = SensorStream::new("x", 0, 1.0, Tensor::<f64>::zeros(&[1, 3]), vec![Unknown], vec![]);
        assert!(r.is_err());
        let r = SensorStream::new("x", 0, 0.0, Tensor::<f64>::zeros(&[1, 1]), vec![Unknown], vec![]);
        assert!(r.is_err());
    }

    #[test]
    fn codes_round_trip() {
        for l in [Activity(0), Activity(7), Transition, Unknown] {
            assert_eq!(FrameLabel::from_code(l.code()).unwrap(), l);
        }
        assert!(FrameLabel::from_code(-3).is_err());
    }
}
