//! Synthetic activity streams: each activity class is a signal generator,
//! consecutive segments are joined by linear cross-fades labeled as
//! transitions.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::stream::{FrameLabel, SensorStream};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// `freq` in Hz.
    Sine { freq: f64, amp: f64 },
    Square { freq: f64, amp: f64 },
    GaussianNoise { sigma: f64 },
}

impl Generator {
    fn validate(&self, rate: f64) -> Result<()> {
        let ok = match *self {
            Generator::Sine { freq, amp } | Generator::Square { freq, amp } => {
                freq > 0.0 && freq < rate / 2.0 && amp > 0.0 && amp.is_finite()
            }
            Generator::GaussianNoise { sigma } => sigma > 0.0 && sigma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid generator {self:?} at {rate} Hz"
            )))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, t: f64, phase: f64, rng: &mut R) -> f64 {
        match *self {
            Generator::Sine { freq, amp } => amp * (TAU * freq * t + phase).sin(),
            Generator::Square { freq, amp } => {
                if (TAU * freq * t + phase).sin() >= 0.0 {
                    amp
                } else {
                    -amp
                }
            }
            Generator::GaussianNoise { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSegment {
    pub class: u16,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub channels: usize,
    pub rate_hz: f64,
    /// Generator per activity id.
    pub classes: Vec<Generator>,
    pub segments: Vec<SynthSegment>,
    /// Cross-fade length between consecutive segments, in frames.
    pub ramp: usize,
    /// Standard deviation of additive noise on every sample.
    pub jitter: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 {
            return bad("synthetic stream needs at least one channel".into());
        }
        if !(self.rate_hz > 0.0) {
            return bad(format!("rate {} must be positive", self.rate_hz));
        }
        if self.classes.len() < 2 {
            return bad("synthetic stream needs at least two activity classes".into());
        }
        for g in &self.classes {
            g.validate(self.rate_hz)?;
        }
        if self.segments.is_empty() {
            return bad("synthetic stream needs at least one segment".into());
        }
        for (i, s) in self.segments.iter().enumerate() {
            if usize::from(s.class) >= self.classes.len() || s.frames == 0 {
                return bad(format!("segment {i} is invalid: {s:?}"));
            }
            if i > 0 && self.segments[i - 1].class == s.class {
                return bad(format!("segments {} and {i} repeat class {}", i - 1, s.class));
            }
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad(format!("jitter {} must be non-negative", self.jitter));
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.segments.iter().map(|s| s.frames).sum::<usize>()
            + self.ramp * (self.segments.len() - 1)
    }

    /// Default class names: the generator kind and its index.
    pub fn class_names(&self) -> Vec<String> {
        self.classes
            .iter()
            .enumerate()
            .map(|(i, g)| match g {
                Generator::Sine { .. } => format!("sine{i}"),
                Generator::Square { .. } => format!("square{i}"),
                Generator::GaussianNoise { .. } => format!("noise{i}"),
            })
            .collect()
    }
}

/// Draws `count` segments with lengths in `min..=max` frames over
/// `n_classes` classes, never repeating a class back to back.
pub fn random_segments<R: Rng + ?Sized>(
    n_classes: u16,
    count: usize,
    min: usize,
    max: usize,
    rng: &mut R,
) -> Result<Vec<SynthSegment>> {
    if n_classes < 2 || min == 0 || min > max {
        return Err(Error::Config(format!(
            "cannot draw segments over {n_classes} classes with lengths {min}..={max}"
        )));
    }
    let mut out: Vec<SynthSegment> = Vec::with_capacity(count);
    for _ in 0..count {
        let class = match out.last() {
            None => rng.random_range(0..n_classes),
            Some(prev) => {
                let c = rng.random_range(0..n_classes - 1);
                if c >= prev.class {
                    c + 1
                } else {
                    c
                }
            }
        };
        out.push(SynthSegment {
            class,
            frames: rng.random_range(min..=max),
        });
    }
    Ok(out)
}

/// Renders a stream from `spec`. Every segment draws its own random phase
/// per channel, so repeated segments of one class are not identical.
pub fn synth_stream<T: Scalar, R: Rng + ?Sized>(
    spec: &SynthSpec,
    id: impl Into<String>,
    rng: &mut R,
) -> Result<SensorStream<T>> {
    spec.validate()?;
    let n = spec.total_frames();
    let ch = spec.channels;
    let phases: Vec<Vec<f64>> = spec
        .segments
        .iter()
        .map(|_| (0..ch).map(|_| rng.random::<f64>() * TAU).collect())
        .collect();
    // (segment, first frame, last frame exclusive) of each pure part
    let mut starts = Vec::with_capacity(spec.segments.len());
    let mut t = 0;
    for s in &spec.segments {
        starts.push(t);
        t += s.frames + spec.ramp;
    }
    let mut data = vec![0.0f64; ch * n];
    let mut labels = Vec::with_capacity(n);
    for (k, seg) in spec.segments.iter().enumerate() {
        let g = spec.classes[usize::from(seg.class)];
        for f in starts[k]..starts[k] + seg.frames {
            let time = f as f64 / spec.rate_hz;
            for c in 0..ch {
                data[c * n + f] = g.sample(time, phases[k][c], rng);
            }
            labels.push(FrameLabel::Activity(seg.class));
        }
        if k + 1 < spec.segments.len() {
            let next = spec.classes[usize::from(spec.segments[k + 1].class)];
            let r0 = starts[k] + seg.frames;
            for j in 0..spec.ramp {
                let f = r0 + j;
                let w = (j + 1) as f64 / (spec.ramp + 1) as f64;
                let time = f as f64 / spec.rate_hz;
                for c in 0..ch {
                    let a = g.sample(time, phases[k][c], rng);
                    let b = next.sample(time, phases[k + 1][c], rng);
                    data[c * n + f] = (1.0 - w) * a + w * b;
                }
                labels.push(FrameLabel::Transition);
            }
        }
    }
    if spec.jitter > 0.0 {
        for v in data.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += spec.jitter * z;
        }
    }
    let frames = Tensor::new(vec![ch, n], data.into_iter().map(T::of).collect())?;
    SensorStream::new(id, 0, spec.rate_hz, frames, labels, spec.class_names())
}
