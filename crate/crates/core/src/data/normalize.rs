use serde::{Deserialize, Serialize};

use super::stream::SensorStream;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel mean and (population) standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Pools every frame of `streams`. Pass the training split only.
    pub fn fit<T: Scalar>(streams: &[SensorStream<T>]) -> Result<Self> {
        let ch = match streams.first() {
            Some(s) => s.channels(),
            None => return Err(Error::Contract("no streams to fit normalization on".into())),
        };
        let mut n = 0usize;
        let mut sum = vec![0.0; ch];
        for s in streams {
            if s.channels() != ch {
                return Err(Error::dim(
                    "normalize",
                    format!("stream {} has {} channels, expected {ch}", s.id, s.channels()),
                ));
            }
            n += s.len();
            for (c, acc) in sum.iter_mut().enumerate() {
                *acc += s.channel(c).iter().map(|v| v.to_f64_lossy()).sum::<f64>();
            }
        }
        if n == 0 {
            return Err(Error::Contract("no frames to fit normalization on".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|v| v / n as f64).collect();
        let mut sq = vec![0.0; ch];
        for s in streams {
            for (c, acc) in sq.iter_mut().enumerate() {
                *acc += s
                    .channel(c)
                    .iter()
                    .map(|v| (v.to_f64_lossy() - mean[c]).powi(2))
                    .sum::<f64>();
            }
        }
        let std = sq.iter().map(|v| (v / n as f64).sqrt()).collect();
        let stats = NormStats { mean, std };
        stats.check()?;
        Ok(stats)
    }

    fn check(&self) -> Result<()> {
        for (c, &s) in self.std.iter().enumerate() {
            if !(s > 1e-12 && s.is_finite()) {
                return Err(Error::Contract(format!(
                    "channel {c} has zero variance and cannot be normalized"
                )));
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Z-scores every channel of `stream`.
    pub fn apply<T: Scalar>(&self, stream: &SensorStream<T>) -> Result<SensorStream<T>> {
        self.check()?;
        if stream.channels() != self.channels() {
            return Err(Error::dim(
                "normalize",
                format!("stream has {} channels, stats have {}", stream.channels(), self.channels()),
            ));
        }
        let mut data = Vec::with_capacity(stream.frames.len());
        for c in 0..stream.channels() {
            let (m, s) = (self.mean[c], self.std[c]);
            data.extend(
                stream
                    .channel(c)
                    .iter()
                    .map(|v| T::of((v.to_f64_lossy() - m) / s)),
            );
        }
        Ok(SensorStream {
            frames: Tensor::new(stream.frames.shape().to_vec(), data)?,
            ..stream.clone()
        })
    }
}

pub fn normalize<T: Scalar>(stream: &SensorStream<T>, stats: &NormStats) -> Result<SensorStream<T>> {
    stats.apply(stream)
}
