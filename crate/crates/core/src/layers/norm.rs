use crate::error::Result;
use crate::params::{Mode, ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tape::{RunningStats, Var};
use crate::tensor::Tensor;

/// Batch normalization over the channel axis.
///
/// Training passes normalize with batch statistics and queue a running
/// average update on the session; inference passes only read the running
/// statistics, so their output does not depend on batch composition.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.99;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one()), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true),
            running_mean: store.add(
                format!("{name}.running_mean"),
                Tensor::zeros(&[channels]),
                false,
            ),
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::full(&[channels], T::one()),
                false,
            ),
            channels,
            momentum: Self::DEFAULT_MOMENTUM,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma)?;
        let beta = s.param(self.beta)?;
        let eps = T::of(self.epsilon);
        match s.mode() {
            Mode::Train => {
                let (y, stats) = s.tape.batch_norm(x, gamma, beta, eps, None)?;
                if let Some(stats) = stats {
                    s.record_bn(self.running_mean, self.running_var, T::of(self.momentum), stats);
                }
                Ok(y)
            }
            Mode::Inference => {
                let store = s.store();
                let running = RunningStats {
                    mean: store.get(self.running_mean).data(),
                    var: store.get(self.running_var).data(),
                };
                let (y, _) = s.tape.batch_norm(x, gamma, beta, eps, Some(running))?;
                Ok(y)
            }
        }
    }
}
