//! Adaptive-moment (Adam) optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    step_count: u64,
    first: Vec<Option<Vec<T>>>,
    second: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        let c = &config;
        let valid = c.learning_rate > 0.0
            && (0.0..1.0).contains(&c.beta1)
            && (0.0..1.0).contains(&c.beta2)
            && c.epsilon > 0.0;
        if !valid {
            return Err(Error::Config(format!("invalid optimizer settings {c:?}")));
        }
        Ok(OptimizerState {
            config,
            step_count: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update of every parameter that has a gradient. All gradients are
    /// validated before any parameter is touched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Vec<T>)]) -> Result<()> {
        for (id, g) in grads {
            let p = store.param(*id);
            if g.len() != p.tensor.len() {
                return Err(Error::dim(
                    "optimizer_step",
                    format!(
                        "gradient of {} has {} entries, parameter has {}",
                        p.name,
                        g.len(),
                        p.tensor.len()
                    ),
                ));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter {}", p.name)));
            }
        }
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        self.step_count += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let t = self.step_count as i32;
        let bc1 = T::one() - T::of(c.beta1.powi(t));
        let bc2 = T::one() - T::of(c.beta2.powi(t));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.epsilon);
        for (id, g) in grads {
            let i = id.index();
            let n = g.len();
            let m = self.first[i].get_or_insert_with(|| vec![T::zero(); n]);
            let v = self.second[i].get_or_insert_with(|| vec![T::zero(); n]);
            let w = store.get_mut(*id).data_mut();
            for k in 0..n {
                m[k] = b1 * m[k] + (T::one() - b1) * g[k];
                v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                w[k] = w[k] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
