use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{uniform, ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

use super::{glorot_bound, BatchNorm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

/// Fully connected layer: `activation(batch_norm(x · Wᵀ + b))`, with the
/// batch norm optional.
#[derive(Clone, Debug)]
pub struct Fc {
    pub weight: ParamId,
    pub bias: ParamId,
    pub norm: Option<BatchNorm>,
    pub activation: Activation,
    pub input: usize,
    pub output: usize,
}

impl Fc {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        input: usize,
        output: usize,
        batch_norm: bool,
        activation: Activation,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, &[output, input], glorot_bound(input, output)),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[output]), true);
        let norm = batch_norm.then(|| BatchNorm::new(store, &format!("{name}.bn"), output));
        Fc {
            weight,
            bias,
            norm,
            activation,
            input,
            output,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let xs = s.tape.shape(x);
        if xs.len() != 2 || xs[1] != self.input {
            return Err(Error::dim(
                "fc_forward",
                format!("input {xs:?}, layer expects width {}", self.input),
            ));
        }
        let w = s.param(self.weight)?;
        let b = s.param(self.bias)?;
        let mut y = s.tape.linear(x, w, Some(b))?;
        if let Some(bn) = &self.norm {
            y = bn.forward(s, y)?;
        }
        match self.activation {
            Activation::Relu => s.tape.relu(y),
            Activation::Sigmoid => s.tape.sigmoid(y),
            Activation::None => Ok(y),
        }
    }
}
