use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{uniform, Mode, ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Gate order used for every per-gate array: input, forget, candidate, output.
const GATES: [&str; 4] = ["i", "f", "c", "o"];

/// LSTM cell:
///
/// ```text
/// i  = sigmoid(W_i x + U_i h + b_i)
/// f  = sigmoid(W_f x + U_f h + b_f)
/// c~ = tanh(W_c x + U_c h + b_c)
/// c' = f * c + i * c~
/// o  = sigmoid(W_o x + U_o h + b_o)
/// h' = o * tanh(c')
/// ```
#[derive(Clone, Debug)]
pub struct LstmCell {
    /// `W_*`: `[hidden × input]`
    pub w: [ParamId; 4],
    /// `U_*`: `[hidden × hidden]`
    pub u: [ParamId; 4],
    /// `b_*`: `[hidden]`
    pub b: [ParamId; 4],
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    /// Weights uniform in `±sqrt(1/hidden)`, forget bias 1, other biases 0.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        let bound = (1.0 / hidden as f64).sqrt();
        let w = GATES.map(|g| {
            store.add(format!("{name}.W_{g}"), uniform(rng, &[hidden, input], bound), true)
        });
        let u = GATES.map(|g| {
            store.add(format!("{name}.U_{g}"), uniform(rng, &[hidden, hidden], bound), true)
        });
        let b = GATES.map(|g| {
            let init = if g == "f" { T::one() } else { T::zero() };
            store.add(format!("{name}.b_{g}"), Tensor::full(&[hidden], init), true)
        });
        LstmCell {
            w,
            u,
            b,
            input,
            hidden,
        }
    }

    /// One step on `x: [batch × input]`, `h, c: [batch × hidden]`.
    pub fn step<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let xs = s.tape.shape(x);
        if xs.len() != 2 || xs[1] != self.input {
            return Err(Error::dim(
                "lstm_step",
                format!("input {xs:?}, cell expects width {}", self.input),
            ));
        }
        let batch = xs[0];
        for (what, v) in [("h", h), ("c", c)] {
            if s.tape.shape(v) != [batch, self.hidden] {
                return Err(Error::dim(
                    "lstm_step",
                    format!(
                        "{what} {:?}, expected [{batch}, {}]",
                        s.tape.shape(v),
                        self.hidden
                    ),
                ));
            }
        }
        let mut pre = [x; 4];
        for g in 0..4 {
            let w = s.param(self.w[g])?;
            let u = s.param(self.u[g])?;
            let b = s.param(self.b[g])?;
            let wx = s.tape.linear(x, w, Some(b))?;
            let uh = s.tape.linear(h, u, None)?;
            pre[g] = s.tape.add(wx, uh)?;
        }
        let i = s.tape.sigmoid(pre[0])?;
        let f = s.tape.sigmoid(pre[1])?;
        let cand = s.tape.tanh(pre[2])?;
        let o = s.tape.sigmoid(pre[3])?;
        let fc = s.tape.mul(f, c)?;
        let ic = s.tape.mul(i, cand)?;
        let c_new = s.tape.add(fc, ic)?;
        let tc = s.tape.tanh(c_new)?;
        let h_new = s.tape.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    /// Folds the cell over `seq: [batch × time × input]` from zero state and
    /// returns every hidden state as `[batch × time × hidden]`.
    pub fn sequence<T: Scalar>(&self, s: &mut Session<'_, T>, seq: Var) -> Result<Var> {
        let sh = s.tape.shape(seq).to_vec();
        if sh.len() != 3 {
            return Err(Error::dim("lstm_sequence", format!("input {sh:?}")));
        }
        let (batch, steps) = (sh[0], sh[1]);
        let mut h = s.input(Tensor::zeros(&[batch, self.hidden]))?;
        let mut c = s.input(Tensor::zeros(&[batch, self.hidden]))?;
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = s.tape.select_time(seq, t)?;
            (h, c) = self.step(s, x, h, c)?;
            outs.push(h);
        }
        s.tape.stack_time(&outs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LstmKind {
    Unidirectional,
    Bidirectional,
}

#[derive(Clone, Debug)]
pub enum LstmLayer {
    Uni(LstmCell),
    Bi { fwd: LstmCell, bwd: LstmCell },
}

impl LstmLayer {
    pub fn output_width(&self) -> usize {
        match self {
            LstmLayer::Uni(c) => c.hidden,
            LstmLayer::Bi { fwd, .. } => 2 * fwd.hidden,
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            LstmLayer::Uni(c) => c.input,
            LstmLayer::Bi { fwd, .. } => fwd.input,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, seq: Var) -> Result<Var> {
        match self {
            LstmLayer::Uni(c) => c.sequence(s, seq),
            LstmLayer::Bi { fwd, bwd } => blstm(s, seq, fwd, bwd),
        }
    }
}

/// Bidirectional layer: forward and time-reversed passes, concatenated per
/// timestep as `[forward | backward]`.
fn blstm<T: Scalar>(
    s: &mut Session<'_, T>,
    seq: Var,
    fwd: &LstmCell,
    bwd: &LstmCell,
) -> Result<Var> {
    if fwd.hidden != bwd.hidden {
        return Err(Error::dim(
            "blstm_sequence",
            format!("hidden sizes {} and {}", fwd.hidden, bwd.hidden),
        ));
    }
    let f = fwd.sequence(s, seq)?;
    let rev = s.tape.reverse_time(seq)?;
    let b = bwd.sequence(s, rev)?;
    let b = s.tape.reverse_time(b)?;
    s.tape.concat_last(f, b)
}

/// LSTM layers with identity residual connections between layers whose
/// input and output widths agree. A layer that changes width (the first one,
/// fed by the convolutional stack) has no residual.
#[derive(Clone, Debug)]
pub struct ResidualLstmStack {
    pub layers: Vec<LstmLayer>,
}

impl ResidualLstmStack {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: &[usize],
        kind: LstmKind,
    ) -> Result<Self> {
        let Some(&h0) = hidden.first() else {
            return Err(Error::Config("LSTM stack needs at least one layer".into()));
        };
        if hidden.iter().any(|&h| h != h0) {
            return Err(Error::dim(
                "residual_lstm_stack",
                format!("layers must share one hidden size, got {hidden:?}"),
            ));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input;
        for (k, &h) in hidden.iter().enumerate() {
            let layer = match kind {
                LstmKind::Unidirectional => {
                    LstmLayer::Uni(LstmCell::new(store, rng, &format!("{name}.{k}"), width, h))
                }
                LstmKind::Bidirectional => LstmLayer::Bi {
                    fwd: LstmCell::new(store, rng, &format!("{name}.{k}.fwd"), width, h),
                    bwd: LstmCell::new(store, rng, &format!("{name}.{k}.bwd"), width, h),
                },
            };
            width = layer.output_width();
            layers.push(layer);
        }
        Ok(ResidualLstmStack { layers })
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, LstmLayer::output_width)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, seq: Var) -> Result<Var> {
        let mut x = seq;
        for layer in &self.layers {
            let y = layer.forward(s, x)?;
            x = if layer.input_width() == layer.output_width() {
                s.tape.add(y, x)?
            } else {
                y
            };
        }
        Ok(x)
    }
}

/// Eager single step with the cell's parameters read from `store`.
pub fn lstm_step<T: Scalar>(
    store: &ParamStore<T>,
    cell: &LstmCell,
    x: &Tensor<T>,
    h_prev: &Tensor<T>,
    c_prev: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut s = Session::new(store, Mode::Inference);
    let (x, h, c) = (s.input(x.clone())?, s.input(h_prev.clone())?, s.input(c_prev.clone())?);
    let (h, c) = cell.step(&mut s, x, h, c)?;
    Ok((s.tape.value(h).clone(), s.tape.value(c).clone()))
}

/// Eager sequence pass over `[batch × time × input]`.
pub fn lstm_sequence<T: Scalar>(
    store: &ParamStore<T>,
    cell: &LstmCell,
    seq: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut s = Session::new(store, Mode::Inference);
    let x = s.input(seq.clone())?;
    let y = cell.sequence(&mut s, x)?;
    Ok(s.tape.value(y).clone())
}
