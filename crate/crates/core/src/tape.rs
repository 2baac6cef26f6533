//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and enough
//! information to run its local backward rule. Nodes are only ever appended,
//! so the tape is topologically ordered by construction and the backward pass
//! is a single reverse sweep.

use crate::error::{Error, Result};
use crate::kernels::{self, axpy, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The pointwise operations exposed through [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Abs,
    Neg,
}

impl Elementwise {
    pub fn arity(self) -> usize {
        match self {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Elementwise::Add => "add",
            Elementwise::Sub => "sub",
            Elementwise::Mul => "mul",
            Elementwise::Sigmoid => "sigmoid",
            Elementwise::Tanh => "tanh",
            Elementwise::Relu => "relu",
            Elementwise::Exp => "exp",
            Elementwise::Abs => "abs",
            Elementwise::Neg => "neg",
        }
    }
}

/// Batch-normalization statistics used by an inference-mode pass.
#[derive(Clone, Copy, Debug)]
pub struct RunningStats<'a, T> {
    pub mean: &'a [T],
    pub var: &'a [T],
}

/// Per-channel batch statistics observed by a training-mode pass.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, used to update running estimates.
    pub var: Vec<T>,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Binary(Elementwise, Var, Var),
    Unary(Elementwise, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Conv1d {
        x: Var,
        k: Var,
        b: Var,
        dilation: usize,
        stride: usize,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        x_hat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    SwapLast(Var),
    SelectTime(Var, usize),
    StackTime(Vec<Var>),
    ConcatLast(Var, Var),
    ReverseTime(Var),
    MeanTime(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<T: Scalar>(op: &str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op.to_string()))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var> {
        check_finite(name, &data)?;
        let rg = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        Ok(self.push(Tensor::from_parts(shape, data), op, rg))
    }

    /// Records a leaf. The tensor's `requires_grad` flag decides whether the
    /// backward pass reports a gradient for it.
    pub fn leaf(&mut self, t: Tensor<T>) -> Result<Var> {
        check_finite("leaf", t.data())?;
        let rg = t.requires_grad;
        let mut t = t;
        t.grad = None;
        Ok(self.push(t, Op::Leaf, rg))
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        let mut t = t;
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![T::zero(); m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut c, m, k, n);
        self.push_checked("matmul", vec![m, n], c, Op::MatMul(a, b), &[a, b])
    }

    /// `x · wᵀ + b` for `x: [batch × in]`, `w: [out × in]`, `b: [out]`; the
    /// bias is added to every row.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::dim("linear", format!("input {sx:?}, weight {sw:?}")));
        }
        let (batch, inp, out) = (sx[0], sx[1], sw[0]);
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(Error::dim(
                    "linear",
                    format!("bias {:?}, expected [{out}]", self.shape(b)),
                ));
            }
        }
        let wt = kernels::transpose(self.value(w).data(), out, inp);
        let mut y = vec![T::zero(); batch * out];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in y.chunks_mut(out) {
                row.copy_from_slice(bias);
            }
        }
        kernels::matmul_acc(self.value(x).data(), &wt, &mut y, batch, inp, out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push_checked("linear", vec![batch, out], y, Op::Linear { x, w, b }, &inputs)
    }

    /// Applies a pointwise operation. Binary operations require identical
    /// operand shapes.
    pub fn elementwise(&mut self, op: Elementwise, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != op.arity() {
            return Err(Error::Contract(format!(
                "{} takes {} operand(s), got {}",
                op.name(),
                op.arity(),
                inputs.len()
            )));
        }
        if op.arity() == 2 {
            let (a, b) = (inputs[0], inputs[1]);
            if self.shape(a) != self.shape(b) {
                return Err(Error::dim(
                    op.name(),
                    format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
                ));
            }
            let (va, vb) = (self.value(a).data(), self.value(b).data());
            let data: Vec<T> = match op {
                Elementwise::Add => va.iter().zip(vb).map(|(&x, &y)| x + y).collect(),
                Elementwise::Sub => va.iter().zip(vb).map(|(&x, &y)| x - y).collect(),
                Elementwise::Mul => va.iter().zip(vb).map(|(&x, &y)| x * y).collect(),
                _ => unreachable!(),
            };
            let shape = self.shape(a).to_vec();
            self.push_checked(op.name(), shape, data, Op::Binary(op, a, b), &[a, b])
        } else {
            let a = inputs[0];
            let f: fn(T) -> T = match op {
                Elementwise::Sigmoid => kernels::sigmoid,
                Elementwise::Tanh => T::tanh,
                Elementwise::Relu => |x: T| if x > T::zero() { x } else { T::zero() },
                Elementwise::Exp => T::exp,
                Elementwise::Abs => T::abs,
                Elementwise::Neg => |x: T| -x,
                _ => unreachable!(),
            };
            let data: Vec<T> = self.value(a).data().iter().map(|&x| f(x)).collect();
            let shape = self.shape(a).to_vec();
            self.push_checked(op.name(), shape, data, Op::Unary(op, a), &[a])
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Mul, &[a, b])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Tanh, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Relu, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Exp, &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Abs, &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.elementwise(Elementwise::Neg, &[a])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push_checked("scale", shape, data, Op::Scale(a, s), &[a])
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        self.push_checked("sum", vec![1], vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s: T = v.data().iter().copied().sum();
        let m = s / T::of_usize(v.len());
        self.push_checked("mean", vec![1], vec![m], Op::Mean(a), &[a])
    }

    /// Sums over the last axis: `[.., f] -> [..]` (`[f] -> [1]`).
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let f = *shape.last().unwrap();
        let data: Vec<T> = self
            .value(a)
            .data()
            .chunks(f)
            .map(|r| r.iter().copied().sum())
            .collect();
        let out_shape = if shape.len() == 1 {
            vec![1]
        } else {
            shape[..shape.len() - 1].to_vec()
        };
        self.push_checked("row_sum", out_shape, data, Op::RowSum(a), &[a])
    }

    /// Valid dilated convolution over `[batch × channels × time]` with kernels
    /// `[out × in × width]` and bias `[out]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        k: Var,
        b: Var,
        dilation: usize,
        stride: usize,
    ) -> Result<Var> {
        let (sx, sk, sb) = (self.shape(x), self.shape(k), self.shape(b));
        if sx.len() != 3 || sk.len() != 3 || sk[1] != sx[1] || sb != [sk[0]] {
            return Err(Error::dim(
                "conv1d",
                format!("input {sx:?}, kernels {sk:?}, bias {sb:?}"),
            ));
        }
        if dilation == 0 || stride == 0 {
            return Err(Error::Contract(
                "conv1d dilation and stride must be positive".into(),
            ));
        }
        let width = sk[2];
        let Some(out_len) = kernels::conv_out_len(sx[2], width, dilation, stride) else {
            return Err(Error::SequenceTooShort {
                op: "conv1d",
                required: (width - 1) * dilation + 1,
                actual: sx[2],
            });
        };
        let g = ConvGeom {
            batch: sx[0],
            in_ch: sx[1],
            out_ch: sk[0],
            width,
            len: sx[2],
            out_len,
            dilation,
            stride,
        };
        let out = kernels::conv1d_forward(
            self.value(x).data(),
            self.value(k).data(),
            self.value(b).data(),
            &g,
        );
        self.push_checked(
            "conv1d",
            vec![g.batch, g.out_ch, out_len],
            out,
            Op::Conv1d {
                x,
                k,
                b,
                dilation,
                stride,
            },
            &[x, k, b],
        )
    }

    /// Non-overlapping temporal max-pool over `[batch × channels × time]`;
    /// trailing frames that do not fill a window are dropped. Ties resolve to
    /// the first maximal index.
    pub fn max_pool1d(&mut self, x: Var, pool: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::dim("max_pool1d", format!("input {s:?}")));
        }
        if pool == 0 {
            return Err(Error::Contract("pool size must be positive".into()));
        }
        if s[2] < pool {
            return Err(Error::SequenceTooShort {
                op: "max_pool1d",
                required: pool,
                actual: s[2],
            });
        }
        let out_len = s[2] / pool;
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(s[0] * s[1] * out_len);
        let mut argmax = Vec::with_capacity(out.capacity());
        for row in 0..s[0] * s[1] {
            let base = row * s[2];
            for w in 0..out_len {
                let start = base + w * pool;
                let mut best = start;
                for i in start + 1..start + pool {
                    if xs[i] > xs[best] {
                        best = i;
                    }
                }
                out.push(xs[best]);
                argmax.push(best);
            }
        }
        self.push_checked(
            "max_pool1d",
            vec![s[0], s[1], out_len],
            out,
            Op::MaxPool1d { x, argmax },
            &[x],
        )
    }

    /// Batch normalization over the channel axis (axis 1) of `[batch × f]` or
    /// `[batch × channels × time]` input.
    ///
    /// With `running = None` the batch statistics are used (training) and
    /// returned so the caller can update its running estimates; otherwise the
    /// supplied statistics are treated as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
        running: Option<RunningStats<'_, T>>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 && s.len() != 3 {
            return Err(Error::dim("batch_norm", format!("input {s:?}")));
        }
        let (batch, ch) = (s[0], s[1]);
        let inner = if s.len() == 3 { s[2] } else { 1 };
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] {
            return Err(Error::dim(
                "batch_norm",
                format!(
                    "gamma {:?} / beta {:?} for {ch} channels",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let xs = self.value(x).data();
        let idx = |b: usize, c: usize, t: usize| (b * ch + c) * inner + t;
        let (mean, var_b, stats) = match running {
            None => {
                if batch < 2 {
                    return Err(Error::Contract(
                        "batch_norm in training mode needs a batch of at least 2".into(),
                    ));
                }
                let n = T::of_usize(batch * inner);
                let mut mean = vec![T::zero(); ch];
                let mut var = vec![T::zero(); ch];
                for c in 0..ch {
                    let mut acc = T::zero();
                    for b in 0..batch {
                        for t in 0..inner {
                            acc = acc + xs[idx(b, c, t)];
                        }
                    }
                    let m = acc / n;
                    let mut sq = T::zero();
                    for b in 0..batch {
                        for t in 0..inner {
                            let d = xs[idx(b, c, t)] - m;
                            sq = sq + d * d;
                        }
                    }
                    mean[c] = m;
                    var[c] = sq / n;
                }
                let unbiased = var
                    .iter()
                    .map(|&v| v * n / (n - T::one()))
                    .collect::<Vec<_>>();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            Some(r) => {
                if r.mean.len() != ch || r.var.len() != ch {
                    return Err(Error::dim("batch_norm", "running statistics length"));
                }
                (r.mean.to_vec(), r.var.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var_b.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, be) = (self.value(gamma).data(), self.value(beta).data());
        let mut x_hat = vec![T::zero(); xs.len()];
        let mut y = vec![T::zero(); xs.len()];
        for b in 0..batch {
            for c in 0..ch {
                for t in 0..inner {
                    let i = idx(b, c, t);
                    let h = (xs[i] - mean[c]) * inv_std[c];
                    x_hat[i] = h;
                    y[i] = g[c] * h + be[c];
                }
            }
        }
        let train = stats.is_some();
        let v = self.push_checked(
            "batch_norm",
            s,
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        )?;
        Ok((v, stats))
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn swap_last(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::dim("swap_last", format!("input {s:?}")));
        }
        let (b, p, q) = (s[0], s[1], s[2]);
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(xs.len());
        for bi in 0..b {
            out.extend(kernels::transpose(&xs[bi * p * q..(bi + 1) * p * q], p, q));
        }
        self.push_checked("swap_last", vec![b, q, p], out, Op::SwapLast(x), &[x])
    }

    /// `[batch × time × f] -> [batch × f]` at time index `t`.
    pub fn select_time(&mut self, x: Var, t: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || t >= s[1] {
            return Err(Error::dim("select_time", format!("index {t} of {s:?}")));
        }
        let (b, tl, f) = (s[0], s[1], s[2]);
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(b * f);
        for bi in 0..b {
            out.extend_from_slice(&xs[(bi * tl + t) * f..][..f]);
        }
        self.push_checked("select_time", vec![b, f], out, Op::SelectTime(x, t), &[x])
    }

    /// Stacks `[batch × f]` steps into `[batch × time × f]`.
    pub fn stack_time(&mut self, steps: &[Var]) -> Result<Var> {
        let Some(&first) = steps.first() else {
            return Err(Error::Contract("stack_time of an empty sequence".into()));
        };
        let s0 = self.shape(first).to_vec();
        if s0.len() != 2 || steps.iter().any(|&v| self.shape(v) != s0.as_slice()) {
            return Err(Error::dim("stack_time", "steps must share a [batch × f] shape"));
        }
        let (b, f, tl) = (s0[0], s0[1], steps.len());
        let mut out = vec![T::zero(); b * tl * f];
        for (t, &v) in steps.iter().enumerate() {
            let vs = self.value(v).data();
            for bi in 0..b {
                out[(bi * tl + t) * f..][..f].copy_from_slice(&vs[bi * f..][..f]);
            }
        }
        self.push_checked(
            "stack_time",
            vec![b, tl, f],
            out,
            Op::StackTime(steps.to_vec()),
            steps,
        )
    }

    /// Concatenates along the last axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let r = sa.len();
        if r != sb.len() || sa[..r - 1] != sb[..r - 1] {
            return Err(Error::dim("concat_last", format!("{sa:?} with {sb:?}")));
        }
        let (fa, fb) = (sa[r - 1], sb[r - 1]);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let rows = va.len() / fa;
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for i in 0..rows {
            out.extend_from_slice(&va[i * fa..][..fa]);
            out.extend_from_slice(&vb[i * fb..][..fb]);
        }
        let mut shape = sa;
        shape[r - 1] = fa + fb;
        self.push_checked("concat_last", shape, out, Op::ConcatLast(a, b), &[a, b])
    }

    /// Reverses the time axis of `[batch × time × f]`.
    pub fn reverse_time(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::dim("reverse_time", format!("input {s:?}")));
        }
        let (b, tl, f) = (s[0], s[1], s[2]);
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(xs.len());
        for bi in 0..b {
            for t in (0..tl).rev() {
                out.extend_from_slice(&xs[(bi * tl + t) * f..][..f]);
            }
        }
        self.push_checked("reverse_time", s, out, Op::ReverseTime(x), &[x])
    }

    /// Temporal mean: `[batch × time × f] -> [batch × f]`.
    pub fn mean_time(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::dim("mean_time", format!("input {s:?}")));
        }
        let (b, tl, f) = (s[0], s[1], s[2]);
        let xs = self.value(x).data();
        let inv = T::one() / T::of_usize(tl);
        let mut out = vec![T::zero(); b * f];
        for bi in 0..b {
            let o = &mut out[bi * f..][..f];
            for t in 0..tl {
                axpy(T::one(), &xs[(bi * tl + t) * f..][..f], o);
            }
            o.iter_mut().for_each(|v| *v = *v * inv);
        }
        self.push_checked("mean_time", vec![b, f], out, Op::MeanTime(x), &[x])
    }

    /// Runs the reverse sweep from a one-element `loss`, seeding
    /// `d loss / d loss = 1` and summing contributions over all paths.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            if let Op::Leaf = node.op {
                check_finite("gradient", &g)?;
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let zero = T::zero();
        let one = T::one();
        // Lazily allocates the gradient slot of `v` when it participates.
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                if self.nodes[v.0].requires_grad {
                    let n = self.nodes[v.0].value.len();
                    Some(grads[v.0].get_or_insert_with(|| vec![zero; n]).as_mut_slice())
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = slot!(*a) {
                    let bt = kernels::transpose(vb, k, n);
                    kernels::matmul_acc(g, &bt, da, m, n, k);
                }
                if let Some(db) = slot!(*b) {
                    let at = kernels::transpose(va, m, k);
                    kernels::matmul_acc(&at, g, db, k, m, n);
                }
            }
            Op::Linear { x, w, b } => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let (batch, inp, out) = (sx[0], sx[1], sw[0]);
                let (vx, vw) = (self.value(*x).data(), self.value(*w).data());
                if let Some(dx) = slot!(*x) {
                    kernels::matmul_acc(g, vw, dx, batch, out, inp);
                }
                if let Some(dw) = slot!(*w) {
                    let gt = kernels::transpose(g, batch, out);
                    kernels::matmul_acc(&gt, vx, dw, out, batch, inp);
                }
                if let Some(b) = b {
                    if let Some(db) = slot!(*b) {
                        for row in g.chunks(out) {
                            axpy(one, row, db);
                        }
                    }
                }
            }
            Op::Binary(op, a, b) => {
                let (a, b) = (*a, *b);
                match op {
                    Elementwise::Add => {
                        if let Some(da) = slot!(a) {
                            axpy(one, g, da);
                        }
                        if let Some(db) = slot!(b) {
                            axpy(one, g, db);
                        }
                    }
                    Elementwise::Sub => {
                        if let Some(da) = slot!(a) {
                            axpy(one, g, da);
                        }
                        if let Some(db) = slot!(b) {
                            axpy(-one, g, db);
                        }
                    }
                    Elementwise::Mul => {
                        let (va, vb) = (self.value(a).data(), self.value(b).data());
                        if let Some(da) = slot!(a) {
                            for ((d, &gi), &bi) in da.iter_mut().zip(g).zip(vb) {
                                *d = *d + gi * bi;
                            }
                        }
                        if let Some(db) = slot!(b) {
                            for ((d, &gi), &ai) in db.iter_mut().zip(g).zip(va) {
                                *d = *d + gi * ai;
                            }
                        }
                    }
                    _ => unreachable!(),
                }
            }
            Op::Unary(op, a) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                let Some(da) = slot!(*a) else { return };
                for i in 0..g.len() {
                    let local = match op {
                        Elementwise::Sigmoid => y[i] * (one - y[i]),
                        Elementwise::Tanh => one - y[i] * y[i],
                        Elementwise::Relu => {
                            if x[i] > zero {
                                one
                            } else {
                                zero
                            }
                        }
                        Elementwise::Exp => y[i],
                        Elementwise::Abs => {
                            if x[i] > zero {
                                one
                            } else if x[i] < zero {
                                -one
                            } else {
                                zero
                            }
                        }
                        Elementwise::Neg => -one,
                        _ => unreachable!(),
                    };
                    da[i] = da[i] + g[i] * local;
                }
            }
            Op::Scale(a, s) => {
                if let Some(da) = slot!(*a) {
                    axpy(*s, g, da);
                }
            }
            Op::Sum(a) => {
                if let Some(da) = slot!(*a) {
                    da.iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
            Op::Mean(a) => {
                let n = T::of_usize(self.value(*a).len());
                if let Some(da) = slot!(*a) {
                    let gi = g[0] / n;
                    da.iter_mut().for_each(|d| *d = *d + gi);
                }
            }
            Op::RowSum(a) => {
                let f = *self.shape(*a).last().unwrap();
                if let Some(da) = slot!(*a) {
                    for (row, &gi) in da.chunks_mut(f).zip(g) {
                        row.iter_mut().for_each(|d| *d = *d + gi);
                    }
                }
            }
            Op::Conv1d {
                x,
                k,
                b,
                dilation,
                stride,
            } => {
                let (sx, sk) = (self.shape(*x), self.shape(*k));
                let geom = ConvGeom {
                    batch: sx[0],
                    in_ch: sx[1],
                    out_ch: sk[0],
                    width: sk[2],
                    len: sx[2],
                    out_len: node.value.shape()[2],
                    dilation: *dilation,
                    stride: *stride,
                };
                let vx = self.value(*x).data();
                let vk = self.value(*k).data();
                // Disjoint slots: take them out, then put them back.
                let mut dx = self.take_slot(*x, grads);
                let mut dk = self.take_slot(*k, grads);
                let mut db = self.take_slot(*b, grads);
                kernels::conv1d_backward(
                    vx,
                    vk,
                    g,
                    &geom,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                    db.as_deref_mut(),
                );
                grads[x.0] = dx.or(grads[x.0].take());
                grads[k.0] = dk.or(grads[k.0].take());
                grads[b.0] = db.or(grads[b.0].take());
            }
            Op::MaxPool1d { x, argmax } => {
                if let Some(dx) = slot!(*x) {
                    for (&gi, &j) in g.iter().zip(argmax) {
                        dx[j] = dx[j] + gi;
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                train,
            } => {
                let s = self.shape(*x);
                let (batch, ch) = (s[0], s[1]);
                let inner = if s.len() == 3 { s[2] } else { 1 };
                let idx = |b: usize, c: usize, t: usize| (b * ch + c) * inner + t;
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![zero; ch];
                let mut sum_gx = vec![zero; ch];
                for b in 0..batch {
                    for c in 0..ch {
                        for t in 0..inner {
                            let i = idx(b, c, t);
                            sum_g[c] = sum_g[c] + g[i];
                            sum_gx[c] = sum_gx[c] + g[i] * x_hat[i];
                        }
                    }
                }
                if let Some(dg) = slot!(*gamma) {
                    axpy(one, &sum_gx, dg);
                }
                if let Some(dbeta) = slot!(*beta) {
                    axpy(one, &sum_g, dbeta);
                }
                if let Some(dx) = slot!(*x) {
                    let n = T::of_usize(batch * inner);
                    for b in 0..batch {
                        for c in 0..ch {
                            let scale = gam[c] * inv_std[c];
                            for t in 0..inner {
                                let i = idx(b, c, t);
                                let v = if *train {
                                    scale * (g[i] - sum_g[c] / n - x_hat[i] * sum_gx[c] / n)
                                } else {
                                    scale * g[i]
                                };
                                dx[i] = dx[i] + v;
                            }
                        }
                    }
                }
            }
            Op::SwapLast(x) => {
                let s = node.value.shape();
                let (b, q, p) = (s[0], s[1], s[2]);
                if let Some(dx) = slot!(*x) {
                    for bi in 0..b {
                        let gt = kernels::transpose(&g[bi * p * q..(bi + 1) * p * q], q, p);
                        axpy(one, &gt, &mut dx[bi * p * q..(bi + 1) * p * q]);
                    }
                }
            }
            Op::SelectTime(x, t) => {
                let s = self.shape(*x);
                let (b, tl, f) = (s[0], s[1], s[2]);
                if let Some(dx) = slot!(*x) {
                    for bi in 0..b {
                        axpy(one, &g[bi * f..][..f], &mut dx[(bi * tl + t) * f..][..f]);
                    }
                }
            }
            Op::StackTime(steps) => {
                let s = node.value.shape();
                let (b, tl, f) = (s[0], s[1], s[2]);
                for (t, &v) in steps.iter().enumerate() {
                    if let Some(dv) = slot!(v) {
                        for bi in 0..b {
                            axpy(one, &g[(bi * tl + t) * f..][..f], &mut dv[bi * f..][..f]);
                        }
                    }
                }
            }
            Op::ConcatLast(a, b) => {
                let fa = *self.shape(*a).last().unwrap();
                let fb = *self.shape(*b).last().unwrap();
                if let Some(da) = slot!(*a) {
                    for (row, gr) in da.chunks_mut(fa).zip(g.chunks(fa + fb)) {
                        axpy(one, &gr[..fa], row);
                    }
                }
                if let Some(db) = slot!(*b) {
                    for (row, gr) in db.chunks_mut(fb).zip(g.chunks(fa + fb)) {
                        axpy(one, &gr[fa..], row);
                    }
                }
            }
            Op::ReverseTime(x) => {
                let s = node.value.shape();
                let (b, tl, f) = (s[0], s[1], s[2]);
                if let Some(dx) = slot!(*x) {
                    for bi in 0..b {
                        for t in 0..tl {
                            let src = (bi * tl + (tl - 1 - t)) * f;
                            axpy(one, &g[src..][..f], &mut dx[(bi * tl + t) * f..][..f]);
                        }
                    }
                }
            }
            Op::MeanTime(x) => {
                let s = self.shape(*x);
                let (b, tl, f) = (s[0], s[1], s[2]);
                let inv = one / T::of_usize(tl);
                if let Some(dx) = slot!(*x) {
                    for bi in 0..b {
                        for t in 0..tl {
                            axpy(inv, &g[bi * f..][..f], &mut dx[(bi * tl + t) * f..][..f]);
                        }
                    }
                }
            }
        }
    }

    fn take_slot(&self, v: Var, grads: &mut [Option<Vec<T>>]) -> Option<Vec<T>> {
        if self.nodes[v.0].requires_grad {
            let n = self.nodes[v.0].value.len();
            Some(grads[v.0].take().unwrap_or_else(|| vec![T::zero(); n]))
        } else {
            None
        }
    }
}
