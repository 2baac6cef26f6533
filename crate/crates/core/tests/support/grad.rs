//! Central finite-difference checks for every differentiable op and layer.
//!
//! Each check builds one random configuration, reduces the output to a
//! scalar with fixed random weights and compares the backward pass against
//! `(f(x + h) - f(x - h)) / 2h` for every input and trainable parameter
//! element. The error of one tensor is `|a - n| / max(|a| + |n|, 1e-7)`
//! with Euclidean norms.

use harsiam::branch::{Branch, BranchConfig};
use harsiam::layers::{Activation, BatchNorm, DilatedConv, Fc, LstmCell, LstmKind, LstmLayer, ResidualLstmStack};
use harsiam::params::{Mode, ParamStore, Session};
use harsiam::recognition::{RecNetConfig, RecognitionNet};
use harsiam::segmentation::{SegNetConfig, SegmentationNet};
use harsiam::tape::{RunningStats, Tape, Var};
use harsiam::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
pub const CONFIGS: usize = 20;

pub type Check = fn(&mut ChaCha8Rng) -> f64;

/// Gradients whose norms fall below this are compared absolutely, since
/// central differences carry round-off near 1e-10 there.
pub const FLOOR: f64 = 1e-5;

pub fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(n).map(|(x, y)| x - y));
    diff / (norm(&mut a.iter().copied()) + norm(&mut n.iter().copied())).max(FLOOR)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values at least 0.05 away from zero, for ops with a kink there.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values at least 0.01 apart, so max-pool has no near ties.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
    data.shuffle(rng);
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn random_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = rng.random_range(1..=3);
    (0..rank).map(|_| rng.random_range(1..=4)).collect()
}

/// `sum(y ⊙ w)` with weights fixed by the output size.
fn reduce(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let mut r = ChaCha8Rng::seed_from_u64(0x5eed ^ n as u64);
    let w = Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect())?;
    let w = tape.constant(w)?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type OpFn<'a> = &'a dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Worst error over all inputs of a tape-level function.
pub fn check_op(inputs: &[Tensor<f64>], f: OpFn<'_>) -> f64 {
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone().with_grad()).unwrap()).collect();
        let y = f(&mut t, &vs).unwrap();
        let l = reduce(&mut t, y).unwrap();
        t.value(l).item().unwrap()
    };
    let mut t = Tape::new();
    let vs: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone().with_grad()).unwrap()).collect();
    let y = f(&mut t, &vs).unwrap();
    let l = reduce(&mut t, y).unwrap();
    let grads = t.backward(l).unwrap();
    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for (k, v) in vs.iter().enumerate() {
        let analytic = grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..inputs[k].len() {
            let x0 = xs[k].data()[i];
            xs[k].data_mut()[i] = x0 + STEP;
            let up = eval(&xs);
            xs[k].data_mut()[i] = x0 - STEP;
            let down = eval(&xs);
            xs[k].data_mut()[i] = x0;
            numeric.push((up - down) / (2.0 * STEP));
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

type SessionFn<'a> = &'a dyn Fn(&mut Session<'_, f64>, &[Var]) -> Result<Var>;

/// Worst error over all inputs and trainable parameters of a layer-level
/// function evaluated in `mode`.
pub fn check_session(store: &ParamStore<f64>, inputs: &[Tensor<f64>], mode: Mode, f: SessionFn<'_>) -> f64 {
    let eval = |st: &ParamStore<f64>, xs: &[Tensor<f64>]| -> f64 {
        let mut s = Session::new(st, mode).with_grads(true);
        let vs: Vec<Var> = xs.iter().map(|x| s.tape.leaf(x.clone().with_grad()).unwrap()).collect();
        let y = f(&mut s, &vs).unwrap();
        let l = reduce(&mut s.tape, y).unwrap();
        s.tape.value(l).item().unwrap()
    };
    let mut s = Session::new(store, mode).with_grads(true);
    let vs: Vec<Var> = inputs.iter().map(|x| s.tape.leaf(x.clone().with_grad()).unwrap()).collect();
    let y = f(&mut s, &vs).unwrap();
    let l = reduce(&mut s.tape, y).unwrap();
    let input_grads = s.tape.backward(l).unwrap();
    let param_grads = s.backward(l).unwrap();

    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for (k, v) in vs.iter().enumerate() {
        let analytic = input_grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..inputs[k].len() {
            let x0 = xs[k].data()[i];
            xs[k].data_mut()[i] = x0 + STEP;
            let up = eval(store, &xs);
            xs[k].data_mut()[i] = x0 - STEP;
            let down = eval(store, &xs);
            xs[k].data_mut()[i] = x0;
            numeric.push((up - down) / (2.0 * STEP));
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    let mut st = store.clone();
    let trainable: Vec<_> = store.ids().filter(|&id| store.param(id).trainable).collect();
    for id in trainable {
        let analytic = param_grads
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| vec![0.0; store.get(id).len()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..store.get(id).len() {
            let x0 = st.get(id).data()[i];
            st.get_mut(id).data_mut()[i] = x0 + STEP;
            let up = eval(&st, inputs);
            st.get_mut(id).data_mut()[i] = x0 - STEP;
            let down = eval(&st, inputs);
            st.get_mut(id).data_mut()[i] = x0;
            numeric.push((up - down) / (2.0 * STEP));
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

/// Replaces every parameter (trainable or not) with random values; running
/// variances stay positive.
fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let var = store.name(id).ends_with("running_var");
        for v in store.get_mut(id).data_mut() {
            *v = if var { rng.random_range(0.5..2.0) } else { rng.random_range(-0.8..0.8) };
        }
    }
}

// ---- tape ops ----

pub fn matmul(rng: &mut ChaCha8Rng) -> f64 {
    let (m, k, n) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
    let a = random_tensor(rng, &[m, k]);
    let b = random_tensor(rng, &[k, n]);
    check_op(&[a, b], &|t, v| t.matmul(v[0], v[1]))
}

pub fn linear(rng: &mut ChaCha8Rng) -> f64 {
    let (b, i, o) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
    let x = random_tensor(rng, &[b, i]);
    let w = random_tensor(rng, &[o, i]);
    if rng.random::<bool>() {
        let bias = random_tensor(rng, &[o]);
        check_op(&[x, w, bias], &|t, v| t.linear(v[0], v[1], Some(v[2])))
    } else {
        check_op(&[x, w], &|t, v| t.linear(v[0], v[1], None))
    }
}

macro_rules! binary_check {
    ($name:ident) => {
        pub fn $name(rng: &mut ChaCha8Rng) -> f64 {
            let s = random_shape(rng);
            let a = random_tensor(rng, &s);
            let b = random_tensor(rng, &s);
            check_op(&[a, b], &|t, v| t.$name(v[0], v[1]))
        }
    };
}

binary_check!(add);
binary_check!(sub);
binary_check!(mul);

macro_rules! unary_check {
    ($name:ident, $gen:ident) => {
        pub fn $name(rng: &mut ChaCha8Rng) -> f64 {
            let s = random_shape(rng);
            let a = $gen(rng, &s);
            check_op(&[a], &|t, v| t.$name(v[0]))
        }
    };
}

unary_check!(sigmoid, random_tensor);
unary_check!(tanh, random_tensor);
unary_check!(relu, off_zero);
unary_check!(exp, random_tensor);
unary_check!(abs, off_zero);
unary_check!(neg, random_tensor);
unary_check!(sum, random_tensor);
unary_check!(mean, random_tensor);
unary_check!(row_sum, random_tensor);

pub fn scale(rng: &mut ChaCha8Rng) -> f64 {
    let s = random_shape(rng);
    let a = random_tensor(rng, &s);
    let c = rng.random_range(-2.0..2.0);
    check_op(&[a], &|t, v| t.scale(v[0], c))
}

pub fn conv1d(rng: &mut ChaCha8Rng) -> f64 {
    let (b, i, o) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
    let (w, d, st) = (rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(1..=3));
    let len = (w - 1) * d + 1 + rng.random_range(0..6);
    let x = random_tensor(rng, &[b, i, len]);
    let k = random_tensor(rng, &[o, i, w]);
    let bias = random_tensor(rng, &[o]);
    check_op(&[x, k, bias], &|t, v| t.conv1d(v[0], v[1], v[2], d, st))
}

pub fn max_pool1d(rng: &mut ChaCha8Rng) -> f64 {
    let pool = rng.random_range(1..=3);
    let shape = [rng.random_range(1..=2), rng.random_range(1..=3), pool * rng.random_range(1..=3) + rng.random_range(0..pool)];
    let x = distinct(rng, &shape);
    check_op(&[x], &|t, v| t.max_pool1d(v[0], pool))
}

fn bn_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut s = vec![rng.random_range(2..=4), rng.random_range(1..=3)];
    if rng.random::<bool>() {
        s.push(rng.random_range(1..=4));
    }
    s
}

pub fn batch_norm_train(rng: &mut ChaCha8Rng) -> f64 {
    let s = bn_shape(rng);
    let x = random_tensor(rng, &s);
    let g = random_tensor(rng, &[s[1]]);
    let b = random_tensor(rng, &[s[1]]);
    check_op(&[x, g, b], &|t, v| Ok(t.batch_norm(v[0], v[1], v[2], 1e-5, None)?.0))
}

pub fn batch_norm_inference(rng: &mut ChaCha8Rng) -> f64 {
    let s = bn_shape(rng);
    let x = random_tensor(rng, &s);
    let g = random_tensor(rng, &[s[1]]);
    let b = random_tensor(rng, &[s[1]]);
    let mean: Vec<f64> = (0..s[1]).map(|_| rng.random_range(-1.0..1.0)).collect();
    let var: Vec<f64> = (0..s[1]).map(|_| rng.random_range(0.5..2.0)).collect();
    check_op(&[x, g, b], &|t, v| {
        let running = RunningStats { mean: &mean, var: &var };
        Ok(t.batch_norm(v[0], v[1], v[2], 1e-5, Some(running))?.0)
    })
}

fn rank3(rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..3).map(|_| rng.random_range(1..=4)).collect()
}

pub fn swap_last(rng: &mut ChaCha8Rng) -> f64 {
    let shape = rank3(rng);
    let x = random_tensor(rng, &shape);
    check_op(&[x], &|t, v| t.swap_last(v[0]))
}

pub fn select_time(rng: &mut ChaCha8Rng) -> f64 {
    let s = rank3(rng);
    let at = rng.random_range(0..s[1]);
    let x = random_tensor(rng, &s);
    check_op(&[x], &|t, v| t.select_time(v[0], at))
}

pub fn stack_time(rng: &mut ChaCha8Rng) -> f64 {
    let (b, f, steps) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=4));
    let xs: Vec<_> = (0..steps).map(|_| random_tensor(rng, &[b, f])).collect();
    // one step repeated: gradients from several positions must add up
    check_op(&xs, &|t, v| {
        let mut seq = v.to_vec();
        seq.push(v[0]);
        t.stack_time(&seq)
    })
}

pub fn concat_last(rng: &mut ChaCha8Rng) -> f64 {
    let mut sa = random_shape(rng);
    let mut sb = sa.clone();
    *sa.last_mut().unwrap() = rng.random_range(1..=4);
    *sb.last_mut().unwrap() = rng.random_range(1..=4);
    let a = random_tensor(rng, &sa);
    let b = random_tensor(rng, &sb);
    check_op(&[a, b], &|t, v| t.concat_last(v[0], v[1]))
}

pub fn reverse_time(rng: &mut ChaCha8Rng) -> f64 {
    let shape = rank3(rng);
    let x = random_tensor(rng, &shape);
    check_op(&[x], &|t, v| t.reverse_time(v[0]))
}

pub fn mean_time(rng: &mut ChaCha8Rng) -> f64 {
    let shape = rank3(rng);
    let x = random_tensor(rng, &shape);
    check_op(&[x], &|t, v| t.mean_time(v[0]))
}

/// A chain that reuses one input on several paths.
pub fn composite(rng: &mut ChaCha8Rng) -> f64 {
    let (b, f) = (rng.random_range(1..=3), rng.random_range(1..=4));
    let x = random_tensor(rng, &[b, f]);
    let y = random_tensor(rng, &[b, f]);
    check_op(&[x, y], &|t, v| {
        let d = t.sub(v[0], v[1])?;
        let a = t.tanh(d)?;
        let m = t.mul(a, v[0])?;
        let e = t.exp(m)?;
        t.add(e, v[0])
    })
}

// ---- layers ----

pub fn dilated_conv_layer(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let (i, o, w, d) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=3));
    let st = rng.random_range(1..=2);
    let conv = DilatedConv::new(&mut store, rng, "c", i, o, w, d, st);
    randomize(&mut store, rng);
    let shape = [rng.random_range(1..=2), i, conv.span() + rng.random_range(0..5)];
    let x = random_tensor(rng, &shape);
    check_session(&store, &[x], Mode::Train, &|s, v| conv.forward(s, v[0]))
}

pub fn batch_norm_layer(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let s = bn_shape(rng);
    let bn = BatchNorm::new(&mut store, "bn", s[1]);
    randomize(&mut store, rng);
    let x = random_tensor(rng, &s);
    let mode = if rng.random::<bool>() { Mode::Train } else { Mode::Inference };
    check_session(&store, &[x], mode, &|s, v| bn.forward(s, v[0]))
}

pub fn fc_layer(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let (b, i, o) = (rng.random_range(2..=4), rng.random_range(1..=4), rng.random_range(1..=4));
    let act = [Activation::Relu, Activation::Sigmoid, Activation::None][rng.random_range(0..3)];
    let bias = rng.random::<bool>();
    let fc = Fc::new(&mut store, rng, "fc", i, o, bias, act);
    randomize(&mut store, rng);
    let x = random_tensor(rng, &[b, i]);
    check_session(&store, &[x], Mode::Train, &|s, v| fc.forward(s, v[0]))
}

pub fn lstm_step(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let (b, i, h) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4));
    let cell = LstmCell::new(&mut store, rng, "l", i, h);
    randomize(&mut store, rng);
    let x = random_tensor(rng, &[b, i]);
    let h0 = random_tensor(rng, &[b, h]);
    let c0 = random_tensor(rng, &[b, h]);
    check_session(&store, &[x, h0, c0], Mode::Train, &|s, v| {
        let (h, c) = cell.step(s, v[0], v[1], v[2])?;
        s.tape.concat_last(h, c)
    })
}

pub fn lstm_sequence(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let (b, t, i, h) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(1..=3));
    let cell = LstmCell::new(&mut store, rng, "l", i, h);
    randomize(&mut store, rng);
    let x = random_tensor(rng, &[b, t, i]);
    check_session(&store, &[x], Mode::Train, &|s, v| cell.sequence(s, v[0]))
}

pub fn blstm_layer(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let (b, t, i, h) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(1..=3));
    let layer = LstmLayer::Bi {
        fwd: LstmCell::new(&mut store, rng, "f", i, h),
        bwd: LstmCell::new(&mut store, rng, "b", i, h),
    };
    randomize(&mut store, rng);
    let x = random_tensor(rng, &[b, t, i]);
    check_session(&store, &[x], Mode::Train, &|s, v| layer.forward(s, v[0]))
}

pub fn residual_lstm_stack(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let (b, t, i, h) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3));
    let kind = if rng.random::<bool>() { LstmKind::Unidirectional } else { LstmKind::Bidirectional };
    let depth = rng.random_range(1..=3);
    let stack = ResidualLstmStack::new(&mut store, rng, "r", i, &vec![h; depth], kind).unwrap();
    randomize(&mut store, rng);
    let x = random_tensor(rng, &[b, t, i]);
    check_session(&store, &[x], Mode::Train, &|s, v| stack.forward(s, v[0]))
}

fn small_branch(rng: &mut ChaCha8Rng, channels: usize, kind: LstmKind) -> BranchConfig {
    let convs = rng.random_range(1..=3);
    BranchConfig {
        input_channels: channels,
        conv_channels: vec![2; convs],
        kernel_width: rng.random_range(2..=3),
        dilations: (0..convs).map(|i| 1 << i).collect(),
        stride: 1,
        pool_after: vec![0],
        pool_size: 2,
        lstm_hidden: vec![2; rng.random_range(1..=2)],
        lstm_kind: kind,
    }
}

pub fn branch(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let ch = rng.random_range(1..=2);
    let kind = if rng.random::<bool>() { LstmKind::Unidirectional } else { LstmKind::Bidirectional };
    let cfg = small_branch(rng, ch, kind);
    let len = cfg.min_window() + rng.random_range(0..4);
    let br = Branch::new(&mut store, rng, "br", cfg).unwrap();
    randomize(&mut store, rng);
    let x = random_tensor(rng, &[2, ch, len]);
    check_session(&store, &[x], Mode::Train, &|s, v| br.forward(s, v[0]))
}

/// `mean((y - target)²)`
fn mse(s: &mut Session<'_, f64>, y: Var, target: &Tensor<f64>) -> Result<Var> {
    let t = s.input(target.clone())?;
    let d = s.tape.sub(y, t)?;
    let sq = s.tape.mul(d, d)?;
    s.tape.mean(sq)
}

pub fn segmentation_loss(rng: &mut ChaCha8Rng) -> f64 {
    let ch = rng.random_range(1..=2);
    let cfg = SegNetConfig {
        branch: small_branch(rng, ch, LstmKind::Unidirectional),
        head_hidden: vec![2; rng.random_range(0..=1)],
    };
    let len = cfg.branch.min_window() + rng.random_range(0..3);
    let mut net = SegmentationNet::<f64>::new(cfg, rng).unwrap();
    randomize(&mut net.store, rng);
    let hist = random_tensor(rng, &[2, ch, len]);
    let fut = random_tensor(rng, &[2, ch, len]);
    let target = Tensor::new(vec![2, 1], vec![rng.random(), rng.random()]).unwrap();
    check_session(&net.store, &[hist, fut], Mode::Train, &|s, v| {
        let y = net.forward(s, v[0], v[1])?;
        mse(s, y, &target)
    })
}

pub fn recognition_loss(rng: &mut ChaCha8Rng) -> f64 {
    let ch = rng.random_range(1..=2);
    let cfg = RecNetConfig {
        branch: small_branch(rng, ch, LstmKind::Bidirectional),
        ..RecNetConfig::new(ch)
    };
    let len = cfg.branch.min_window() + rng.random_range(0..3);
    let mut net = RecognitionNet::<f64>::new(cfg, rng).unwrap();
    randomize(&mut net.store, rng);
    let a = random_tensor(rng, &[2, ch, len]);
    let b = random_tensor(rng, &[2, ch, len]);
    let target = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
    check_session(&net.store, &[a, b], Mode::Train, &|s, v| {
        let y = net.forward(s, v[0], v[1])?;
        mse(s, y, &target)
    })
}

pub const ALL: &[(&str, Check)] = &[
    ("matmul", matmul),
    ("linear", linear),
    ("add", add),
    ("sub", sub),
    ("mul", mul),
    ("sigmoid", sigmoid),
    ("tanh", tanh),
    ("relu", relu),
    ("exp", exp),
    ("abs", abs),
    ("neg", neg),
    ("scale", scale),
    ("sum", sum),
    ("mean", mean),
    ("row_sum", row_sum),
    ("conv1d", conv1d),
    ("max_pool1d", max_pool1d),
    ("batch_norm_train", batch_norm_train),
    ("batch_norm_inference", batch_norm_inference),
    ("swap_last", swap_last),
    ("select_time", select_time),
    ("stack_time", stack_time),
    ("concat_last", concat_last),
    ("reverse_time", reverse_time),
    ("mean_time", mean_time),
    ("composite", composite),
    ("dilated_conv_layer", dilated_conv_layer),
    ("batch_norm_layer", batch_norm_layer),
    ("fc_layer", fc_layer),
    ("lstm_step", lstm_step),
    ("lstm_sequence", lstm_sequence),
    ("blstm_layer", blstm_layer),
    ("residual_lstm_stack", residual_lstm_stack),
    ("branch", branch),
    ("segmentation_loss", segmentation_loss),
    ("recognition_loss", recognition_loss),
];

/// Worst error of `check` over [`CONFIGS`] seeded configurations.
pub fn run(name: &str, check: Check) -> f64 {
    let mut seed = 0u64;
    for b in name.bytes() {
        seed = seed.wrapping_mul(31).wrapping_add(u64::from(b));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..CONFIGS).map(|_| check(&mut rng)).fold(0.0, f64::max)
}
