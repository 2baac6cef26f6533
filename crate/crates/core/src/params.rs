//! Named parameter storage and the per-pass [`Session`] that binds stored
//! tensors onto a fresh tape.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{BatchStats, Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// `false` for buffers such as batch-norm running statistics.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            tensor,
            trainable,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Overwrites every entry with the tensor of the same name from `other`.
    pub fn load_from(&mut self, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        let mut seen = 0usize;
        for (name, t) in tensors {
            let Some(id) = self.id(name) else {
                return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
            };
            if self.get(id).shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: shape {:?} does not match model {:?}",
                    t.shape(),
                    self.get(id).shape()
                )));
            }
            *self.get_mut(id) = t.clone();
            seen += 1;
        }
        if seen != self.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {seen} of {} model tensors",
                self.len()
            )));
        }
        Ok(())
    }

    /// Sets every entry of every parameter to `v` (buffers included).
    pub fn fill(&mut self, v: T) {
        for p in &mut self.params {
            p.tensor.data_mut().iter_mut().for_each(|x| *x = v);
        }
    }

    /// Applies exponential running-average updates gathered by a training
    /// pass: `running = momentum * running + (1 - momentum) * batch`.
    pub fn apply_bn_updates(&mut self, updates: Vec<BnUpdate<T>>) {
        for u in updates {
            let keep = u.momentum;
            let take = T::one() - keep;
            for (r, b) in self.get_mut(u.mean).data_mut().iter_mut().zip(&u.stats.mean) {
                *r = keep * *r + take * *b;
            }
            for (r, b) in self.get_mut(u.var).data_mut().iter_mut().zip(&u.stats.var) {
                *r = keep * *r + take * *b;
            }
        }
    }
}

/// Uniform initialization in `[-bound, bound]`.
pub fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = if bound > 0.0 {
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        (0..n).map(|_| T::of(dist.sample(rng))).collect()
    } else {
        vec![T::zero(); n]
    };
    Tensor::from_parts(shape.to_vec(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub momentum: T,
    pub stats: BatchStats<T>,
}

/// One forward (and optionally backward) pass over a [`ParamStore`].
///
/// Each stored parameter is bound to at most one tape leaf, so every use of a
/// parameter in the pass (both siamese branches, every timestep) accumulates
/// into the same gradient.
pub struct Session<'a, T> {
    pub tape: Tape<T>,
    store: &'a ParamStore<T>,
    mode: Mode,
    track_grads: bool,
    bound: Vec<Option<Var>>,
    bn_updates: Vec<BnUpdate<T>>,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: Mode) -> Self {
        Session {
            tape: Tape::new(),
            store,
            mode,
            track_grads: mode == Mode::Train,
            bound: vec![None; store.len()],
            bn_updates: Vec::new(),
        }
    }

    /// Requests gradients regardless of mode (used by gradient checks of
    /// inference-mode layers).
    pub fn with_grads(mut self, on: bool) -> Self {
        self.track_grads = on;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.bound[id.0] {
            return Ok(v);
        }
        let p = self.store.param(id);
        let mut t = p.tensor.clone();
        t.requires_grad = self.track_grads && p.trainable;
        let v = self.tape.leaf(t)?;
        self.bound[id.0] = Some(v);
        Ok(v)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Result<Var> {
        self.tape.constant(t)
    }

    pub(crate) fn record_bn(&mut self, mean: ParamId, var: ParamId, momentum: T, stats: BatchStats<T>) {
        self.bn_updates.push(BnUpdate {
            mean,
            var,
            momentum,
            stats,
        });
    }

    /// Backward from `loss`; returns gradients of every bound trainable
    /// parameter, in parameter order.
    pub fn backward(&self, loss: Var) -> Result<Vec<(ParamId, Vec<T>)>> {
        let mut grads: Gradients<T> = self.tape.backward(loss)?;
        let mut out = Vec::new();
        for (i, b) in self.bound.iter().enumerate() {
            if let Some(v) = b {
                if self.tape.requires_grad(*v) {
                    let n = self.store.get(ParamId(i)).len();
                    let g = grads.take(*v).unwrap_or_else(|| vec![T::zero(); n]);
                    out.push((ParamId(i), g));
                }
            }
        }
        Ok(out)
    }

    pub fn into_bn_updates(self) -> Vec<BnUpdate<T>> {
        self.bn_updates
    }
}
