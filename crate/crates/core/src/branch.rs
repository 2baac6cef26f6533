//! The per-branch encoder shared by both sides of a siamese network:
//! `C(64) - C(64) - P - C(64) - C(64) - P - R(128) - R(128)`.
//!
//! Each `C` is dilated convolution, batch norm and ReLU; `P` is temporal
//! max-pooling; the `R` layers form a residual LSTM stack (unidirectional or
//! bidirectional). The encoder maps a `[channels × time]` window to a
//! fixed-size representation vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{BatchNorm, DilatedConv, LstmKind, ResidualLstmStack};
use crate::params::{Mode, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub input_channels: usize,
    pub conv_channels: Vec<usize>,
    pub kernel_width: usize,
    /// One dilation per convolution.
    pub dilations: Vec<usize>,
    pub stride: usize,
    /// Zero-based indices of the convolutions followed by a max-pool.
    pub pool_after: Vec<usize>,
    pub pool_size: usize,
    pub lstm_hidden: Vec<usize>,
    pub lstm_kind: LstmKind,
}

impl BranchConfig {
    pub fn new(input_channels: usize, lstm_kind: LstmKind) -> Self {
        BranchConfig {
            input_channels,
            conv_channels: vec![64; 4],
            kernel_width: 5,
            dilations: vec![1, 2, 4, 8],
            stride: 1,
            pool_after: vec![1, 3],
            pool_size: 2,
            lstm_hidden: vec![128, 128],
            lstm_kind,
        }
    }

    /// Size `d` of the representation vector.
    pub fn representation_dim(&self) -> usize {
        let h = self.lstm_hidden.last().copied().unwrap_or(0);
        match self.lstm_kind {
            LstmKind::Unidirectional => h,
            LstmKind::Bidirectional => 2 * h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_channels == 0 {
            return bad("branch needs at least one input channel".into());
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return bad(format!("invalid conv channels {:?}", self.conv_channels));
        }
        if self.dilations.len() != self.conv_channels.len() || self.dilations.contains(&0) {
            return bad(format!(
                "need one positive dilation per convolution, got {:?}",
                self.dilations
            ));
        }
        if self.kernel_width == 0 || self.stride == 0 || self.pool_size == 0 {
            return bad("kernel width, stride and pool size must be positive".into());
        }
        if self.pool_after.iter().any(|&i| i >= self.conv_channels.len()) {
            return bad(format!("pool position out of range: {:?}", self.pool_after));
        }
        if self.lstm_hidden.is_empty() || self.lstm_hidden.contains(&0) {
            return bad(format!("invalid LSTM sizes {:?}", self.lstm_hidden));
        }
        Ok(())
    }

    /// Shortest window for which every convolution and pool has at least
    /// one output frame.
    pub fn min_window(&self) -> usize {
        let span = |d: usize| (self.kernel_width - 1) * d + 1;
        let mut need = 1usize;
        for i in (0..self.conv_channels.len()).rev() {
            if self.pool_after.contains(&i) {
                need *= self.pool_size;
            }
            need = (need - 1) * self.stride + span(self.dilations[i]);
        }
        need
    }

    /// Number of LSTM timesteps produced by a window of `len` frames.
    pub fn lstm_steps(&self, len: usize) -> Option<usize> {
        let mut t = len;
        for i in 0..self.conv_channels.len() {
            t = crate::kernels::conv_out_len(t, self.kernel_width, self.dilations[i], self.stride)?;
            if self.pool_after.contains(&i) {
                t /= self.pool_size;
                if t == 0 {
                    return None;
                }
            }
        }
        Some(t)
    }
}

/// A representation vector `f(x)` together with the window it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<T> {
    pub id: usize,
    pub vector: Vec<T>,
}

impl<T: Scalar> Embedding<T> {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub config: BranchConfig,
    pub convs: Vec<DilatedConv>,
    pub norms: Vec<BatchNorm>,
    pub lstm: ResidualLstmStack,
}

impl Branch {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        config: BranchConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut width = config.input_channels;
        for (i, (&ch, &d)) in config.conv_channels.iter().zip(&config.dilations).enumerate() {
            convs.push(DilatedConv::new(
                store,
                rng,
                &format!("{name}.conv{i}"),
                width,
                ch,
                config.kernel_width,
                d,
                config.stride,
            ));
            norms.push(BatchNorm::new(store, &format!("{name}.conv{i}.bn"), ch));
            width = ch;
        }
        let lstm = ResidualLstmStack::new(
            store,
            rng,
            &format!("{name}.lstm"),
            width,
            &config.lstm_hidden,
            config.lstm_kind,
        )?;
        Ok(Branch {
            config,
            convs,
            norms,
            lstm,
        })
    }

    pub fn min_window(&self) -> usize {
        self.config.min_window()
    }

    pub fn representation_dim(&self) -> usize {
        self.config.representation_dim()
    }

    /// Encodes `x: [batch × channels × time]` into `[batch × d]`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.config.input_channels {
            return Err(Error::dim(
                "encode",
                format!(
                    "window batch {shape:?}, branch expects {} channels",
                    self.config.input_channels
                ),
            ));
        }
        let min = self.min_window();
        if shape[2] < min {
            return Err(Error::SequenceTooShort {
                op: "encode",
                required: min,
                actual: shape[2],
            });
        }
        let mut h = x;
        for (i, (conv, bn)) in self.convs.iter().zip(&self.norms).enumerate() {
            h = conv.forward(s, h)?;
            h = bn.forward(s, h)?;
            h = s.tape.relu(h)?;
            if self.config.pool_after.contains(&i) {
                h = s.tape.max_pool1d(h, self.config.pool_size)?;
            }
        }
        let seq = s.tape.swap_last(h)?;
        let out = self.lstm.forward(s, seq)?;
        match self.config.lstm_kind {
            LstmKind::Unidirectional => {
                let last = s.tape.shape(out)[1] - 1;
                s.tape.select_time(out, last)
            }
            LstmKind::Bidirectional => s.tape.mean_time(out),
        }
    }

    /// Inference-mode encoding of one `[channels × time]` window.
    pub fn encode<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        window: &Tensor<T>,
        id: usize,
    ) -> Result<Embedding<T>> {
        let mut out = self.encode_batch(store, std::slice::from_ref(window))?;
        let mut e = out.pop().expect("one window in, one embedding out");
        e.id = id;
        Ok(e)
    }

    /// Inference-mode encoding of equally long windows in one pass. Ids are
    /// positions in `windows`.
    pub fn encode_batch<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        windows: &[Tensor<T>],
    ) -> Result<Vec<Embedding<T>>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let batch = stack_windows(windows)?;
        let mut s = Session::new(store, Mode::Inference);
        let x = s.input(batch)?;
        let y = self.forward(&mut s, x)?;
        let d = self.representation_dim();
        Ok(s.tape
            .value(y)
            .data()
            .chunks(d)
            .enumerate()
            .map(|(id, v)| Embedding {
                id,
                vector: v.to_vec(),
            })
            .collect())
    }
}

/// Stacks equally shaped `[channels × time]` windows into
/// `[batch × channels × time]`.
pub fn stack_windows<T: Scalar>(windows: &[Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = windows.first() else {
        return Err(Error::Contract("cannot stack zero windows".into()));
    };
    let shape = first.shape();
    if shape.len() != 2 {
        return Err(Error::dim("stack_windows", format!("window shape {shape:?}")));
    }
    let mut data = Vec::with_capacity(first.len() * windows.len());
    for w in windows {
        if w.shape() != shape {
            return Err(Error::dim(
                "stack_windows",
                format!("{:?} vs {:?}", w.shape(), shape),
            ));
        }
        data.extend_from_slice(w.data());
    }
    Ok(Tensor::from_parts(vec![windows.len(), shape[0], shape[1]], data))
}
