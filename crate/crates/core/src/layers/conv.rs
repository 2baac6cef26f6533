use rand::Rng;

use crate::error::Result;
use crate::params::{uniform, ParamId, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::glorot_bound;

/// Dilated temporal convolution with kernels `[out × in × width]` and a
/// per-output-channel bias.
#[derive(Clone, Debug)]
pub struct DilatedConv {
    pub kernels: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
    pub dilation: usize,
    pub stride: usize,
}

impl DilatedConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        width: usize,
        dilation: usize,
        stride: usize,
    ) -> Self {
        let bound = glorot_bound(in_channels * width, out_channels * width);
        let kernels = store.add(
            format!("{name}.kernels"),
            uniform(rng, &[out_channels, in_channels, width], bound),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]), true);
        DilatedConv {
            kernels,
            bias,
            in_channels,
            out_channels,
            width,
            dilation,
            stride,
        }
    }

    /// Receptive width `(width - 1) * dilation + 1`.
    pub fn span(&self) -> usize {
        (self.width - 1) * self.dilation + 1
    }

    /// Output length for an input of `len` frames.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        crate::kernels::conv_out_len(len, self.width, self.dilation, self.stride)
    }

    /// Smallest input length giving an output of at least `out` frames.
    pub fn min_input_for(&self, out: usize) -> usize {
        (out.max(1) - 1) * self.stride + self.span()
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let k = s.param(self.kernels)?;
        let b = s.param(self.bias)?;
        s.tape.conv1d(x, k, b, self.dilation, self.stride)
    }
}

/// Eager convolution on `[batch × channels × time]` input.
pub fn conv1d_dilated<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    dilation: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone())?;
    let k = tape.constant(kernels.clone())?;
    let b = tape.constant(bias.clone())?;
    let y = tape.conv1d(x, k, b, dilation, stride)?;
    Ok(tape.value(y).clone())
}

/// Eager non-overlapping max-pool on `[batch × channels × time]` input.
pub fn max_pool1d<T: Scalar>(input: &Tensor<T>, pool: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone())?;
    let y = tape.max_pool1d(x, pool)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn dilated_pair_kernel() {
        let y = conv1d_dilated(
            &t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]),
            &t(&[1, 1, 2], &[1.0, 1.0]),
            &t(&[1], &[0.0]),
            2,
            1,
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 1, 2]);
        assert_eq!(y.data(), &[4.0, 6.0]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let x = t(&[1, 1, 5], &[0.5, -1.0, 2.0, 3.0, 9.0]);
        for d in [1, 3, 7] {
            let y = conv1d_dilated(&x, &t(&[1, 1, 1], &[1.0]), &t(&[1], &[0.0]), d, 1).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(c, o, w, d, st, len) in &[(3, 4, 5, 2, 1, 30), (2, 3, 3, 4, 2, 41), (1, 2, 2, 1, 3, 9)] {
            let x: Tensor<f64> = uniform(&mut rng, &[2, c, len], 2.0);
            let k: Tensor<f64> = uniform(&mut rng, &[o, c, w], 2.0);
            let b: Tensor<f64> = uniform(&mut rng, &[o], 2.0);
            let y = conv1d_dilated(&x, &k, &b, d, st).unwrap();
            let out_len = (len - (w - 1) * d - 1) / st + 1;
            assert_eq!(y.shape(), &[2, o, out_len]);
            for bi in 0..2 {
                for oi in 0..o {
                    for ti in 0..out_len {
                        let mut acc = b.data()[oi];
                        for ci in 0..c {
                            for ki in 0..w {
                                acc += k.data()[(oi * c + ci) * w + ki]
                                    * x.data()[(bi * c + ci) * len + ti * st + ki * d];
                            }
                        }
                        let got = y.data()[(bi * o + oi) * out_len + ti];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn too_short_names_required_length() {
        let err = conv1d_dilated(
            &Tensor::<f64>::zeros(&[1, 1, 8]),
            &Tensor::zeros(&[1, 1, 5]),
            &Tensor::zeros(&[1]),
            2,
            1,
        )
        .unwrap_err();
        match err {
            Error::SequenceTooShort { required, actual, .. } => {
                assert_eq!(required, 9);
                assert_eq!(actual, 8);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn pool_examples() {
        let y = max_pool1d(&t(&[1, 1, 6], &[3.0, 1.0, 4.0, 1.0, 5.0, 9.0]), 2).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0, 9.0]);
        let y = max_pool1d(&Tensor::<f64>::full(&[2, 3, 7], 1.5), 3).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2]);
        assert!(y.data().iter().all(|&v| v == 1.5));
        assert!(matches!(
            max_pool1d(&Tensor::<f64>::zeros(&[1, 1, 2]), 3),
            Err(Error::SequenceTooShort { .. })
        ));
    }

    #[test]
    fn pool_tie_routes_gradient_to_first() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1, 2], &[2.0, 2.0]).with_grad()).unwrap();
        let y = tape.max_pool1d(x, 2).unwrap();
        let l = tape.sum(y).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn min_input_round_trips() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = DilatedConv::new(&mut store, &mut rng, "c", 1, 1, 5, 4, 1);
        assert_eq!(c.span(), 17);
        assert_eq!(c.out_len(c.min_input_for(3)), Some(3));
        assert_eq!(c.out_len(16), None);
    }
}
