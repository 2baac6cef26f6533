//! Slice-level numeric kernels shared by the tape's forward and backward
//! passes. Inner loops are written as contiguous axpy updates so that the
//! compiler can vectorize them without reassociating any reduction.

use crate::scalar::Scalar;

/// `y += a * x`
#[inline]
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

/// Dot product with eight fixed accumulator lanes. The summation order is
/// fixed, so results are reproducible, but differ from a left-to-right sum.
#[inline]
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [T::zero(); 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] = acc[l] + a[l] * b[l];
        }
    }
    let mut tail = T::zero();
    for (a, b) in xr.iter().zip(yr) {
        tail = tail + *a * *b;
    }
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7])) + tail
}

/// Row-major transpose of an `rows × cols` matrix.
pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// `c (m×n) += a (m×k) · b (k×n)`
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != T::zero() {
                axpy(aip, &b[p * n..(p + 1) * n], crow);
            }
        }
    }
}

/// Output length of a valid (unpadded) dilated convolution, or `None` when
/// the receptive field does not fit.
pub fn conv_out_len(len: usize, width: usize, dilation: usize, stride: usize) -> Option<usize> {
    let span = (width - 1) * dilation + 1;
    if len < span {
        None
    } else {
        Some((len - span) / stride + 1)
    }
}

pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub width: usize,
    pub len: usize,
    pub out_len: usize,
    pub dilation: usize,
    pub stride: usize,
}

pub fn conv1d_forward<T: Scalar>(x: &[T], k: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::zero(); g.batch * g.out_ch * g.out_len];
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            let orow = &mut out[(b * g.out_ch + o) * g.out_len..][..g.out_len];
            orow.fill(bias[o]);
            for c in 0..g.in_ch {
                let xrow = &x[(b * g.in_ch + c) * g.len..][..g.len];
                for w in 0..g.width {
                    let kv = k[(o * g.in_ch + c) * g.width + w];
                    let off = w * g.dilation;
                    if g.stride == 1 {
                        axpy(kv, &xrow[off..off + g.out_len], orow);
                    } else {
                        for (t, ov) in orow.iter_mut().enumerate() {
                            *ov = *ov + kv * xrow[t * g.stride + off];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input, kernel and bias gradients of a dilated convolution.
pub fn conv1d_backward<T: Scalar>(
    x: &[T],
    k: &[T],
    dout: &[T],
    g: &ConvGeom,
    mut dx: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            let drow = &dout[(b * g.out_ch + o) * g.out_len..][..g.out_len];
            if let Some(db) = db.as_deref_mut() {
                db[o] = db[o] + drow.iter().copied().sum::<T>();
            }
            for c in 0..g.in_ch {
                let xbase = (b * g.in_ch + c) * g.len;
                for w in 0..g.width {
                    let kidx = (o * g.in_ch + c) * g.width + w;
                    let off = w * g.dilation;
                    if let Some(dx) = dx.as_deref_mut() {
                        let kv = k[kidx];
                        if g.stride == 1 {
                            axpy(kv, drow, &mut dx[xbase + off..xbase + off + g.out_len]);
                        } else {
                            for (t, &d) in drow.iter().enumerate() {
                                let i = xbase + t * g.stride + off;
                                dx[i] = dx[i] + kv * d;
                            }
                        }
                    }
                    if let Some(dk) = dk.as_deref_mut() {
                        let acc = if g.stride == 1 {
                            dot(drow, &x[xbase + off..xbase + off + g.out_len])
                        } else {
                            let mut acc = T::zero();
                            for (t, &d) in drow.iter().enumerate() {
                                acc = acc + d * x[xbase + t * g.stride + off];
                            }
                            acc
                        };
                        dk[kidx] = dk[kidx] + acc;
                    }
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    // Split by sign so that exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
