//! Raw numeric kernels behind the differentiable primitives.

use crate::scalar::Scalar;

/// `a[m,k] · b[k,n]`.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o = *o + a_ip * bv;
            }
        }
    }
    out
}

/// `a[m,k]ᵀ · g[m,n]` -> `[k,n]`.
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == T::zero() {
                continue;
            }
            let row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in row.iter_mut().zip(g_row) {
                *o = *o + a_ip * gv;
            }
        }
    }
    out
}

/// `g[m,n] · b[k,n]ᵀ` -> `[m,k]`.
pub(crate) fn matmul_nt<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            out[i * k + p] = dot(g_row, b_row);
        }
    }
    out
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

/// Geometry of a stride-1 "same" 1-D convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub kernel: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.kernel as isize - 1) / 2
    }

    /// Valid output range `[lo, hi)` for tap `k`, with input offset `shift`.
    #[inline]
    fn tap(&self, k: usize) -> (usize, usize, isize) {
        let shift = k as isize - self.pad();
        let len = self.len as isize;
        let lo = (-shift).max(0) as usize;
        let hi = (len - shift).min(len).max(0) as usize;
        (lo, hi, shift)
    }
}

pub(crate) fn conv1d<T: Scalar>(x: &[T], w: &[T], bias: &[T], d: ConvDims) -> Vec<T> {
    let ConvDims {
        batch,
        c_in,
        c_out,
        len,
        kernel,
    } = d;
    let mut out = vec![T::zero(); batch * c_out * len];
    for b in 0..batch {
        for o in 0..c_out {
            let row = &mut out[(b * c_out + o) * len..(b * c_out + o + 1) * len];
            row.iter_mut().for_each(|v| *v = bias[o]);
            for i in 0..c_in {
                let xin = &x[(b * c_in + i) * len..(b * c_in + i + 1) * len];
                for k in 0..kernel {
                    let wv = w[(o * c_in + i) * kernel + k];
                    let (lo, hi, shift) = d.tap(k);
                    if lo >= hi {
                        continue;
                    }
                    let src = &xin[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    for (o_v, &x_v) in row[lo..hi].iter_mut().zip(src) {
                        *o_v = *o_v + wv * x_v;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv1d_grad_input<T: Scalar>(g: &[T], w: &[T], d: ConvDims) -> Vec<T> {
    let ConvDims {
        batch,
        c_in,
        c_out,
        len,
        kernel,
    } = d;
    let mut gx = vec![T::zero(); batch * c_in * len];
    for b in 0..batch {
        for i in 0..c_in {
            let row = &mut gx[(b * c_in + i) * len..(b * c_in + i + 1) * len];
            for o in 0..c_out {
                let grow = &g[(b * c_out + o) * len..(b * c_out + o + 1) * len];
                for k in 0..kernel {
                    let wv = w[(o * c_in + i) * kernel + k];
                    let (lo, hi, shift) = d.tap(k);
                    if lo >= hi {
                        continue;
                    }
                    // out[l] used x[l + shift]; scatter back.
                    let dst = &mut row[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    for (x_v, &g_v) in dst.iter_mut().zip(&grow[lo..hi]) {
                        *x_v = *x_v + wv * g_v;
                    }
                }
            }
        }
    }
    gx
}

pub(crate) fn conv1d_grad_weight<T: Scalar>(g: &[T], x: &[T], d: ConvDims) -> (Vec<T>, Vec<T>) {
    let ConvDims {
        batch,
        c_in,
        c_out,
        len,
        kernel,
    } = d;
    let mut gw = vec![T::zero(); c_out * c_in * kernel];
    let mut gb = vec![T::zero(); c_out];
    for b in 0..batch {
        for o in 0..c_out {
            let grow = &g[(b * c_out + o) * len..(b * c_out + o + 1) * len];
            gb[o] = gb[o] + grow.iter().copied().sum::<T>();
            for i in 0..c_in {
                let xin = &x[(b * c_in + i) * len..(b * c_in + i + 1) * len];
                for k in 0..kernel {
                    let (lo, hi, shift) = d.tap(k);
                    if lo >= hi {
                        continue;
                    }
                    let src = &xin[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    let idx = (o * c_in + i) * kernel + k;
                    gw[idx] = gw[idx] + dot(&grow[lo..hi], src);
                }
            }
        }
    }
    (gw, gb)
}

/// Splits `shape` around `axis` into (outer, extent, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
