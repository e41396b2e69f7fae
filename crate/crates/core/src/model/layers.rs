use rand_chacha::ChaCha8Rng;

use super::params::{Bound, ParamId, ParamStore};
use crate::autodiff::{Tensor, Var};
use crate::scalar::Scalar;

pub(crate) const LEAK: f64 = 0.2;

/// `y = x·W + b` on `[B, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add_he(format!("{name}.w"), &[in_dim, out_dim], in_dim, LEAK, rng);
        let b = Some(store.add_zeros(format!("{name}.b"), &[out_dim]));
        Linear { w, b, out_dim }
    }

    /// `y = x·W`.
    pub fn without_bias<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add_he(format!("{name}.w"), &[in_dim, out_dim], in_dim, LEAK, rng);
        Linear { w, b: None, out_dim }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let batch = x.shape()[0];
        let y = x.matmul(p.get(self.w));
        match self.b {
            Some(b) => y + p.get(b).repeat_leading(batch),
            None => y,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

/// Stride-1 "same" convolution on `[B, C, L]`.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub c_out: usize,
}

impl Conv {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut conv = Self::without_bias(store, name, c_in, c_out, kernel, rng);
        conv.b = Some(store.add_zeros(format!("{name}.b"), &[c_out]));
        conv
    }

    pub fn without_bias<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kernel;
        let w = store.add_he(format!("{name}.w"), &[c_out, c_in, kernel], fan_in, LEAK, rng);
        Conv { w, b: None, c_out }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let b = match self.b {
            Some(b) => p.get(b),
            None => x.tape().constant(Tensor::zeros(&[self.c_out])),
        };
        x.conv1d(p.get(self.w), b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

pub(crate) fn leaky<'t, T: Scalar>(x: Var<'t, T>) -> Var<'t, T> {
    x.leaky_relu(T::c(LEAK))
}
