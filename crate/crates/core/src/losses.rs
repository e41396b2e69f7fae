//! Training objectives.
//!
//! All functions take tape variables so the trainer can differentiate them;
//! batch size is always the leading extent.

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;
/// Denominator floor of the code normalisation.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub rc: f64,
    pub d: f64,
    pub t: f64,
    pub fd: f64,
    pub se: f64,
    pub ce: f64,
    pub ie: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rc: 1.0,
            d: 1.0,
            t: 1.0,
            fd: 0.5,
            se: 0.1,
            ce: 1.0,
            ie: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.rc, self.d, self.t, self.fd, self.se, self.ce, self.ie];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// `λ_RC·rc + λ_D·(λ_FD·fd + λ_SE·se) + λ_T·(λ_CE·ce − λ_IE·ie)`.
    pub fn total(&self, c: &Components) -> f64 {
        self.rc * c.rc + self.d * (self.fd * c.fd + self.se * c.se) + self.t * (self.ce * c.ce - self.ie * c.ie)
    }
}

/// Values of the five objective terms; a disabled term is 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Components {
    pub rc: f64,
    pub fd: f64,
    pub se: f64,
    pub ce: f64,
    pub ie: f64,
}

/// Tape-level terms; `None` marks a term that was not computed.
#[derive(Clone, Copy)]
pub struct Terms<'t, T: Scalar> {
    pub rc: Option<Var<'t, T>>,
    pub fd: Option<Var<'t, T>>,
    pub se: Option<Var<'t, T>>,
    pub ce: Option<Var<'t, T>>,
    pub ie: Option<Var<'t, T>>,
}

impl<'t, T: Scalar> Terms<'t, T> {
    pub fn none() -> Self {
        Terms {
            rc: None,
            fd: None,
            se: None,
            ce: None,
            ie: None,
        }
    }

    pub fn values(&self) -> Components {
        let v = |x: Option<Var<'t, T>>| x.map_or(0.0, |x| x.item().as_f64());
        Components {
            rc: v(self.rc),
            fd: v(self.fd),
            se: v(self.se),
            ce: v(self.ce),
            ie: v(self.ie),
        }
    }

    /// Weighted sum of the computed terms; `None` when nothing was computed.
    pub fn total(&self, w: &LossWeights) -> Option<Var<'t, T>> {
        let parts = [
            (self.rc, w.rc),
            (self.fd, w.d * w.fd),
            (self.se, w.d * w.se),
            (self.ce, w.t * w.ce),
            (self.ie, -w.t * w.ie),
        ];
        parts
            .into_iter()
            .filter_map(|(v, k)| v.map(|v| v.scale(T::c(k))))
            .reduce(|a, b| a + b)
    }
}

/// Factor decorrelation over codes `[M, N, d]`:
/// `Σ_{c1≠c2} |(1/(M−1)) Σ_m ẑ_m^{c1}·ẑ_m^{c2}|` with `ẑ = z / max(‖z‖, ε)`.
pub fn loss_fd<'t, T: Scalar>(codes: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = codes.shape();
    let (m, n) = (shape[0], shape[1]);
    if m < 2 {
        return Err(Error::Contract("factor decorrelation needs at least two samples".into()));
    }
    let z = codes.l2_normalize(2, T::c(NORM_EPS));
    let gram = z.bmm(z.transpose()).sum_axis(0).scale(T::c(1.0 / (m - 1) as f64));
    let off = Tensor::from_fn(&[n, n], |i| if i / n == i % n { T::zero() } else { T::one() });
    Ok((gram.abs() * codes.tape().constant(off)).sum())
}

/// Mean entropy of the space field `[M, N, d_S]`:
/// `(1/(d_S·M)) Σ_{i,m} (1/N) Σ_n −p·ln(p + 1e-12)`.
pub fn loss_se<T: Scalar>(field: Var<'_, T>) -> Var<'_, T> {
    let count = field.value().len();
    entropy_sum(field).scale(T::c(1.0 / count as f64))
}

fn entropy_sum<T: Scalar>(p: Var<'_, T>) -> Var<'_, T> {
    (p * p.add_scalar(T::c(LOG_FLOOR)).ln()).sum().neg()
}

/// Batch mean of the per-signal squared error `‖pred − x0‖²`.
pub fn loss_rc<'t, T: Scalar>(pred: Var<'t, T>, x0: Var<'t, T>) -> Var<'t, T> {
    let b = pred.shape()[0];
    let d = pred - x0;
    (d * d).sum().scale(T::c(1.0 / b as f64))
}

fn one_hot<T: Scalar>(labels: &[usize], k: usize) -> Tensor<T> {
    Tensor::from_fn(&[labels.len(), k], |i| if labels[i / k] == i % k { T::one() } else { T::zero() })
}

/// Cross-entropy summed over factors and averaged over the batch.
/// `probs[n]` is `[M, K_n]`, `labels[n][m]` the class of sample `m`.
pub fn loss_ce<'t, T: Scalar>(probs: &[Var<'t, T>], labels: &[Vec<usize>]) -> Var<'t, T> {
    assert_eq!(probs.len(), labels.len(), "one label column per factor");
    let tape = probs[0].tape();
    let b = probs[0].shape()[0];
    probs
        .iter()
        .zip(labels)
        .map(|(p, y)| {
            let k = p.shape()[1];
            assert_eq!(y.len(), b, "label count must match the batch");
            assert!(y.iter().all(|&c| c < k), "label out of range");
            (p.add_scalar(T::c(LOG_FLOOR)).ln() * tape.constant(one_hot(y, k))).sum()
        })
        .reduce(|a, b| a + b)
        .expect("at least one factor")
        .scale(T::c(-1.0 / b as f64))
}

/// Entropy of cross-factor predictions, summed over pairs and averaged over
/// the batch. Larger means the features carry less foreign-factor information.
pub fn loss_ie<'t, T: Scalar>(cross: &[Var<'t, T>]) -> Var<'t, T> {
    let b = cross[0].shape()[0];
    cross
        .iter()
        .map(|&p| entropy_sum(p))
        .reduce(|a, b| a + b)
        .expect("at least one cross prediction")
        .scale(T::c(1.0 / b as f64))
}

/// Largest attainable `L_IE` for the given cardinalities.
pub fn ie_upper_bound(cardinalities: &[usize]) -> f64 {
    let n = cardinalities.len();
    (0..n)
        .flat_map(|n1| (0..n).filter(move |&n2| n2 != n1))
        .map(|n2| (cardinalities[n2] as f64).ln())
        .sum()
}
