use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// Largest relative disagreement between the analytic gradient of `f` at `x`
/// and a central finite difference with step `h`:
/// `max_i |g_i − (f(x+h e_i) − f(x−h e_i)) / 2h| / max(1e-8, |g_i|)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Var<'t, f64>,
{
    let analytic = {
        let tape = Tape::new();
        let v = tape.param(x.clone());
        let loss = f(&tape, v);
        let grads = tape.backward(loss)?;
        grads.get_or_zeros(v)
    };
    let eval = |probe: Tensor<f64>| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.constant(probe);
        let out = f(&tape, v);
        tape.check()?;
        Ok(out.item())
    };
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1e-8));
    }
    Ok(worst)
}

/// Central-difference gradient of a scalar function, for oracles that must stay
/// independent of the tape.
pub fn numeric_gradient<S: Scalar>(f: impl Fn(&Tensor<S>) -> S, x: &Tensor<S>, h: S) -> Tensor<S> {
    let two_h = h + h;
    Tensor::from_fn(x.shape(), |i| {
        let mut plus = x.clone();
        plus.data_mut()[i] = plus.data()[i] + h;
        let mut minus = x.clone();
        minus.data_mut()[i] = minus.data()[i] - h;
        (f(&plus) - f(&minus)) / two_h
    })
}
