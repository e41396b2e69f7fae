use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Variance schedule of the forward noising process.
///
/// Index `t` runs over `1..=T`; `alpha_bar(0)` is defined as 1.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    // 1 − ᾱ_t accumulated as (1 − ᾱ_{t−1}) + ᾱ_{t−1}·β_t, exact at t = 1
    one_minus_alpha_bar: Vec<f64>,
}

pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.07;

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    /// Linearly spaced betas. Rejects schedules that are not monotone in (0, 1)
    /// or that leave more than 5% of the signal variance at the last step.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion needs at least one step".into()));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_end
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Config("empty beta schedule".into()));
        }
        if beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Config("every beta must lie in (0, 1)".into()));
        }
        if beta.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("betas must be non-decreasing".into()));
        }
        let alpha_bar: Vec<f64> = beta
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        let mut one_minus_alpha_bar = Vec::with_capacity(beta.len());
        let (mut ab, mut om) = (1.0, 0.0);
        for b in &beta {
            om += ab * b;
            ab *= 1.0 - b;
            one_minus_alpha_bar.push(om);
        }
        let last = *alpha_bar.last().unwrap();
        if last >= 0.05 {
            return Err(Error::Config(format!(
                "schedule keeps alpha_bar_T = {last:.4} >= 0.05; the last step must be near pure noise"
            )));
        }
        Ok(NoiseSchedule {
            beta,
            alpha_bar,
            one_minus_alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) {
        assert!((1..=self.steps()).contains(&t), "diffusion step {t} outside 1..={}", self.steps());
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.check(t);
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            return 1.0;
        }
        self.check(t);
        self.alpha_bar[t - 1]
    }

    pub fn one_minus_alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        self.check(t);
        self.one_minus_alpha_bar[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    /// Closed-form jump `x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε`.
    pub fn diffuse<T: Scalar>(&self, x0: &[T], t: usize, noise: &[T]) -> Vec<T> {
        assert_eq!(x0.len(), noise.len(), "noise must match the signal shape");
        let (a, b) = (T::c(self.alpha_bar(t).sqrt()), T::c(self.one_minus_alpha_bar(t).sqrt()));
        x0.iter().zip(noise).map(|(&x, &e)| a * x + b * e).collect()
    }

    /// Coefficients of the Gaussian posterior `q(x_{t−1} | x_t, x_0)`:
    /// mean = `c0·x̂_0 + ct·x_t`, variance `σ²`.
    pub fn posterior(&self, t: usize) -> Posterior {
        let om = self.one_minus_alpha_bar(t);
        let om_prev = self.one_minus_alpha_bar(t - 1);
        let beta = self.beta(t);
        Posterior {
            coef_x0: self.alpha_bar(t - 1).sqrt() * beta / om,
            coef_xt: self.alpha(t).sqrt() * om_prev / om,
            variance: beta * om_prev / om,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Posterior {
    pub coef_x0: f64,
    pub coef_xt: f64,
    pub variance: f64,
}

/// Sinusoidal embedding of a diffusion step.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (t as f64 * freq).sin();
        out[half + i] = (t as f64 * freq).cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    #[test]
    fn default_schedule_invariants() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 100);
        assert!(s.betas().windows(2).all(|w| w[0] <= w[1]));
        assert!((1..s.steps()).all(|t| s.alpha_bar(t + 1) < s.alpha_bar(t)));
        assert!(s.alpha_bar(100) < 0.05);
    }

    #[test]
    fn weak_schedule_is_rejected() {
        assert!(NoiseSchedule::linear(100, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.5, 0.1]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.9, 1.0]).is_err());
    }

    #[test]
    fn first_step_barely_moves_the_signal() {
        let s = NoiseSchedule::default();
        let x0: Vec<f64> = vec![0.3, -1.2, 0.8];
        let eps = vec![1.0, -0.5, 2.0];
        let xt = s.diffuse(&x0, 1, &eps);
        let dist: f64 = xt.iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let bound = s.beta(1).sqrt() * eps.iter().map(|e| e * e).sum::<f64>().sqrt();
        assert!(dist <= bound + 1e-12);
    }

    #[test]
    fn forward_marginal_variance_matches_closed_form() {
        let s = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let var0: f64 = 0.5;
        for t in [1, 50, 100] {
            let n = 10_000;
            let x0: Vec<f64> = (0..n).map(|_| var0.sqrt() * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
            let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let xt = s.diffuse(&x0, t, &eps);
            let mean = xt.iter().sum::<f64>() / n as f64;
            let var = xt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let expect = s.alpha_bar(t) * var0 + 1.0 - s.alpha_bar(t);
            assert!((var / expect - 1.0).abs() < 0.05, "t={t}: {var} vs {expect}");
        }
    }

    #[test]
    fn perfect_denoiser_posterior_at_first_step_returns_x0() {
        let s = NoiseSchedule::default();
        let p = s.posterior(1);
        assert!((p.coef_x0 - 1.0).abs() < 1e-12);
        assert!(p.coef_xt.abs() < 1e-12);
        assert_eq!(p.variance, 0.0);
    }

    #[test]
    #[should_panic(expected = "outside")]
    fn step_out_of_range_panics() {
        NoiseSchedule::default().beta(101);
    }
}
