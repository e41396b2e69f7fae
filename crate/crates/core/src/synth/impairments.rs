//! Memoryless transmitter and channel impairments on complex baseband samples.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Mean of `|x_n|²`.
pub fn mean_power(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64
}

/// Scales `x` to unit mean power. An all-zero signal is left untouched.
pub fn normalize_power(x: &mut [Complex64]) {
    let p = mean_power(x);
    if p > 0.0 {
        let s = p.sqrt().recip();
        x.iter_mut().for_each(|v| *v *= s);
    }
}

/// Rectangular pulses: each symbol held for `samples_per_symbol` samples,
/// truncated or zero-padded to `len`, then renormalized to unit power.
pub fn pulse_shape(symbols: &[Complex64], samples_per_symbol: usize, len: usize) -> Vec<Complex64> {
    assert!(!symbols.is_empty(), "pulse_shape needs at least one symbol");
    let mut out: Vec<Complex64> = symbols
        .iter()
        .flat_map(|&s| std::iter::repeat_n(s, samples_per_symbol))
        .take(len)
        .collect();
    out.resize(len, Complex64::new(0.0, 0.0));
    normalize_power(&mut out);
    out
}

/// `I' = (1+g)·I`, `Q' = Q·cos φ + I·sin φ`.
pub fn apply_iq_imbalance(x: &[Complex64], gain: f64, phase: f64) -> Vec<Complex64> {
    let (s, c) = phase.sin_cos();
    x.iter()
        .map(|v| Complex64::new((1.0 + gain) * v.re, v.im * c + v.re * s))
        .collect()
}

/// `x'_n = x_n · exp(j·2π·cfo·n)`.
pub fn apply_cfo(x: &[Complex64], cfo: f64) -> Vec<Complex64> {
    x.iter()
        .enumerate()
        .map(|(n, v)| v * Complex64::from_polar(1.0, 2.0 * PI * cfo * n as f64))
        .collect()
}

/// Cubic compression `x·(1 + a3·|x|²)` followed by unit-power renormalization.
pub fn apply_pa_nonlinearity(x: &[Complex64], a3: f64) -> Vec<Complex64> {
    let mut out: Vec<Complex64> = x.iter().map(|v| v * (1.0 + a3 * v.norm_sqr())).collect();
    normalize_power(&mut out);
    out
}

/// Circular complex Gaussian noise with per-sample variance `10^(−snr_db/10)`.
/// `snr_db = +∞` leaves the signal untouched and draws nothing.
pub fn apply_awgn<R: Rng + ?Sized>(x: &[Complex64], snr_db: f64, rng: &mut R) -> Vec<Complex64> {
    if snr_db == f64::INFINITY {
        return x.to_vec();
    }
    let sigma = (10f64.powf(-snr_db / 10.0) / 2.0).sqrt();
    x.iter()
        .map(|v| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            v + Complex64::new(re * sigma, im * sigma)
        })
        .collect()
}
