use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Hardware fingerprint of one synthetic transmitter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransmitterProfile {
    pub iq_gain_imbalance: f64,
    /// Radians.
    pub iq_phase_imbalance: f64,
    /// Cycles per sample.
    pub cfo: f64,
    pub pa_cubic_coeff: f64,
    pub dc_offset: Complex64,
}

// Parameter ranges; each transmitter takes one point of an evenly spaced grid.
const GAIN: (f64, f64) = (-0.06, 0.06);
const PHASE: (f64, f64) = (-0.05, 0.05);
const CFO: (f64, f64) = (-0.004, 0.004);
const PA: (f64, f64) = (-0.12, -0.02);
const DC: (f64, f64) = (-0.15, 0.15);
const JITTER: f64 = 0.1;

/// Stream id reserved for profile draws; dataset cells use streams `1..`.
pub(crate) const PROFILE_STREAM: u64 = 0;

/// Profiles for `k_tx` transmitters as a pure function of `(k_tx, seed)`.
///
/// Each parameter runs over an evenly spaced grid whose points are assigned to
/// transmitters through an independent seeded permutation and then jittered
/// by up to 10% of the grid step, so no two transmitters share a grid point.
pub fn transmitter_profiles(k_tx: usize, seed: u64) -> Vec<TransmitterProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PROFILE_STREAM);
    let mut axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        let step = if k_tx > 1 { (hi - lo) / (k_tx - 1) as f64 } else { 0.0 };
        let mut pts: Vec<f64> = (0..k_tx)
            .map(|i| if k_tx > 1 { lo + step * i as f64 } else { 0.5 * (lo + hi) })
            .collect();
        pts.shuffle(&mut rng);
        pts.iter()
            .map(|&p| p + step * JITTER * rng.random_range(-1.0..1.0))
            .collect()
    };
    let gain = axis(GAIN);
    let phase = axis(PHASE);
    let cfo = axis(CFO);
    let pa = axis(PA);
    let dc_re = axis(DC);
    let dc_im = axis(DC);
    (0..k_tx)
        .map(|i| TransmitterProfile {
            iq_gain_imbalance: gain[i],
            iq_phase_imbalance: phase[i],
            cfo: cfo[i],
            pa_cubic_coeff: pa[i].min(0.0),
            dc_offset: Complex64::new(dc_re[i], dc_im[i]),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_respect_bounds() {
        for k in [1, 3, 7, 64] {
            for p in transmitter_profiles(k, 9) {
                assert!(p.iq_gain_imbalance.abs() < 0.5);
                assert!(p.iq_phase_imbalance.abs() < std::f64::consts::FRAC_PI_4);
                assert!(p.cfo.abs() < 0.05);
                assert!(p.pa_cubic_coeff > -0.5 && p.pa_cubic_coeff <= 0.0);
            }
        }
    }

    #[test]
    fn profiles_are_seed_deterministic() {
        assert_eq!(transmitter_profiles(7, 42), transmitter_profiles(7, 42));
        assert_ne!(transmitter_profiles(7, 42), transmitter_profiles(7, 43));
    }

    #[test]
    fn profiles_are_distinct_up_to_64_transmitters() {
        for seed in 0..4 {
            let ps = transmitter_profiles(64, seed);
            for i in 0..ps.len() {
                for j in i + 1..ps.len() {
                    assert_ne!(ps[i], ps[j]);
                    assert_ne!(ps[i].iq_gain_imbalance, ps[j].iq_gain_imbalance);
                }
            }
        }
    }
}
