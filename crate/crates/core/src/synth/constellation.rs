use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

/// Modulation family of the synthetic transmitter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Ask,
    Psk,
    Pam,
    Qam,
    QamCross,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Ask, Family::Psk, Family::Pam, Family::Qam, Family::QamCross];

    pub fn default_order(self) -> usize {
        match self {
            Family::Ask | Family::Psk | Family::Pam => 4,
            Family::Qam => 16,
            Family::QamCross => 32,
        }
    }

    pub fn supports(self, order: usize) -> bool {
        match self {
            Family::Ask | Family::Pam => matches!(order, 2 | 4),
            Family::Psk => matches!(order, 2 | 4 | 8),
            Family::Qam => matches!(order, 16 | 64),
            Family::QamCross => matches!(order, 32 | 128),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Ask => "ASK",
            Family::Psk => "PSK",
            Family::Pam => "PAM",
            Family::Qam => "QAM",
            Family::QamCross => "QAM_cross",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ASK" => Ok(Family::Ask),
            "PSK" => Ok(Family::Psk),
            "PAM" => Ok(Family::Pam),
            "QAM" => Ok(Family::Qam),
            "QAM_CROSS" | "QAMCROSS" => Ok(Family::QamCross),
            other => Err(Error::Config(format!("unknown modulation family `{other}`"))),
        }
    }
}

/// Unit-mean-power point set of one (family, order) pair.
#[derive(Clone, Debug)]
pub struct Constellation {
    family: Family,
    points: Vec<Complex64>,
}

impl Constellation {
    pub fn new(family: Family, order: usize) -> Result<Self> {
        if !family.supports(order) {
            return Err(Error::Config(format!("{family} does not support order {order}")));
        }
        let raw: Vec<Complex64> = match family {
            Family::Ask => (1..=order).map(|k| Complex64::new(k as f64, 0.0)).collect(),
            Family::Pam => (0..order)
                .map(|k| Complex64::new(2.0 * k as f64 - (order as f64 - 1.0), 0.0))
                .collect(),
            Family::Psk => (0..order)
                .map(|k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / order as f64))
                .collect(),
            Family::Qam => {
                let side = (order as f64).sqrt() as usize;
                grid(side, |_, _| true)
            }
            Family::QamCross => {
                // 6x6 (or 12x12) grid with the four corner blocks removed.
                let (side, keep) = if order == 32 { (6, 3.0) } else { (12, 7.0) };
                grid(side, |i, q| !(i.abs() > keep && q.abs() > keep))
            }
        };
        debug_assert_eq!(raw.len(), order);
        let power = raw.iter().map(|p| p.norm_sqr()).sum::<f64>() / raw.len() as f64;
        let scale = power.sqrt().recip();
        Ok(Constellation {
            family,
            points: raw.into_iter().map(|p| p * scale).collect(),
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Maps symbol indices onto constellation points.
    pub fn map(&self, indices: &[usize]) -> Result<Vec<Complex64>> {
        indices
            .iter()
            .map(|&i| {
                self.points
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::Contract(format!("symbol index {i} >= order {}", self.order())))
            })
            .collect()
    }

    /// Draws `n` symbols uniformly from the constellation.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Complex64> {
        (0..n).map(|_| self.points[rng.random_range(0..self.order())]).collect()
    }
}

fn grid(side: usize, keep: impl Fn(f64, f64) -> bool) -> Vec<Complex64> {
    let coord = |k: usize| 2.0 * k as f64 - (side as f64 - 1.0);
    let mut pts = Vec::new();
    for i in 0..side {
        for q in 0..side {
            let (re, im) = (coord(i), coord(q));
            if keep(re, im) {
                pts.push(Complex64::new(re, im));
            }
        }
    }
    pts
}

/// Maps symbol indices of a (family, order) pair to unit-power symbols.
pub fn map_symbols(family: Family, order: usize, indices: &[usize]) -> Result<Vec<Complex64>> {
    Constellation::new(family, order)?.map(indices)
}
