//! Synthetic factor-labelled I/Q signals.
//!
//! Every signal passes through the chain
//! symbols → rectangular pulses → I/Q imbalance (+ DC offset) → PA compression
//! → CFO → AWGN, with the transmitter impairments taken from the profile of its
//! transmitter class and the noise level from its SNR class. All three factors
//! are therefore known exactly.

mod constellation;
mod dataset;
mod impairments;
mod profile;

use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use constellation::{map_symbols, Constellation, Family};
pub use dataset::{Dataset, FactorLabels, IqSignal, FACTOR_NAMES, N_FACTORS};
pub use impairments::{
    apply_awgn, apply_cfo, apply_iq_imbalance, apply_pa_nonlinearity, mean_power, normalize_power, pulse_shape,
};
pub use profile::{transmitter_profiles, TransmitterProfile};

use crate::error::{Error, Result};
use crate::kv::KvFile;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub length: usize,
    pub snr_grid: Vec<f64>,
    pub mod_families: Vec<(Family, usize)>,
    pub k_tx: usize,
    pub signals_per_cell: usize,
    pub samples_per_symbol: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Desk-scale version of the full factor grid: 7 SNR classes
    /// (−15..15 dB in 5 dB steps), 5 modulation families, 7 transmitters.
    fn default() -> Self {
        SynthConfig {
            length: 64,
            snr_grid: (0..7).map(|i| -15.0 + 5.0 * i as f64).collect(),
            mod_families: Family::ALL.iter().map(|&f| (f, f.default_order())).collect(),
            k_tx: 7,
            signals_per_cell: 100,
            samples_per_symbol: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn k_snr(&self) -> usize {
        self.snr_grid.len()
    }

    pub fn k_mod(&self) -> usize {
        self.mod_families.len()
    }

    pub fn cardinalities(&self) -> [usize; N_FACTORS] {
        [self.k_snr(), self.k_mod(), self.k_tx]
    }

    pub fn cell_count(&self) -> Option<usize> {
        self.k_snr().checked_mul(self.k_mod())?.checked_mul(self.k_tx)
    }

    pub fn total_signals(&self) -> Option<usize> {
        self.cell_count()?.checked_mul(self.signals_per_cell)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.length == 0 || self.samples_per_symbol == 0 || self.signals_per_cell == 0 {
            return bad("length, samples_per_symbol and signals_per_cell must be positive");
        }
        if self.snr_grid.is_empty() || self.mod_families.is_empty() || self.k_tx == 0 {
            return bad("every factor needs at least one class");
        }
        if self.snr_grid.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return bad("snr_grid entries must be numbers or +inf");
        }
        if self.cardinalities().iter().any(|&k| k > u16::MAX as usize) {
            return bad("class counts must fit in u16");
        }
        for &(f, order) in &self.mod_families {
            Constellation::new(f, order)?;
        }
        match self.total_signals() {
            Some(n) if n <= u32::MAX as usize => Ok(()),
            _ => bad("cell count overflow: dataset would exceed u32 signals"),
        }
    }

    /// Reads a `key = value` file. Recognised keys: `length`, `snr_grid`,
    /// `mod_families`, `mod_orders`, `k_snr`, `k_mod`, `k_tx`,
    /// `signals_per_cell`, `samples_per_symbol`, `seed`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut kv = KvFile::read(path)?;
        let cfg = Self::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    pub fn from_kv(kv: &mut KvFile) -> Result<Self> {
        let mut cfg = SynthConfig::default();
        let path = kv.path().to_path_buf();
        let cfg_err = |msg: String| Error::ConfigFile { path: path.clone(), msg };
        if let Some(v) = kv.take("length")? {
            cfg.length = v;
        }
        if let Some(v) = kv.take_list::<f64>("snr_grid")? {
            cfg.snr_grid = v;
        }
        if let Some(names) = kv.take_list::<String>("mod_families")? {
            let fams = names.iter().map(|n| n.parse()).collect::<Result<Vec<Family>>>()?;
            cfg.mod_families = fams.into_iter().map(|f| (f, f.default_order())).collect();
        }
        if let Some(orders) = kv.take_list::<usize>("mod_orders")? {
            if orders.len() != cfg.mod_families.len() {
                return Err(cfg_err("mod_orders length differs from mod_families".into()));
            }
            for (slot, o) in cfg.mod_families.iter_mut().zip(orders) {
                slot.1 = o;
            }
        }
        if let Some(k) = kv.take::<usize>("k_snr")? {
            if k != cfg.k_snr() {
                return Err(cfg_err(format!("k_snr = {k} but snr_grid has {} entries", cfg.k_snr())));
            }
        }
        if let Some(k) = kv.take::<usize>("k_mod")? {
            if k != cfg.k_mod() {
                return Err(cfg_err(format!("k_mod = {k} but mod_families has {} entries", cfg.k_mod())));
            }
        }
        if let Some(v) = kv.take("k_tx")? {
            cfg.k_tx = v;
        }
        if let Some(v) = kv.take("signals_per_cell")? {
            cfg.signals_per_cell = v;
        }
        if let Some(v) = kv.take("samples_per_symbol")? {
            cfg.samples_per_symbol = v;
        }
        if let Some(v) = kv.take("seed")? {
            cfg.seed = v;
        }
        cfg.validate().map_err(|e| match e {
            Error::Config(msg) => cfg_err(msg),
            other => other,
        })?;
        Ok(cfg)
    }
}

/// One signal before and after the channel.
#[derive(Clone, Debug)]
pub struct Rendered {
    /// Output of the transmitter chain, unit power.
    pub transmitted: Vec<Complex64>,
    /// Transmitted signal plus channel noise.
    pub received: Vec<Complex64>,
}

/// Transmitter → channel chain for one (snr, modulation, transmitter) cell.
#[derive(Clone, Debug)]
pub struct SignalChain {
    pub constellation: Constellation,
    pub profile: TransmitterProfile,
    pub snr_db: f64,
    pub samples_per_symbol: usize,
    pub length: usize,
}

impl SignalChain {
    pub fn render(&self, rng: &mut ChaCha8Rng) -> Rendered {
        let n_sym = self.length.div_ceil(self.samples_per_symbol);
        let symbols = self.constellation.sample(n_sym, rng);
        let x = pulse_shape(&symbols, self.samples_per_symbol, self.length);
        let p = &self.profile;
        let mut x = apply_iq_imbalance(&x, p.iq_gain_imbalance, p.iq_phase_imbalance);
        x.iter_mut().for_each(|v| *v += p.dc_offset);
        let x = apply_pa_nonlinearity(&x, p.pa_cubic_coeff);
        let transmitted = apply_cfo(&x, p.cfo);
        let received = apply_awgn(&transmitted, self.snr_db, rng);
        Rendered { transmitted, received }
    }
}

/// Chains for every cell in `(snr, mod, tx)` row-major order.
pub fn cell_chains(cfg: &SynthConfig) -> Result<Vec<(FactorLabels, SignalChain)>> {
    cfg.validate()?;
    let profiles = transmitter_profiles(cfg.k_tx, cfg.seed);
    let mut cells = Vec::with_capacity(cfg.cell_count().unwrap_or(0));
    for (s, &snr_db) in cfg.snr_grid.iter().enumerate() {
        for (m, &(family, order)) in cfg.mod_families.iter().enumerate() {
            for (t, profile) in profiles.iter().enumerate() {
                cells.push((
                    FactorLabels::from_array([s, m, t]),
                    SignalChain {
                        constellation: Constellation::new(family, order)?,
                        profile: *profile,
                        snr_db,
                        samples_per_symbol: cfg.samples_per_symbol,
                        length: cfg.length,
                    },
                ));
            }
        }
    }
    Ok(cells)
}

/// Random stream of cell `index`; independent of every other cell.
pub fn cell_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Generates the full dataset. Signals are grouped by cell and quantized to the
/// f32 precision of the file format, so the in-memory dataset equals what
/// [`Dataset::load`] returns.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    let cells = cell_chains(cfg)?;
    let mut signals = Vec::with_capacity(cfg.total_signals().unwrap_or(0));
    let mut labels = Vec::with_capacity(signals.capacity());
    for (index, (label, chain)) in cells.iter().enumerate() {
        let mut rng = cell_rng(cfg.seed, index);
        for _ in 0..cfg.signals_per_cell {
            let r = chain.render(&mut rng);
            let samples = r
                .received
                .iter()
                .map(|v| Complex64::new(v.re as f32 as f64, v.im as f32 as f64))
                .collect();
            signals.push(IqSignal::new(samples));
            labels.push(*label);
        }
    }
    Ok(Dataset {
        length: cfg.length,
        cardinalities: cfg.cardinalities(),
        signals,
        labels,
    })
}

#[cfg(test)]
mod tests;
