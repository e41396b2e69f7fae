use std::collections::HashMap;
use std::path::Path;

use num_complex::Complex64;

use super::*;
use crate::kv::KvFile;

fn cfg333(spc: usize) -> SynthConfig {
    SynthConfig {
        snr_grid: vec![5.0, 10.0, 15.0],
        mod_families: vec![(Family::Ask, 4), (Family::Psk, 4), (Family::Qam, 16)],
        k_tx: 3,
        signals_per_cell: spc,
        seed: 17,
        ..SynthConfig::default()
    }
}

#[test]
fn counts_and_uniform_labels() {
    let ds = synth_dataset(&cfg333(100)).unwrap();
    assert_eq!(ds.len(), 2700);
    for f in 0..N_FACTORS {
        let mut hist: HashMap<usize, usize> = HashMap::new();
        for l in &ds.labels {
            *hist.entry(l.get(f)).or_default() += 1;
        }
        assert_eq!(hist.len(), 3);
        assert!(hist.values().all(|&c| c == 900));
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let a = synth_dataset(&cfg333(5)).unwrap();
    let b = synth_dataset(&cfg333(5)).unwrap();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    let mut other = cfg333(5);
    other.seed += 1;
    assert_ne!(synth_dataset(&other).unwrap(), a);
}

#[test]
fn file_round_trip_equals_memory() {
    let ds = synth_dataset(&cfg333(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.rfds");
    ds.save(&p).unwrap();
    assert_eq!(Dataset::load(&p).unwrap(), ds);
}

#[test]
fn default_config_mirrors_full_factor_grid() {
    let cfg = SynthConfig::default();
    assert_eq!(cfg.cardinalities(), [7, 5, 7]);
    assert_eq!(cfg.snr_grid, vec![-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0]);
    assert_eq!(cfg.length, 64);
    assert_eq!(cfg.total_signals(), Some(7 * 5 * 7 * 100));
}

#[test]
fn transmitted_signals_have_unit_power() {
    let cfg = SynthConfig {
        signals_per_cell: 3,
        ..SynthConfig::default()
    };
    for (i, (_, chain)) in cell_chains(&cfg).unwrap().iter().enumerate() {
        let mut rng = cell_rng(cfg.seed, i);
        for _ in 0..cfg.signals_per_cell {
            let r = chain.render(&mut rng);
            assert!((mean_power(&r.transmitted) - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn empirical_snr_matches_label_per_cell() {
    let cfg = SynthConfig {
        signals_per_cell: 160, // 160 * 64 > 1e4 samples per cell
        k_tx: 2,
        ..SynthConfig::default()
    };
    for (i, (_, chain)) in cell_chains(&cfg).unwrap().iter().enumerate() {
        let mut rng = cell_rng(cfg.seed, i);
        let (mut sig, mut noise) = (0.0, 0.0);
        for _ in 0..cfg.signals_per_cell {
            let r = chain.render(&mut rng);
            sig += r.transmitted.iter().map(|v| v.norm_sqr()).sum::<f64>();
            noise += r.transmitted.iter().zip(&r.received).map(|(a, b)| (b - a).norm_sqr()).sum::<f64>();
        }
        let snr = 10.0 * (sig / noise).log10();
        assert!((snr - chain.snr_db).abs() < 0.5, "cell {i}: {snr} vs {}", chain.snr_db);
    }
}

/// Scale-agnostic nearest-constellation decoder: tries every scale that maps
/// some sample exactly onto some point and keeps the smallest residual.
fn decode_family(x: &[Complex64], candidates: &[Constellation]) -> usize {
    let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
    for (ci, c) in candidates.iter().enumerate() {
        let mut best_c = f64::INFINITY;
        for s in x {
            for p in c.points() {
                if p.norm() < 1e-12 {
                    continue;
                }
                let scale = s.norm() / p.norm();
                let resid: f64 = x
                    .iter()
                    .map(|v| c.points().iter().map(|q| (v - q * scale).norm_sqr()).fold(f64::INFINITY, f64::min))
                    .sum();
                best_c = best_c.min(resid);
            }
        }
        // ties go to the smaller constellation
        let key = (best_c, c.order(), ci);
        if key.0 < best.0 - 1e-12 || ((key.0 - best.0).abs() <= 1e-12 && key.1 < best.1) {
            best = key;
        }
    }
    best.2
}

#[test]
fn clean_signals_decode_to_their_modulation() {
    let cfg = SynthConfig::default();
    let cons: Vec<Constellation> = cfg
        .mod_families
        .iter()
        .map(|&(f, o)| Constellation::new(f, o).unwrap())
        .collect();
    let mut rng = cell_rng(3, 0);
    for (m, c) in cons.iter().enumerate() {
        for _ in 0..40 {
            let syms = c.sample(cfg.length / cfg.samples_per_symbol, &mut rng);
            let x = pulse_shape(&syms, cfg.samples_per_symbol, cfg.length);
            assert_eq!(decode_family(&x, &cons), m, "{}", c.family());
        }
    }
}

#[test]
fn config_file_parsing() {
    let text = "length = 32\nsnr_grid = 0, 10\nmod_families = PSK, QAM_cross\nmod_orders = 8, 128\nk_tx = 4\nsignals_per_cell = 2\nseed = 9\n";
    let mut kv = KvFile::parse(text, Path::new("s.cfg")).unwrap();
    let cfg = SynthConfig::from_kv(&mut kv).unwrap();
    kv.finish().unwrap();
    assert_eq!(cfg.cardinalities(), [2, 2, 4]);
    assert_eq!(cfg.mod_families[1], (Family::QamCross, 128));
    assert_eq!(synth_dataset(&cfg).unwrap().len(), 32);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut kv = KvFile::parse("mod_families = QAM\nmod_orders = 8\n", Path::new("s.cfg")).unwrap();
    assert!(SynthConfig::from_kv(&mut kv).unwrap_err().is_config());
    let huge = SynthConfig {
        k_tx: 60000,
        signals_per_cell: 100_000,
        ..SynthConfig::default()
    };
    assert!(huge.validate().is_err());
    let mut kv = KvFile::parse("k_snr = 3\n", Path::new("s.cfg")).unwrap();
    assert!(SynthConfig::from_kv(&mut kv).is_err());
}
