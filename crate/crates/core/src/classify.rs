//! Supervised baselines and the three-way classification comparison.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::losses::loss_ce;
use crate::model::{leaky as leaky_relu, signals_tensor, Conv, Linear, Model, ParamStore};
use crate::synth::{Dataset, FACTOR_NAMES, N_FACTORS};
use crate::train::{train_on, Ablation, Adam, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct CnnConfig {
    pub channels: [usize; 4],
    pub kernel: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            channels: [16, 32, 64, 64],
            kernel: 5,
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Plain CNN: the encoder trunk followed by one linear softmax head.
#[derive(Clone, Debug)]
pub struct CnnClassifier {
    params: ParamStore<f64>,
    convs: Vec<Conv>,
    head: Linear,
    length: usize,
    classes: usize,
}

impl CnnClassifier {
    pub fn new(length: usize, classes: usize, cfg: &CnnConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::default();
        let mut c_in = 2;
        let convs = cfg
            .channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = Conv::new(&mut params, &format!("conv{i}"), c_in, c, cfg.kernel, &mut rng);
                c_in = c;
                conv
            })
            .collect();
        let head = Linear::new(&mut params, "head", c_in, classes, &mut rng);
        CnnClassifier { params, convs, head, length, classes }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn forward<'t>(&self, p: &crate::model::Bound<'t, f64>, x: Var<'t, f64>) -> Var<'t, f64> {
        let mut h = x;
        for conv in &self.convs {
            h = leaky_relu(conv.forward(p, h)).avg_pool2();
        }
        self.head.forward(p, h.mean_axis(2)).softmax(1)
    }

    /// Mini-batch training with cross-entropy; deterministic given `cfg.seed`.
    pub fn fit(&mut self, ds: &Dataset, factor: usize, cfg: &CnnConfig) -> Result<()> {
        if ds.length != self.length || ds.cardinalities[factor] != self.classes {
            return Err(Error::Data("dataset does not match the classifier".into()));
        }
        let mut adam = Adam::new(&self.params, cfg.learning_rate);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..ds.len()).collect();
        let mut tape = Tape::new();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for rows in order.chunks(cfg.batch_size) {
                let planar: Vec<Vec<f64>> = rows.iter().map(|&i| ds.signals[i].to_planar()).collect();
                let labels: Vec<usize> = rows.iter().map(|&i| ds.labels[i].get(factor)).collect();
                tape.reset();
                let grads = {
                    let p = self.params.bind(&tape);
                    let probs = self.forward(&p, tape.constant(signals_tensor(&planar, self.length)));
                    let loss = loss_ce(&[probs], &[labels]);
                    let g = tape.backward(loss)?;
                    self.params.ids().map(|id| g.get(p.get(id)).cloned()).collect::<Vec<_>>()
                };
                adam.update(&mut self.params, &grads);
            }
        }
        if self.params.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op: "cnn classifier training" })
        }
    }

    /// Class probabilities of planar `2·L` signals.
    pub fn probabilities(&self, planar: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(planar.len());
        for chunk in planar.chunks(256) {
            let tape = Tape::new();
            let p = self.params.bind_const(&tape);
            let probs = self.forward(&p, tape.constant(signals_tensor(chunk, self.length)));
            tape.check()?;
            out.extend(probs.value().data().chunks(self.classes).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn accuracy(&self, ds: &Dataset, factor: usize) -> Result<f64> {
        let planar: Vec<Vec<f64>> = ds.signals.iter().map(|s| s.to_planar()).collect();
        let probs = self.probabilities(&planar)?;
        let hits = probs
            .iter()
            .zip(&ds.labels)
            .filter(|(p, l)| argmax(p) == l.get(factor))
            .count();
        Ok(hits as f64 / ds.len() as f64)
    }
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

/// Per-factor accuracy of the model's own classifier heads.
pub fn model_accuracy(model: &Model<f64>, ds: &Dataset) -> Result<Vec<f64>> {
    let mut hits = [0usize; N_FACTORS];
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(256) {
        let planar: Vec<Vec<f64>> = chunk.iter().map(|&i| ds.signals[i].to_planar()).collect();
        let reprs = model.encode(&signals_tensor(&planar, ds.length))?;
        let feats = model.decode_factor(&reprs)?;
        for (f, hit) in hits.iter_mut().enumerate() {
            let x: Vec<Vec<f64>> = feats.iter().map(|per| per[f].clone()).collect();
            let probs = model.classify_factor(f, &x)?;
            *hit += probs
                .iter()
                .zip(chunk)
                .filter(|(p, &i)| argmax(p) == ds.labels[i].get(f))
                .count();
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / ds.len() as f64).collect())
}

/// Seeded 8:2 split of a dataset into (train, test).
pub fn split_dataset(ds: &Dataset, seed: u64) -> (Dataset, Dataset) {
    let (train, test) = crate::metrics::split(ds.len(), 0.8, seed);
    (ds.subset(&train), ds.subset(&test))
}

/// Accuracy table, one row per variant.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifyReport {
    pub rows: Vec<(String, Vec<f64>)>,
}

impl ClassifyReport {
    pub fn average(&self, variant: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|(n, _)| n == variant)
            .map(|(_, a)| a.iter().sum::<f64>() / a.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant");
        for name in FACTOR_NAMES {
            write!(s, ",acc_{name}").unwrap();
        }
        s.push_str(",average\n");
        for (name, acc) in &self.rows {
            s.push_str(name);
            for a in acc {
                write!(s, ",{a:?}").unwrap();
            }
            writeln!(s, ",{:?}", acc.iter().sum::<f64>() / acc.len() as f64).unwrap();
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("classification report: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        if header != (ClassifyReport { rows: vec![] }).to_csv().trim_end() {
            return Err(bad("unexpected header"));
        }
        let rows = lines
            .map(|line| {
                let mut cells = line.split(',');
                let name = cells.next().ok_or_else(|| bad("empty row"))?.to_string();
                let vals = cells
                    .map(|c| c.parse::<f64>().map_err(|_| bad("bad value")))
                    .collect::<Result<Vec<_>>>()?;
                if vals.len() != N_FACTORS + 1 {
                    return Err(bad("wrong column count"));
                }
                Ok((name, vals[..N_FACTORS].to_vec()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassifyReport { rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::atomic_write_str(path, &self.to_csv())
    }
}

pub const VARIANT_FULL: &str = "full";
pub const VARIANT_LC_ONLY: &str = "lc_only";
pub const VARIANT_SEPARATE: &str = "separate";

/// Trains the full model, the classification-only model and one plain CNN per
/// factor on the same 8:2 split and reports test accuracy.
pub fn classify_compare(ds: &Dataset, cfg: &TrainConfig, cnn: &CnnConfig) -> Result<ClassifyReport> {
    ds.validate()?;
    let (train, test) = split_dataset(ds, cfg.seed);
    let full = train_on(&train, cfg, |_| {})?;
    let lc_cfg = TrainConfig {
        ablation: Ablation {
            classification: true,
            fd: false,
            se: false,
            rc: false,
        },
        ..cfg.clone()
    };
    let lc = train_on(&train, &lc_cfg, |_| {})?;
    let separate = (0..N_FACTORS)
        .map(|f| {
            let mut c = CnnClassifier::new(ds.length, ds.cardinalities[f], cnn);
            c.fit(&train, f, cnn)?;
            c.accuracy(&test, f)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassifyReport {
        rows: vec![
            (VARIANT_FULL.into(), model_accuracy(&full.model, &test)?),
            (VARIANT_LC_ONLY.into(), model_accuracy(&lc.model, &test)?),
            (VARIANT_SEPARATE.into(), separate),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_dataset, SynthConfig};

    fn tiny() -> Dataset {
        let cfg = SynthConfig {
            length: 32,
            signals_per_cell: 4,
            ..SynthConfig::default()
        };
        synth_dataset(&cfg).unwrap()
    }

    #[test]
    fn probabilities_are_distributions() {
        let ds = tiny();
        let c = CnnClassifier::new(32, ds.cardinalities[0], &CnnConfig::default());
        let planar: Vec<Vec<f64>> = ds.signals.iter().take(10).map(|s| s.to_planar()).collect();
        for p in c.probabilities(&planar).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn cnn_learns_snr_class() {
        let ds = tiny();
        let cfg = CnnConfig {
            epochs: 8,
            batch_size: 32,
            ..CnnConfig::default()
        };
        let mut c = CnnClassifier::new(32, ds.cardinalities[0], &cfg);
        let before = c.accuracy(&ds, 0).unwrap();
        c.fit(&ds, 0, &cfg).unwrap();
        let after = c.accuracy(&ds, 0).unwrap();
        assert!(after > before.max(0.6), "{before} -> {after}");
    }

    #[test]
    fn fit_is_deterministic() {
        let ds = tiny().subset(&(0..40).collect::<Vec<_>>());
        let cfg = CnnConfig {
            epochs: 2,
            ..CnnConfig::default()
        };
        let mut a = CnnClassifier::new(32, ds.cardinalities[1], &cfg);
        let mut b = a.clone();
        a.fit(&ds, 1, &cfg).unwrap();
        b.fit(&ds, 1, &cfg).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn report_shape_and_round_trip() {
        let r = ClassifyReport {
            rows: vec![
                (VARIANT_FULL.into(), vec![0.9, 0.8, 0.7]),
                (VARIANT_LC_ONLY.into(), vec![0.5, 0.5, 0.5]),
                (VARIANT_SEPARATE.into(), vec![1.0, 0.25, 0.125]),
            ],
        };
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "variant,acc_snr,acc_mod,acc_rff,average");
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().skip(1).all(|l| l.split(',').count() == N_FACTORS + 2));
        assert_eq!(ClassifyReport::from_csv(&csv).unwrap(), r);
        assert!((r.average(VARIANT_SEPARATE).unwrap() - 0.458333333333).abs() < 1e-9);
    }

    #[test]
    fn split_is_eight_to_two() {
        let ds = tiny();
        let (a, b) = split_dataset(&ds, 3);
        assert_eq!(a.len() + b.len(), ds.len());
        assert_eq!(a.len(), (ds.len() as f64 * 0.8).round() as usize);
        assert_eq!(split_dataset(&ds, 3).1, b);
    }

    #[test]
    fn model_accuracy_in_range() {
        let ds = tiny();
        let model = Model::new(crate::model::ModelConfig::new(32, &ds.cardinalities)).unwrap();
        for a in model_accuracy(&model, &ds).unwrap() {
            assert!((0.0..=1.0).contains(&a));
        }
    }
}
