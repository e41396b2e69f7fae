//! Deterministic training loop, checkpoints and representation export.

mod adam;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use adam::Adam;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::kv::{parse_flag, KvFile};
use crate::losses::{self, Components, LossWeights, Terms};
use crate::metrics::ReprDataset;
use crate::model::{read_records, signals_tensor, write_records, Bound, Codes, Model, ModelConfig, Record};
use crate::synth::Dataset;

const SHUFFLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Which objective terms take part. `classification` covers both CE and IE.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablation {
    pub classification: bool,
    pub fd: bool,
    pub se: bool,
    pub rc: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            classification: true,
            fd: true,
            se: true,
            rc: true,
        }
    }
}

impl Ablation {
    pub fn any(&self) -> bool {
        self.classification || self.fd || self.se || self.rc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub ablation: Ablation,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub d_c: usize,
    pub d_f: usize,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::new(64, &[2]);
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            weights: LossWeights::default(),
            ablation: Ablation::default(),
            steps: m.steps,
            beta_start: m.beta_start,
            beta_end: m.beta_end,
            d_c: m.d_c,
            d_f: m.d_f,
            dataset: None,
            checkpoint: None,
            trace: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !self.ablation.any() {
            return bad("at least one loss must be enabled");
        }
        self.weights.validate()
    }

    pub fn model_config(&self, length: usize, cardinalities: &[usize]) -> ModelConfig {
        let mut m = ModelConfig::new(length, cardinalities);
        m.steps = self.steps;
        m.beta_start = self.beta_start;
        m.beta_end = self.beta_end;
        m.d_c = self.d_c;
        m.d_f = self.d_f;
        m.seed = self.seed;
        m
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut kv = KvFile::read(path)?;
        let cfg = Self::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    /// Reads known keys; relative paths resolve against the file's directory.
    pub fn from_kv(kv: &mut KvFile) -> Result<Self> {
        let mut c = TrainConfig::default();
        let path = kv.path().to_path_buf();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let file_err = |msg: String| Error::ConfigFile { path: path.clone(), msg };
        macro_rules! num {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.take($key)? {
                    $field = v;
                }
            };
        }
        num!("epochs", c.epochs);
        num!("batch_size", c.batch_size);
        num!("learning_rate", c.learning_rate);
        num!("seed", c.seed);
        num!("lambda_rc", c.weights.rc);
        num!("lambda_d", c.weights.d);
        num!("lambda_t", c.weights.t);
        num!("lambda_fd", c.weights.fd);
        num!("lambda_se", c.weights.se);
        num!("lambda_ce", c.weights.ce);
        num!("lambda_ie", c.weights.ie);
        num!("diffusion_steps", c.steps);
        num!("beta_start", c.beta_start);
        num!("beta_end", c.beta_end);
        num!("d_c", c.d_c);
        num!("d_f", c.d_f);
        for (key, slot) in [
            ("enable_c", &mut c.ablation.classification),
            ("enable_fd", &mut c.ablation.fd),
            ("enable_se", &mut c.ablation.se),
            ("enable_rc", &mut c.ablation.rc),
        ] {
            if let Some(v) = kv.take_str(key) {
                *slot = parse_flag(&v).ok_or_else(|| file_err(format!("`{key}` must be true or false, got `{v}`")))?;
            }
        }
        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_relative() {
                base.join(p)
            } else {
                p
            }
        };
        c.dataset = kv.take_str("dataset").map(resolve);
        c.checkpoint = kv.take_str("checkpoint").map(resolve);
        c.trace = kv.take_str("trace").map(resolve);
        c.validate().map_err(|e| match e {
            Error::Config(msg) => file_err(msg),
            other => other,
        })?;
        Ok(c)
    }
}

/// One mini-batch with its sampled diffusion steps and noise.
pub struct Batch {
    /// `[B, 2, L]`
    pub x0: Tensor<f64>,
    /// `labels[n][b]`
    pub labels: Vec<Vec<usize>>,
    pub steps: Vec<usize>,
    /// `[B, 2, L]`
    pub noise: Tensor<f64>,
}

impl Batch {
    pub fn from_dataset(ds: &Dataset, rows: &[usize], model: &Model<f64>, rng: &mut ChaCha8Rng) -> Self {
        let planar: Vec<Vec<f64>> = rows.iter().map(|&i| ds.signals[i].to_planar()).collect();
        let x0 = signals_tensor(&planar, ds.length);
        let labels = (0..ds.cardinalities.len())
            .map(|n| rows.iter().map(|&i| ds.labels[i].get(n)).collect())
            .collect();
        let t_max = model.schedule().steps();
        let steps = rows.iter().map(|_| rng.random_range(1..=t_max)).collect();
        let noise = Tensor::from_fn(x0.shape(), |_| StandardNormal.sample(&mut *rng));
        Batch { x0, labels, steps, noise }
    }
}

/// Builds every enabled objective term for `batch`. Disabled terms are not
/// computed, so they cannot contribute gradient.
pub fn forward_losses<'t>(
    model: &Model<f64>,
    p: &Bound<'t, f64>,
    tape: &'t Tape<f64>,
    batch: &Batch,
    ablation: Ablation,
) -> Result<Terms<'t, f64>> {
    let x0 = tape.constant(batch.x0.clone());
    let codes: Codes<'t, f64> = model.encode_t(p, x0);
    let mut terms = Terms::none();
    if ablation.classification {
        let feats = model.decode_factor_t(p, codes.factor);
        let probs: Vec<_> = feats.iter().enumerate().map(|(n, &f)| model.classify_t(p, n, f)).collect();
        terms.ce = Some(losses::loss_ce(&probs, &batch.labels));
        let frozen = p.frozen(&model.groups().classifiers);
        let n = feats.len();
        let cross: Vec<_> = (0..n)
            .flat_map(|n1| (0..n).filter(move |&n2| n2 != n1).map(move |n2| (n1, n2)))
            .map(|(n1, n2)| model.classify_t(&frozen, n2, feats[n1]))
            .collect();
        if !cross.is_empty() {
            terms.ie = Some(losses::loss_ie(&cross));
        }
    }
    if ablation.fd {
        terms.fd = Some(losses::loss_fd(codes.factor)?);
    }
    if ablation.se {
        terms.se = Some(losses::loss_se(model.decode_space_t(p, codes.space)));
    }
    if ablation.rc {
        let s = model.schedule();
        let len = batch.x0.len() / batch.steps.len();
        let xt = Tensor::from_fn(batch.x0.shape(), |i| {
            let t = batch.steps[i / len];
            s.alpha_bar(t).sqrt() * batch.x0.data()[i] + s.one_minus_alpha_bar(t).sqrt() * batch.noise.data()[i]
        });
        let map = model.factor_map_t(p, codes);
        let pred = model.denoise_t(p, tape.constant(xt), &batch.steps, map);
        terms.rc = Some(losses::loss_rc(pred, x0));
    }
    Ok(terms)
}

/// Mean loss terms over one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimiser steps taken so far.
    pub step: usize,
    pub total: f64,
    pub terms: Components,
}

pub const TRACE_HEADER: &str = "epoch,step,l_total,l_rc,l_fd,l_se,l_ce,l_ie";

pub fn trace_csv(trace: &[EpochRecord]) -> String {
    let mut s = format!("{TRACE_HEADER}\n");
    for r in trace {
        let c = r.terms;
        writeln!(s, "{},{},{:?},{:?},{:?},{:?},{:?},{:?}", r.epoch, r.step, r.total, c.rc, c.fd, c.se, c.ce, c.ie).unwrap();
    }
    s
}

pub fn parse_trace(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::Data("loss trace has an unexpected header".into()));
    }
    lines
        .map(|line| {
            let c: Vec<&str> = line.split(',').collect();
            let bad = || Error::Data(format!("bad loss trace row `{line}`"));
            if c.len() != 8 {
                return Err(bad());
            }
            let f = |i: usize| c[i].parse::<f64>().map_err(|_| bad());
            Ok(EpochRecord {
                epoch: c[0].parse().map_err(|_| bad())?,
                step: c[1].parse().map_err(|_| bad())?,
                total: f(2)?,
                terms: Components {
                    rc: f(3)?,
                    fd: f(4)?,
                    se: f(5)?,
                    ce: f(6)?,
                    ie: f(7)?,
                },
            })
        })
        .collect()
}

pub struct TrainOutcome {
    pub model: Model<f64>,
    pub adam: Adam,
    pub trace: Vec<EpochRecord>,
}

/// Trains a fresh model on `ds`. `on_epoch` sees every trace record as it is produced.
pub fn train_on(ds: &Dataset, cfg: &TrainConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Model::<f64>::new(cfg.model_config(ds.length, &ds.cardinalities))?;
    let adam = Adam::new(model.params(), cfg.learning_rate);
    train_from(model, adam, ds, cfg, on_epoch)
}

/// Continues training `model` with optimiser state `adam`.
pub fn train_from(
    mut model: Model<f64>,
    mut adam: Adam,
    ds: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    ds.validate()?;
    if ds.len() < 2 {
        return Err(Error::Data("training needs at least two signals".into()));
    }
    if ds.length != model.config().length || ds.cardinalities[..] != model.config().cardinalities[..] {
        return Err(Error::Data("dataset shape does not match the model".into()));
    }
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle.set_stream(SHUFFLE_STREAM);
    let mut noise = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise.set_stream(NOISE_STREAM);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    let mut tape = Tape::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut sum = Components::default();
        let mut total = 0.0;
        let mut batches = 0usize;
        for rows in order.chunks(cfg.batch_size).filter(|r| r.len() >= 2) {
            let batch = Batch::from_dataset(ds, rows, &model, &mut noise);
            tape.reset();
            let (values, loss_value, grads) = {
                let p = model.params().bind(&tape);
                let terms = forward_losses(&model, &p, &tape, &batch, cfg.ablation)?;
                let loss = terms.total(&cfg.weights).expect("validated: some loss enabled");
                if tape.check().is_err() || !loss.item().is_finite() {
                    return Err(Error::NonFiniteLoss { step });
                }
                let g = tape.backward(loss).map_err(|e| match e {
                    Error::NonFinite { .. } => Error::NonFiniteLoss { step },
                    other => other,
                })?;
                let ids: Vec<_> = model.params().ids().collect();
                let grads: Vec<Option<Tensor<f64>>> = ids.iter().map(|&id| g.get(p.get(id)).cloned()).collect();
                (terms.values(), loss.item(), grads)
            };
            adam.update(model.params_mut(), &grads);
            if !model.params().all_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            step += 1;
            batches += 1;
            total += loss_value;
            sum.rc += values.rc;
            sum.fd += values.fd;
            sum.se += values.se;
            sum.ce += values.ce;
            sum.ie += values.ie;
        }
        let k = batches.max(1) as f64;
        let rec = EpochRecord {
            epoch,
            step,
            total: total / k,
            terms: Components {
                rc: sum.rc / k,
                fd: sum.fd / k,
                se: sum.se / k,
                ce: sum.ce / k,
                ie: sum.ie / k,
            },
        };
        on_epoch(&rec);
        trace.push(rec);
    }
    Ok(TrainOutcome { model, adam, trace })
}

/// Loads the dataset named in `cfg`, trains, and writes the checkpoint and trace if configured.
pub fn train(cfg: &TrainConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset path given".into()))?;
    let ds = Dataset::load(path)?;
    let out = train_on(&ds, cfg, on_epoch)?;
    if let Some(ck) = &cfg.checkpoint {
        save_checkpoint(ck, &out.model, Some(&out.adam))?;
    }
    if let Some(tr) = &cfg.trace {
        crate::io::atomic_write_str(tr, &trace_csv(&out.trace))?;
    }
    Ok(out)
}

pub fn checkpoint_records(model: &Model<f64>, adam: Option<&Adam>) -> Vec<Record> {
    let mut recs = model.to_records();
    if let Some(a) = adam {
        recs.extend(a.to_records(model.params()));
    }
    recs
}

pub fn save_checkpoint(path: &Path, model: &Model<f64>, adam: Option<&Adam>) -> Result<()> {
    write_records(path, &checkpoint_records(model, adam))
}

/// Model plus optimiser state when the checkpoint carries one.
pub fn load_checkpoint(path: &Path) -> Result<(Model<f64>, Option<Adam>)> {
    let recs = read_records(path)?;
    let model = Model::from_records(&recs)?;
    let adam = if recs.iter().any(|r| r.name == "adam.step") {
        Some(Adam::from_records(&recs, model.params())?)
    } else {
        None
    };
    Ok((model, adam))
}

/// Encodes every signal and collects the concatenated factor codes.
pub fn export_representations(model: &Model<f64>, ds: &Dataset) -> Result<ReprDataset> {
    ds.validate()?;
    if ds.length != model.config().length {
        return Err(Error::Data(format!(
            "dataset length {} differs from model length {}",
            ds.length,
            model.config().length
        )));
    }
    let mut codes = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(256) {
        let planar: Vec<Vec<f64>> = chunk.iter().map(|&i| ds.signals[i].to_planar()).collect();
        for r in model.encode(&signals_tensor(&planar, ds.length))? {
            codes.push(r.flat_factor_codes());
        }
    }
    let factors = ds.labels.iter().map(|l| l.as_array().to_vec()).collect();
    ReprDataset::new(codes, factors, ds.cardinalities.to_vec())
}
