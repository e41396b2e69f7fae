//! Conditional generation: factor swapping between signals and resampling of
//! a factor code from class-conditional pools.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::classify::CnnClassifier;
use crate::error::{Error, Result};
use crate::model::{signals_tensor, Model, Representations};
use crate::synth::{Dataset, FactorLabels, IqSignal, FACTOR_NAMES, N_FACTORS};

const GENERATION_STREAM: u64 = 3;
const POOL_STREAM: u64 = 4;
const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Source,
    Target,
}

impl Origin {
    fn pick(self, source: usize, target: usize) -> usize {
        match self {
            Origin::Source => source,
            Origin::Target => target,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Origin::Source => "src",
            Origin::Target => "dst",
        }
    }
}

/// Which signal contributes each factor's code pair, and which one is noised
/// as the starting point of the reverse process.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwapPlan {
    pub source: usize,
    pub target: usize,
    pub base: Origin,
    pub origins: [Origin; N_FACTORS],
    pub t_start: usize,
}

impl SwapPlan {
    /// Base = source, the listed factors taken from the target.
    pub fn taking(source: usize, target: usize, factors: &[usize], t_start: usize) -> Self {
        let mut origins = [Origin::Source; N_FACTORS];
        for &f in factors {
            origins[f] = Origin::Target;
        }
        SwapPlan {
            source,
            target,
            base: Origin::Source,
            origins,
            t_start,
        }
    }

    pub fn validate(&self, signals: usize, steps: usize) -> Result<()> {
        if self.source >= signals || self.target >= signals {
            return Err(Error::Data(format!(
                "signal ids {} / {} outside a dataset of {signals}",
                self.source, self.target
            )));
        }
        if !(1..=steps).contains(&self.t_start) {
            return Err(Error::Contract(format!("t_start {} outside 1..={steps}", self.t_start)));
        }
        if self.origins.iter().all(|&o| o == self.base) {
            return Err(Error::Contract("plan swaps no factor".into()));
        }
        Ok(())
    }

    /// Labels the generated signal is meant to carry.
    pub fn intended_labels(&self, ds: &Dataset) -> FactorLabels {
        let mut l = [0; N_FACTORS];
        for (f, o) in self.origins.iter().enumerate() {
            l[f] = ds.labels[o.pick(self.source, self.target)].get(f);
        }
        FactorLabels::from_array(l)
    }
}

/// The twelve plans of a signal pair: either signal as base, taking one or two
/// factors from the other.
pub fn paired_plans(source: usize, target: usize, t_start: usize) -> Vec<SwapPlan> {
    let mut plans = Vec::with_capacity(12);
    for base in [Origin::Source, Origin::Target] {
        let other = match base {
            Origin::Source => Origin::Target,
            Origin::Target => Origin::Source,
        };
        for mask in 1..(1u32 << N_FACTORS) - 1 {
            let mut origins = [base; N_FACTORS];
            for (f, o) in origins.iter_mut().enumerate() {
                if mask & (1 << f) != 0 {
                    *o = other;
                }
            }
            plans.push(SwapPlan {
                source,
                target,
                base,
                origins,
                t_start,
            });
        }
    }
    plans
}

/// Factor index from its short name (`snr`, `mod`, `rff`).
pub fn factor_index(name: &str) -> Result<usize> {
    FACTOR_NAMES
        .iter()
        .position(|&n| n == name)
        .ok_or_else(|| Error::Config(format!("unknown factor `{name}`, expected one of {FACTOR_NAMES:?}")))
}

fn encode_rows(model: &Model<f64>, ds: &Dataset, rows: &[usize]) -> Result<Vec<Representations<f64>>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(256) {
        let planar: Vec<Vec<f64>> = chunk.iter().map(|&i| ds.signals[i].to_planar()).collect();
        out.extend(model.encode(&signals_tensor(&planar, ds.length))?);
    }
    Ok(out)
}

/// Noises each base signal to `t_start` and runs the reverse process
/// conditioned on the factor maps built from `reprs`.
pub fn generate(
    model: &Model<f64>,
    base: &[Vec<f64>],
    reprs: &[Representations<f64>],
    t_start: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<IqSignal>> {
    if base.len() != reprs.len() {
        return Err(Error::Data("one representation per base signal required".into()));
    }
    let steps = model.schedule().steps();
    if !(1..=steps).contains(&t_start) {
        return Err(Error::Contract(format!("t_start {t_start} outside 1..={steps}")));
    }
    let length = model.config().length;
    let mut out = Vec::with_capacity(base.len());
    for (b, r) in base.chunks(CHUNK).zip(reprs.chunks(CHUNK)) {
        let x0: Tensor<f64> = signals_tensor(b, length);
        let noise: Vec<f64> = (0..x0.len()).map(|_| StandardNormal.sample(rng)).collect();
        let xt = Tensor::new(x0.shape(), model.schedule().diffuse(x0.data(), t_start, &noise));
        let maps = model.build_factor_map(r)?;
        let refs: Vec<&Tensor<f64>> = maps.iter().map(|m| &m.map).collect();
        let gen = model.sample_reverse(&xt, t_start, &refs, rng)?;
        out.extend(gen.data().chunks(2 * length).map(IqSignal::from_planar));
    }
    Ok(out)
}

/// Runs every plan; deterministic given `seed`.
pub fn swap_factors(model: &Model<f64>, ds: &Dataset, plans: &[SwapPlan], seed: u64) -> Result<Vec<IqSignal>> {
    check_dataset(model, ds)?;
    for p in plans {
        p.validate(ds.len(), model.schedule().steps())?;
    }
    let mut rows: Vec<usize> = plans.iter().flat_map(|p| [p.source, p.target]).collect();
    rows.sort_unstable();
    rows.dedup();
    let encoded = encode_rows(model, ds, &rows)?;
    let repr_of = |i: usize| &encoded[rows.binary_search(&i).unwrap()];
    let mut rng = generation_rng(seed);
    let mut out = Vec::with_capacity(plans.len());
    // plans sharing t_start are batched together, in their original order
    let mut t_values: Vec<usize> = plans.iter().map(|p| p.t_start).collect();
    t_values.sort_unstable();
    t_values.dedup();
    let mut slots: Vec<Option<IqSignal>> = vec![None; plans.len()];
    for t in t_values {
        let idx: Vec<usize> = (0..plans.len()).filter(|&i| plans[i].t_start == t).collect();
        let base: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| ds.signals[plans[i].base.pick(plans[i].source, plans[i].target)].to_planar())
            .collect();
        let mixed: Vec<Representations<f64>> = idx.iter().map(|&i| mix(&plans[i], repr_of)).collect();
        for (i, s) in idx.into_iter().zip(generate(model, &base, &mixed, t, &mut rng)?) {
            slots[i] = Some(s);
        }
    }
    out.extend(slots.into_iter().map(|s| s.expect("every plan generated")));
    Ok(out)
}

fn mix<'a>(plan: &SwapPlan, repr_of: impl Fn(usize) -> &'a Representations<f64>) -> Representations<f64> {
    let (src, dst) = (repr_of(plan.source), repr_of(plan.target));
    let pick = |f: usize| match plan.origins[f] {
        Origin::Source => src,
        Origin::Target => dst,
    };
    Representations {
        factor_codes: (0..N_FACTORS).map(|f| pick(f).factor_codes[f].clone()).collect(),
        space_codes: (0..N_FACTORS).map(|f| pick(f).space_codes[f].clone()).collect(),
    }
}

fn generation_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(GENERATION_STREAM);
    rng
}

fn check_dataset(model: &Model<f64>, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    let cfg = model.config();
    if ds.length != cfg.length || ds.cardinalities[..] != cfg.cardinalities[..] {
        return Err(Error::Data("dataset shape does not match the checkpoint".into()));
    }
    Ok(())
}

/// Gaussian fit of `z^{c_n}` per (factor, class).
#[derive(Clone, Debug, PartialEq)]
pub struct CodePool {
    /// `[factor][class]`, `None` for classes absent from the fitting data.
    entries: Vec<Vec<Option<PoolEntry>>>,
}

#[derive(Clone, Debug, PartialEq)]
struct PoolEntry {
    mean: Vec<f64>,
    /// Lower Cholesky factor of the covariance, row-major.
    chol: Vec<f64>,
}

impl CodePool {
    pub fn fit(model: &Model<f64>, ds: &Dataset) -> Result<Self> {
        check_dataset(model, ds)?;
        let rows: Vec<usize> = (0..ds.len()).collect();
        let reprs = encode_rows(model, ds, &rows)?;
        let d = model.config().d_c;
        let entries = (0..N_FACTORS)
            .map(|f| {
                (0..ds.cardinalities[f])
                    .map(|k| {
                        let codes: Vec<&Vec<f64>> = rows
                            .iter()
                            .filter(|&&i| ds.labels[i].get(f) == k)
                            .map(|&i| &reprs[i].factor_codes[f])
                            .collect();
                        (!codes.is_empty()).then(|| PoolEntry::fit(&codes, d))
                    })
                    .collect()
            })
            .collect();
        Ok(CodePool { entries })
    }

    /// A pool holding only the given means, with zero covariance.
    pub fn from_means(means: Vec<Vec<Option<Vec<f64>>>>) -> Self {
        CodePool {
            entries: means
                .into_iter()
                .map(|per| {
                    per.into_iter()
                        .map(|m| {
                            m.map(|mean| PoolEntry {
                                chol: vec![0.0; mean.len() * mean.len()],
                                mean,
                            })
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn mean(&self, factor: usize, class: usize) -> Option<&[f64]> {
        self.entry(factor, class).ok().map(|e| e.mean.as_slice())
    }

    fn entry(&self, factor: usize, class: usize) -> Result<&PoolEntry> {
        self.entries
            .get(factor)
            .and_then(|per| per.get(class))
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Data(format!("empty code pool for {} class {class}", FACTOR_NAMES[factor])))
    }

    pub fn sample(&self, factor: usize, class: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let e = self.entry(factor, class)?;
        let d = e.mean.len();
        let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        Ok((0..d)
            .map(|i| e.mean[i] + (0..=i).map(|j| e.chol[i * d + j] * eps[j]).sum::<f64>())
            .collect())
    }
}

impl PoolEntry {
    fn fit(codes: &[&Vec<f64>], d: usize) -> Self {
        let m = codes.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| codes.iter().map(|c| c[j]).sum::<f64>() / m).collect();
        let mut cov = vec![0.0; d * d];
        for c in codes {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (c[i] - mean[i]) * (c[j] - mean[j]) / m;
                }
            }
        }
        PoolEntry {
            mean,
            chol: cholesky_jittered(&cov, d),
        }
    }
}

/// Cholesky factor of a covariance, adding diagonal jitter until it is positive definite.
fn cholesky_jittered(cov: &[f64], d: usize) -> Vec<f64> {
    let scale = (0..d).map(|i| cov[i * d + i]).fold(0.0, f64::max).max(1e-12);
    let mut jitter = 0.0;
    loop {
        if let Some(l) = cholesky(cov, d, jitter) {
            return l;
        }
        jitter = if jitter == 0.0 { 1e-10 * scale } else { jitter * 10.0 };
    }
}

fn cholesky(a: &[f64], d: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let v = a[i * d + i] + jitter - s;
                if v <= 0.0 {
                    return None;
                }
                l[i * d + i] = v.sqrt();
            } else {
                l[i * d + j] = (a[i * d + j] - s) / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Replaces `z^{c_factor}` of each listed signal with a draw from the pool of
/// `class` and regenerates from `t_start`.
pub fn resample_factor(
    model: &Model<f64>,
    ds: &Dataset,
    rows: &[usize],
    factor: usize,
    class: usize,
    pool: &CodePool,
    t_start: usize,
    seed: u64,
) -> Result<Vec<IqSignal>> {
    check_dataset(model, ds)?;
    if factor >= N_FACTORS {
        return Err(Error::Contract(format!("no factor {factor}")));
    }
    if let Some(&bad) = rows.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::Data(format!("signal id {bad} outside a dataset of {}", ds.len())));
    }
    let mut draw = ChaCha8Rng::seed_from_u64(seed);
    draw.set_stream(POOL_STREAM);
    let mut reprs = encode_rows(model, ds, rows)?;
    for r in &mut reprs {
        r.factor_codes[factor] = pool.sample(factor, class, &mut draw)?;
    }
    let base: Vec<Vec<f64>> = rows.iter().map(|&i| ds.signals[i].to_planar()).collect();
    generate(model, &base, &reprs, t_start, &mut generation_rng(seed))
}

/// Noise power estimate for rectangular pulses of `sps` samples: half the mean
/// squared difference of neighbouring samples inside one symbol.
pub fn estimate_noise_power(signal: &IqSignal, sps: usize) -> f64 {
    assert!(sps >= 2, "need at least two samples per symbol");
    let x = &signal.samples;
    let mut sum = 0.0;
    let mut count = 0usize;
    for block in x.chunks_exact(sps) {
        for w in block.windows(2) {
            sum += (w[1] - w[0]).norm_sqr();
            count += 1;
        }
    }
    sum / (2.0 * count as f64)
}

/// Mean reference-classifier probabilities over transmitter-swapped signals.
#[derive(Clone, Debug, PartialEq)]
pub struct SwapProbe {
    /// Class `a` signals carrying the code of class `b`.
    pub a_to_b: Vec<f64>,
    pub b_to_a: Vec<f64>,
    /// Reference accuracy on the unswapped originals of both classes.
    pub reference_accuracy: f64,
}

/// Pairs up to `max_pairs` signals of transmitter `a` with signals of `b`
/// sharing their other labels, swaps the transmitter code pair both ways and
/// classifies the results.
pub fn swap_probe(
    model: &Model<f64>,
    ds: &Dataset,
    reference: &CnnClassifier,
    (a, b): (usize, usize),
    max_pairs: usize,
    t_start: usize,
    seed: u64,
) -> Result<SwapProbe> {
    const RFF: usize = 2;
    check_dataset(model, ds)?;
    if a == b || a >= ds.cardinalities[RFF] || b >= ds.cardinalities[RFF] {
        return Err(Error::Contract(format!("invalid transmitter pair ({a}, {b})")));
    }
    let mut pairs = Vec::new();
    let mut used = vec![false; ds.len()];
    for i in ds.indices_with(RFF, a) {
        if pairs.len() == max_pairs {
            break;
        }
        let li = ds.labels[i];
        if let Some(j) = (0..ds.len())
            .find(|&j| !used[j] && ds.labels[j] == li.with(RFF, b))
        {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Err(Error::Data("no signal pairs for the transmitter probe".into()));
    }
    let plans: Vec<SwapPlan> = pairs
        .iter()
        .flat_map(|&(i, j)| [SwapPlan::taking(i, j, &[RFF], t_start), SwapPlan::taking(j, i, &[RFF], t_start)])
        .collect();
    let generated = swap_factors(model, ds, &plans, seed)?;
    let probs = reference.probabilities(&generated.iter().map(IqSignal::to_planar).collect::<Vec<_>>())?;
    let mean_of = |parity: usize| {
        let sel: Vec<&Vec<f64>> = probs.iter().skip(parity).step_by(2).collect();
        (0..reference.classes())
            .map(|c| sel.iter().map(|p| p[c]).sum::<f64>() / sel.len() as f64)
            .collect::<Vec<f64>>()
    };
    let originals: Vec<usize> = pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
    let orig_probs = reference.probabilities(&originals.iter().map(|&i| ds.signals[i].to_planar()).collect::<Vec<_>>())?;
    let hits = originals
        .iter()
        .zip(&orig_probs)
        .filter(|(&i, p)| argmax(p) == ds.labels[i].get(RFF))
        .count();
    Ok(SwapProbe {
        a_to_b: mean_of(0),
        b_to_a: mean_of(1),
        reference_accuracy: hits as f64 / originals.len() as f64,
    })
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

/// Writes generated signals as an RFDS file plus a CSV manifest of the plans.
pub fn write_swap_outputs(dir: &Path, ds: &Dataset, plans: &[SwapPlan], signals: &[IqSignal]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = Dataset {
        length: ds.length,
        cardinalities: ds.cardinalities,
        signals: signals.to_vec(),
        labels: plans.iter().map(|p| p.intended_labels(ds)).collect(),
    };
    out.save(&dir.join("generated.rfds"))?;
    let mut csv = String::from("index,source,target,base");
    for name in FACTOR_NAMES {
        write!(csv, ",{name}_from").unwrap();
    }
    csv.push_str(",t_start\n");
    for (k, p) in plans.iter().enumerate() {
        write!(csv, "{k},{},{},{}", p.source, p.target, p.base.name()).unwrap();
        for o in p.origins {
            write!(csv, ",{}", o.name()).unwrap();
        }
        writeln!(csv, ",{}", p.t_start).unwrap();
    }
    crate::io::atomic_write_str(&dir.join("manifest.csv"), &csv)
}

/// Writes resampled signals as an RFDS file plus a CSV manifest.
pub fn write_resample_outputs(
    dir: &Path,
    ds: &Dataset,
    rows: &[usize],
    factor: usize,
    class: usize,
    t_start: usize,
    signals: &[IqSignal],
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = Dataset {
        length: ds.length,
        cardinalities: ds.cardinalities,
        signals: signals.to_vec(),
        labels: rows.iter().map(|&i| ds.labels[i].with(factor, class)).collect(),
    };
    out.save(&dir.join("generated.rfds"))?;
    let mut csv = String::from("index,source,factor,class,t_start\n");
    for (k, &i) in rows.iter().enumerate() {
        writeln!(csv, "{k},{i},{},{class},{t_start}", FACTOR_NAMES[factor]).unwrap();
    }
    crate::io::atomic_write_str(&dir.join("manifest.csv"), &csv)
}
