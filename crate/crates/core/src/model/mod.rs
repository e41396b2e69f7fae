//! Encoder, decoders, factor map, conditional denoiser and per-factor classifiers.
//!
//! Every network is expressed twice: a tape-level `*_t` function used by the
//! trainer and gradient checks, and a value-level wrapper that runs on a
//! private tape with constant parameters.

mod checkpoint;
mod layers;
mod params;
mod schedule;

#[cfg(test)]
mod tests;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use checkpoint::{decode_records, encode_records, read_records, write_records, Record};
pub use layers::{Conv, Linear};
pub use params::{Bound, ParamId, ParamStore};
pub use schedule::{timestep_embedding, NoiseSchedule, Posterior, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};

pub(crate) use layers::leaky;

const SPACE_CHANNELS: usize = 8;
const MAP_CHANNELS: usize = 4;
const TIME_DIM: usize = 16;
/// Per-component variance of unit-power IQ signals.
const SIGNAL_VAR: f64 = 0.5;

/// Architecture hyper-parameters. `cardinalities` fixes the factor count.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub length: usize,
    pub cardinalities: Vec<usize>,
    pub d_c: usize,
    pub d_f: usize,
    pub enc_channels: [usize; 4],
    pub kernel: usize,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(length: usize, cardinalities: &[usize]) -> Self {
        ModelConfig {
            length,
            cardinalities: cardinalities.to_vec(),
            d_c: 16,
            d_f: 32,
            enc_channels: [16, 32, 64, 64],
            kernel: 5,
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            seed: 0,
        }
    }

    pub fn n_factors(&self) -> usize {
        self.cardinalities.len()
    }

    /// Width of the concatenated factor codes.
    pub fn code_width(&self) -> usize {
        self.n_factors() * self.d_c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.length == 0 || self.length % 16 != 0 {
            return bad(format!("signal length {} must be a positive multiple of 16", self.length));
        }
        if self.cardinalities.is_empty() || self.cardinalities.iter().any(|&k| k < 2) {
            return bad("every factor needs at least two classes".into());
        }
        if self.d_c == 0 || self.d_f == 0 || self.enc_channels.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)?;
        Ok(())
    }

    fn to_meta(&self) -> Vec<f64> {
        let mut v = vec![
            self.length as f64,
            self.d_c as f64,
            self.d_f as f64,
            self.kernel as f64,
            self.steps as f64,
            self.beta_start,
            self.beta_end,
            self.seed as f64,
        ];
        v.extend(self.enc_channels.iter().map(|&c| c as f64));
        v.push(self.cardinalities.len() as f64);
        v.extend(self.cardinalities.iter().map(|&k| k as f64));
        v
    }

    fn from_meta(v: &[f64]) -> Result<Self> {
        let bad = || Error::Data("malformed model metadata in checkpoint".into());
        if v.len() < 13 {
            return Err(bad());
        }
        let u = |x: f64| -> Result<usize> {
            if x >= 0.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(bad())
            }
        };
        let n = u(v[12])?;
        if v.len() != 13 + n {
            return Err(bad());
        }
        let cfg = ModelConfig {
            length: u(v[0])?,
            d_c: u(v[1])?,
            d_f: u(v[2])?,
            kernel: u(v[3])?,
            steps: u(v[4])?,
            beta_start: v[5],
            beta_end: v[6],
            seed: u(v[7])? as u64,
            enc_channels: [u(v[8])?, u(v[9])?, u(v[10])?, u(v[11])?],
            cardinalities: v[13..].iter().map(|&x| u(x)).collect::<Result<_>>()?,
        };
        cfg.validate().map_err(|e| Error::Data(format!("checkpoint model config: {e}")))?;
        Ok(cfg)
    }
}

/// Per-signal factor and space codes, paired by index.
#[derive(Clone, Debug, PartialEq)]
pub struct Representations<T> {
    pub factor_codes: Vec<Vec<T>>,
    pub space_codes: Vec<Vec<T>>,
}

impl<T: Scalar> Representations<T> {
    pub fn n_factors(&self) -> usize {
        self.factor_codes.len()
    }

    pub fn is_finite(&self) -> bool {
        self.factor_codes.iter().chain(&self.space_codes).flatten().all(|v| v.is_finite())
    }

    /// Concatenated factor codes.
    pub fn flat_factor_codes(&self) -> Vec<T> {
        self.factor_codes.concat()
    }
}

/// Decoded space field: `probs[n][i]`, normalised across `n` at every position.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceField<T> {
    pub probs: Vec<Vec<T>>,
}

/// Conditioning map `[L, d_F]` with its rank-1 per-factor parts.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorMap<T: Scalar> {
    pub map: Tensor<T>,
    pub components: Vec<Tensor<T>>,
}

impl<T: Scalar> FactorMap<T> {
    pub fn from_components(components: Vec<Tensor<T>>) -> Self {
        let mut map = Tensor::zeros(components[0].shape());
        for c in &components {
            map.add_assign(c);
        }
        FactorMap { map, components }
    }
}

#[derive(Clone, Debug)]
struct Encoder {
    blocks: Vec<Conv>,
    factor_head: Linear,
    space_head: Linear,
}

#[derive(Clone, Debug)]
struct FactorDecoder {
    mlps: Vec<(Linear, Linear)>,
}

#[derive(Clone, Debug)]
struct SpaceDecoder {
    input: Linear,
    convs: Vec<Conv>,
}

#[derive(Clone, Debug)]
struct MapBuilder {
    code_proj: Vec<Linear>,
    space_conv: Conv,
    space_proj: Linear,
}

#[derive(Clone, Debug)]
struct Denoiser {
    input: Conv,
    time1: Linear,
    time2: Linear,
    pre: Conv,
    post: Conv,
    output: Conv,
}

/// Named groups of parameters, in registration order.
#[derive(Clone, Debug)]
pub struct ParamGroups {
    pub encoder: Vec<ParamId>,
    pub factor_decoder: Vec<ParamId>,
    pub space_decoder: Vec<ParamId>,
    pub factor_map: Vec<ParamId>,
    pub denoiser: Vec<ParamId>,
    pub classifiers: Vec<ParamId>,
}

impl ParamGroups {
    pub fn named(&self) -> [(&'static str, &[ParamId]); 6] {
        [
            ("encoder", &self.encoder),
            ("factor_decoder", &self.factor_decoder),
            ("space_decoder", &self.space_decoder),
            ("factor_map", &self.factor_map),
            ("denoiser", &self.denoiser),
            ("classifiers", &self.classifiers),
        ]
    }
}

/// Tape outputs of the encoder for a batch.
#[derive(Clone, Copy)]
pub struct Codes<'t, T: Scalar> {
    /// `[B, N, d_C]`
    pub factor: Var<'t, T>,
    /// `[B, N, d_C]`
    pub space: Var<'t, T>,
}

pub struct Model<T: Scalar> {
    cfg: ModelConfig,
    schedule: NoiseSchedule,
    params: ParamStore<T>,
    encoder: Encoder,
    factor_decoder: FactorDecoder,
    space_decoder: SpaceDecoder,
    map_builder: MapBuilder,
    denoiser: Denoiser,
    classifiers: Vec<Linear>,
    groups: ParamGroups,
}

impl<T: Scalar> Clone for Model<T> {
    fn clone(&self) -> Self {
        Model {
            cfg: self.cfg.clone(),
            schedule: self.schedule.clone(),
            params: self.params.clone(),
            encoder: self.encoder.clone(),
            factor_decoder: self.factor_decoder.clone(),
            space_decoder: self.space_decoder.clone(),
            map_builder: self.map_builder.clone(),
            denoiser: self.denoiser.clone(),
            classifiers: self.classifiers.clone(),
            groups: self.groups.clone(),
        }
    }
}

impl<T: Scalar> Model<T> {
    /// Fresh model with weights drawn from `cfg.seed`.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = NoiseSchedule::linear(cfg.steps, cfg.beta_start, cfg.beta_end)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut s = ParamStore::default();
        let (n, d_c, d_f, k) = (cfg.n_factors(), cfg.d_c, cfg.d_f, cfg.kernel);

        let mut c_prev = 2;
        let mut blocks = Vec::new();
        for (i, &c) in cfg.enc_channels.iter().enumerate() {
            blocks.push(Conv::new(&mut s, &format!("enc.conv{i}"), c_prev, c, k, &mut rng));
            c_prev = c;
        }
        let encoder = Encoder {
            blocks,
            factor_head: Linear::new(&mut s, "enc.factor_head", c_prev, n * d_c, &mut rng),
            space_head: Linear::new(&mut s, "enc.space_head", c_prev, n * d_c, &mut rng),
        };

        let factor_decoder = FactorDecoder {
            mlps: (0..n)
                .map(|i| {
                    (
                        Linear::new(&mut s, &format!("dec_f{i}.l1"), d_c, d_f, &mut rng),
                        Linear::new(&mut s, &format!("dec_f{i}.l2"), d_f, d_f, &mut rng),
                    )
                })
                .collect(),
        };

        let space_decoder = SpaceDecoder {
            input: Linear::new(&mut s, "dec_s.input", d_c, SPACE_CHANNELS * cfg.length / 8, &mut rng),
            convs: (0..3)
                .map(|i| {
                    let name = format!("dec_s.conv{i}");
                    if i == 2 {
                        // a shared offset cancels in the softmax over factors
                        Conv::without_bias(&mut s, &name, SPACE_CHANNELS, 1, 3, &mut rng)
                    } else {
                        Conv::new(&mut s, &name, SPACE_CHANNELS, SPACE_CHANNELS, 3, &mut rng)
                    }
                })
                .collect(),
        };

        let map_builder = MapBuilder {
            code_proj: (0..n)
                .map(|i| Linear::without_bias(&mut s, &format!("map.code{i}"), d_c, d_f, &mut rng))
                .collect(),
            space_conv: Conv::new(&mut s, "map.space_conv", 1, MAP_CHANNELS, 3, &mut rng),
            space_proj: Linear::new(&mut s, "map.space_proj", MAP_CHANNELS * d_c, cfg.length, &mut rng),
        };

        let denoiser = Denoiser {
            input: Conv::new(&mut s, "gen.input", 2, d_f, k, &mut rng),
            time1: Linear::new(&mut s, "gen.time1", TIME_DIM, d_f, &mut rng),
            time2: Linear::new(&mut s, "gen.time2", d_f, d_f, &mut rng),
            pre: Conv::new(&mut s, "gen.pre", d_f, d_f, k, &mut rng),
            post: Conv::new(&mut s, "gen.post", d_f, d_f, k, &mut rng),
            output: Conv::new(&mut s, "gen.output", d_f, 2, k, &mut rng),
        };

        let classifiers: Vec<Linear> = cfg
            .cardinalities
            .iter()
            .enumerate()
            .map(|(i, &kn)| Linear::new(&mut s, &format!("cls{i}"), d_f, kn, &mut rng))
            .collect();

        let groups = ParamGroups {
            encoder: encoder
                .blocks
                .iter()
                .flat_map(Conv::params)
                .chain(encoder.factor_head.params())
                .chain(encoder.space_head.params())
                .collect(),
            factor_decoder: factor_decoder.mlps.iter().flat_map(|(a, b)| [a.params(), b.params()].concat()).collect(),
            space_decoder: space_decoder
                .input
                .params()
                .into_iter()
                .chain(space_decoder.convs.iter().flat_map(Conv::params))
                .collect(),
            factor_map: map_builder
                .code_proj
                .iter()
                .flat_map(Linear::params)
                .chain(map_builder.space_conv.params())
                .chain(map_builder.space_proj.params())
                .collect(),
            denoiser: [
                denoiser.input.params(),
                denoiser.time1.params(),
                denoiser.time2.params(),
                denoiser.pre.params(),
                denoiser.post.params(),
                denoiser.output.params(),
            ]
            .concat(),
            classifiers: classifiers.iter().flat_map(Linear::params).collect(),
        };

        Ok(Model {
            cfg,
            schedule,
            params: s,
            encoder,
            factor_decoder,
            space_decoder,
            map_builder,
            denoiser,
            classifiers,
            groups,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn groups(&self) -> &ParamGroups {
        &self.groups
    }

    pub fn num_scalars(&self) -> usize {
        self.params.num_scalars()
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            schedule: self.schedule.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            factor_decoder: self.factor_decoder.clone(),
            space_decoder: self.space_decoder.clone(),
            map_builder: self.map_builder.clone(),
            denoiser: self.denoiser.clone(),
            classifiers: self.classifiers.clone(),
            groups: self.groups.clone(),
        }
    }

    // ---- tape level -------------------------------------------------------

    /// `x: [B, 2, L]` to codes `[B, N, d_C]`.
    pub fn encode_t<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Codes<'t, T> {
        let shape = x.shape();
        assert_eq!(&shape[1..], &[2, self.cfg.length], "encoder input must be [B, 2, {}]", self.cfg.length);
        let b = shape[0];
        let mut h = x;
        for conv in &self.encoder.blocks {
            h = leaky(conv.forward(p, h)).avg_pool2();
        }
        let pooled = h.mean_axis(2);
        let n = self.cfg.n_factors();
        Codes {
            factor: self.encoder.factor_head.forward(p, pooled).reshape(&[b, n, self.cfg.d_c]),
            space: self.encoder.space_head.forward(p, pooled).reshape(&[b, n, self.cfg.d_c]),
        }
    }

    /// Factor features, one `[B, d_F]` per factor.
    pub fn decode_factor_t<'t>(&self, p: &Bound<'t, T>, factor: Var<'t, T>) -> Vec<Var<'t, T>> {
        let b = factor.shape()[0];
        self.factor_decoder
            .mlps
            .iter()
            .enumerate()
            .map(|(n, (l1, l2))| {
                let z = factor.slice(1, n, 1).reshape(&[b, self.cfg.d_c]);
                l2.forward(p, leaky(l1.forward(p, z)))
            })
            .collect()
    }

    /// Space field `[B, N, L]`, softmax across factors.
    pub fn decode_space_t<'t>(&self, p: &Bound<'t, T>, space: Var<'t, T>) -> Var<'t, T> {
        self.space_logits_t(p, space).softmax(1)
    }

    /// Pre-softmax space decoder output `[B, N, L]`.
    pub fn space_logits_t<'t>(&self, p: &Bound<'t, T>, space: Var<'t, T>) -> Var<'t, T> {
        let (b, n, l) = (space.shape()[0], self.cfg.n_factors(), self.cfg.length);
        let z = space.reshape(&[b * n, self.cfg.d_c]);
        let mut h = leaky(self.space_decoder.input.forward(p, z)).reshape(&[b * n, SPACE_CHANNELS, l / 8]);
        for (i, conv) in self.space_decoder.convs.iter().enumerate() {
            h = conv.forward(p, h.upsample2());
            if i + 1 < self.space_decoder.convs.len() {
                h = leaky(h);
            }
        }
        h.reshape(&[b, n, l])
    }

    /// Space-path projections `z_L: [B, N, L]` and code projections `z'^c: [B, N, d_F]`.
    pub fn factor_map_parts_t<'t>(&self, p: &Bound<'t, T>, codes: Codes<'t, T>) -> (Var<'t, T>, Var<'t, T>) {
        let (b, n, d_c) = (codes.factor.shape()[0], self.cfg.n_factors(), self.cfg.d_c);
        let zc: Vec<Var<'t, T>> = self
            .map_builder
            .code_proj
            .iter()
            .enumerate()
            .map(|(i, lp)| {
                let z = codes.factor.slice(1, i, 1).reshape(&[b, d_c]);
                lp.forward(p, z).reshape(&[b, 1, self.cfg.d_f])
            })
            .collect();
        let zc = Var::concat(&zc, 1);
        let s = codes.space.reshape(&[b * n, 1, d_c]);
        let s = leaky(self.map_builder.space_conv.forward(p, s)).reshape(&[b * n, MAP_CHANNELS * d_c]);
        let zl = self.map_builder.space_proj.forward(p, s).reshape(&[b, n, self.cfg.length]);
        (zl, zc)
    }

    /// `M_f = Σ_n z_L^n ⊗ z'^{c_n}` as `[B, L, d_F]`.
    pub fn factor_map_t<'t>(&self, p: &Bound<'t, T>, codes: Codes<'t, T>) -> Var<'t, T> {
        let (zl, zc) = self.factor_map_parts_t(p, codes);
        zl.transpose().bmm(zc)
    }

    /// Predicts `x_0` from `x_t: [B, 2, L]` given per-sample steps and `M_f: [B, L, d_F]`.
    pub fn denoise_t<'t>(&self, p: &Bound<'t, T>, x_t: Var<'t, T>, steps: &[usize], map: Var<'t, T>) -> Var<'t, T> {
        let tape = x_t.tape();
        let b = x_t.shape()[0];
        assert_eq!(steps.len(), b, "one diffusion step per signal");
        for &t in steps {
            assert!((1..=self.schedule.steps()).contains(&t), "diffusion step {t} out of range");
        }
        let emb: Vec<f64> = steps.iter().flat_map(|&t| timestep_embedding(t, TIME_DIM)).collect();
        let emb = tape.constant(Tensor::from_f64(&[b, TIME_DIM], &emb));
        let temb = self.denoiser.time2.forward(p, leaky(self.denoiser.time1.forward(p, emb)));
        let d = &self.denoiser;
        let mut h = leaky(d.input.forward(p, x_t));
        h = h + temb.repeat_trailing(self.cfg.length);
        h = leaky(d.pre.forward(p, h));
        h = h + map.transpose();
        h = leaky(d.post.forward(p, h));
        let l = self.cfg.length;
        let coefs: Vec<(f64, f64)> = steps.iter().map(|&t| self.preconditioning(t)).collect();
        let per_signal = |f: fn(&(f64, f64)) -> f64| {
            tape.constant(Tensor::from_fn(&[b, 2, l], |i| T::c(f(&coefs[i / (2 * l)]))))
        };
        d.output.forward(p, h) * per_signal(|c| c.1) + x_t * per_signal(|c| c.0)
    }

    /// `(skip, out)`: the shortcut is the linear MMSE estimate of `x_0` from
    /// `x_t` for signals of variance `SIGNAL_VAR`, the network output is
    /// scaled by the standard deviation of that estimate's error.
    fn preconditioning(&self, t: usize) -> (f64, f64) {
        let ab = self.schedule.alpha_bar(t);
        let om = self.schedule.one_minus_alpha_bar(t);
        let var_t = ab * SIGNAL_VAR + om;
        (ab.sqrt() * SIGNAL_VAR / var_t, (SIGNAL_VAR * om / var_t).sqrt())
    }

    /// Class probabilities `[B, K_n]` of classifier `n` applied to `feature: [B, d_F]`.
    pub fn classify_t<'t>(&self, p: &Bound<'t, T>, n: usize, feature: Var<'t, T>) -> Var<'t, T> {
        self.classifiers[n].forward(p, feature).softmax(1)
    }

    // ---- value level ------------------------------------------------------

    fn check_signals(&self, x: &Tensor<T>) -> Result<usize> {
        let s = x.shape();
        if s.len() != 3 || s[1] != 2 || s[2] != self.cfg.length {
            return Err(Error::Data(format!(
                "expected signals shaped [B, 2, {}], got {s:?}",
                self.cfg.length
            )));
        }
        Ok(s[0])
    }

    /// Encodes a batch `[B, 2, L]`.
    pub fn encode(&self, x: &Tensor<T>) -> Result<Vec<Representations<T>>> {
        let b = self.check_signals(x)?;
        let tape = Tape::new();
        let p = self.params.bind_const(&tape);
        let codes = self.encode_t(&p, tape.constant(x.clone()));
        tape.check()?;
        let (f, s) = (codes.factor.value(), codes.space.value());
        let (n, d) = (self.cfg.n_factors(), self.cfg.d_c);
        let split = |data: &[T], i: usize| -> Vec<Vec<T>> {
            (0..n).map(|k| data[(i * n + k) * d..(i * n + k + 1) * d].to_vec()).collect()
        };
        Ok((0..b)
            .map(|i| Representations {
                factor_codes: split(f.data(), i),
                space_codes: split(s.data(), i),
            })
            .collect())
    }

    fn codes_tensor(&self, reprs: &[Representations<T>], space: bool) -> Result<Tensor<T>> {
        let (n, d) = (self.cfg.n_factors(), self.cfg.d_c);
        let mut data = Vec::with_capacity(reprs.len() * n * d);
        for r in reprs {
            let codes = if space { &r.space_codes } else { &r.factor_codes };
            if codes.len() != n || codes.iter().any(|c| c.len() != d) {
                return Err(Error::Data(format!("representations must hold {n} codes of width {d}")));
            }
            codes.iter().for_each(|c| data.extend_from_slice(c));
        }
        if reprs.is_empty() {
            return Err(Error::Data("no representations given".into()));
        }
        Ok(Tensor::new(&[reprs.len(), n, d], data))
    }

    pub fn decode_space(&self, reprs: &[Representations<T>]) -> Result<Vec<SpaceField<T>>> {
        let s = self.codes_tensor(reprs, true)?;
        let tape = Tape::new();
        let p = self.params.bind_const(&tape);
        let field = self.decode_space_t(&p, tape.constant(s));
        tape.check()?;
        let v = field.value();
        let (n, l) = (self.cfg.n_factors(), self.cfg.length);
        Ok((0..reprs.len())
            .map(|i| SpaceField {
                probs: (0..n).map(|k| v.data()[(i * n + k) * l..(i * n + k + 1) * l].to_vec()).collect(),
            })
            .collect())
    }

    /// Factor features `[signal][factor][d_F]`.
    pub fn decode_factor(&self, reprs: &[Representations<T>]) -> Result<Vec<Vec<Vec<T>>>> {
        let f = self.codes_tensor(reprs, false)?;
        let tape = Tape::new();
        let p = self.params.bind_const(&tape);
        let feats = self.decode_factor_t(&p, tape.constant(f));
        tape.check()?;
        let d = self.cfg.d_f;
        let vals: Vec<_> = feats.iter().map(|v| v.value().clone()).collect();
        Ok((0..reprs.len())
            .map(|i| vals.iter().map(|v| v.data()[i * d..(i + 1) * d].to_vec()).collect())
            .collect())
    }

    /// Factor maps with their per-factor rank-1 components.
    pub fn build_factor_map(&self, reprs: &[Representations<T>]) -> Result<Vec<FactorMap<T>>> {
        let f = self.codes_tensor(reprs, false)?;
        let s = self.codes_tensor(reprs, true)?;
        let tape = Tape::new();
        let p = self.params.bind_const(&tape);
        let codes = Codes {
            factor: tape.constant(f),
            space: tape.constant(s),
        };
        let (zl, zc) = self.factor_map_parts_t(&p, codes);
        tape.check()?;
        let (zl, zc) = (zl.value(), zc.value());
        let (n, l, d) = (self.cfg.n_factors(), self.cfg.length, self.cfg.d_f);
        Ok((0..reprs.len())
            .map(|i| {
                let comps = (0..n)
                    .map(|k| {
                        let a = &zl.data()[(i * n + k) * l..(i * n + k + 1) * l];
                        let c = &zc.data()[(i * n + k) * d..(i * n + k + 1) * d];
                        Tensor::from_fn(&[l, d], |j| a[j / d] * c[j % d])
                    })
                    .collect();
                FactorMap::from_components(comps)
            })
            .collect())
    }

    fn stack_maps(&self, maps: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (l, d) = (self.cfg.length, self.cfg.d_f);
        let mut data = Vec::with_capacity(maps.len() * l * d);
        for m in maps {
            if m.shape() != [l, d] {
                return Err(Error::Data(format!("factor map must be [{l}, {d}], got {:?}", m.shape())));
            }
            data.extend_from_slice(m.data());
        }
        Ok(Tensor::new(&[maps.len(), l, d], data))
    }

    /// Predicted clean signals for a batch at a common step `t`.
    pub fn denoise(&self, x_t: &Tensor<T>, t: usize, maps: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let b = self.check_signals(x_t)?;
        if !(1..=self.schedule.steps()).contains(&t) {
            return Err(Error::Contract(format!("diffusion step {t} outside 1..={}", self.schedule.steps())));
        }
        if maps.len() != b {
            return Err(Error::Data("one factor map per signal required".into()));
        }
        let m = self.stack_maps(maps)?;
        let tape = Tape::new();
        let p = self.params.bind_const(&tape);
        let out = self.denoise_t(&p, tape.constant(x_t.clone()), &vec![t; b], tape.constant(m));
        tape.check()?;
        let v = out.value().clone();
        Ok(v)
    }

    /// Ancestral sampling from `x_start` at step `t_start` down to 0.
    pub fn sample_reverse(
        &self,
        x_start: &Tensor<T>,
        t_start: usize,
        maps: &[&Tensor<T>],
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor<T>> {
        let mut x = x_start.clone();
        for t in (1..=t_start).rev() {
            let x0 = self.denoise(&x, t, maps)?;
            let post = self.schedule.posterior(t);
            let sigma = post.variance.sqrt();
            let (c0, ct) = (T::c(post.coef_x0), T::c(post.coef_xt));
            let noise_on = t > 1;
            x = Tensor::from_fn(x.shape(), |i| {
                let mean = c0 * x0.data()[i] + ct * x.data()[i];
                if noise_on {
                    let e: f64 = StandardNormal.sample(rng);
                    mean + T::c(sigma * e)
                } else {
                    mean
                }
            });
            if !x.is_finite() {
                return Err(Error::NonFinite { op: "sample_reverse" });
            }
        }
        Ok(x)
    }

    /// Probabilities of classifier `n` for each feature vector.
    pub fn classify_factor(&self, n: usize, features: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        if n >= self.cfg.n_factors() {
            return Err(Error::Contract(format!("no classifier for factor {n}")));
        }
        let d = self.cfg.d_f;
        if features.is_empty() || features.iter().any(|f| f.len() != d) {
            return Err(Error::Data(format!("features must be non-empty vectors of width {d}")));
        }
        let tape = Tape::new();
        let p = self.params.bind_const(&tape);
        let x = tape.constant(Tensor::new(&[features.len(), d], features.concat()));
        let probs = self.classify_t(&p, n, x);
        tape.check()?;
        let k = self.cfg.cardinalities[n];
        let v = probs.value();
        Ok(v.data().chunks(k).map(<[T]>::to_vec).collect())
    }

    // ---- persistence ------------------------------------------------------

    /// Parameters and architecture as checkpoint records.
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = vec![Record::new("meta/model", Tensor::new(&[self.cfg.to_meta().len()], self.cfg.to_meta()))];
        out.extend(self.params.iter().map(|(name, t)| Record::new(format!("p/{name}"), t.cast())));
        out
    }

    pub fn from_records(records: &[Record]) -> Result<Self> {
        let meta = records
            .iter()
            .find(|r| r.name == "meta/model")
            .ok_or_else(|| Error::Data("checkpoint has no model metadata".into()))?;
        let cfg = ModelConfig::from_meta(meta.tensor.data())?;
        let mut model = Model::new(cfg)?;
        let ids: Vec<ParamId> = model.params.ids().collect();
        for id in ids {
            let key = format!("p/{}", model.params.name(id));
            let rec = records
                .iter()
                .find(|r| r.name == key)
                .ok_or_else(|| Error::Data(format!("checkpoint is missing `{key}`")))?;
            if rec.tensor.shape() != model.params.get(id).shape() {
                return Err(Error::Data(format!("checkpoint tensor `{key}` has the wrong shape")));
            }
            *model.params.get_mut(id) = rec.tensor.cast();
        }
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        write_records(path, &self.to_records())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_records(&read_records(path)?)
    }
}

/// Stacks planar I/Q rows (`[I.., Q..]`) into a `[B, 2, L]` tensor.
pub fn signals_tensor<T: Scalar>(planar: &[Vec<f64>], length: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(planar.len() * 2 * length);
    for p in planar {
        assert_eq!(p.len(), 2 * length, "planar signal length mismatch");
        data.extend(p.iter().map(|&v| T::c(v)));
    }
    Tensor::new(&[planar.len(), 2, length], data)
}

/// Central-difference check of the gradient of `loss` with respect to each
/// parameter tensor in `ids`, along a random direction per tensor whose
/// signs follow the analytic gradient (so the projection cannot cancel out).
///
/// Returns the largest `|g·v − (f(θ+hv) − f(θ−hv))/2h| / max(1e-8, |g·v|)`.
pub fn param_grad_check<F>(model: &Model<f64>, ids: &[ParamId], loss: F, h: f64, seed: u64) -> Result<f64>
where
    F: for<'t> Fn(&Model<f64>, &Bound<'t, f64>, &'t Tape<f64>) -> Var<'t, f64>,
{
    use rand::Rng;
    let grads = {
        let tape = Tape::new();
        let p = model.params.bind(&tape);
        let l = loss(model, &p, &tape);
        let g = tape.backward(l)?;
        ids.iter().map(|&id| g.get_or_zeros(p.get(id))).collect::<Vec<_>>()
    };
    let eval = |m: &Model<f64>| -> Result<f64> {
        let tape = Tape::new();
        let p = m.params.bind_const(&tape);
        let l = loss(m, &p, &tape);
        tape.check()?;
        Ok(l.item())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for (&id, g) in ids.iter().zip(&grads) {
        let dir: Vec<f64> = g.data().iter().map(|&gi| rng.random_range(0.5..1.5) * if gi < 0.0 { -1.0 } else { 1.0 }).collect();
        let analytic: f64 = g.data().iter().zip(&dir).map(|(a, b)| a * b).sum();
        let shifted = |sign: f64| -> Result<f64> {
            let mut m = model.clone();
            for (v, d) in m.params.get_mut(id).data_mut().iter_mut().zip(&dir) {
                *v += sign * h * d;
            }
            eval(&m)
        };
        let numeric = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * h);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(1e-8));
    }
    Ok(worst)
}
