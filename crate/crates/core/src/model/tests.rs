use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::autodiff::grad_check;

fn small_cfg() -> ModelConfig {
    let mut cfg = ModelConfig::new(16, &[3, 2, 4]);
    cfg.d_c = 4;
    cfg.d_f = 6;
    cfg.enc_channels = [3, 4, 5, 6];
    cfg.seed = 11;
    cfg
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

fn default_model() -> Model<f64> {
    Model::new(ModelConfig::new(64, &[7, 5, 7])).unwrap()
}

#[test]
fn encode_is_deterministic_and_shaped() {
    let m = default_model();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = randn(&[1, 2, 64], &mut rng);
    let mut twice = x.clone().into_data();
    twice.extend(x.data());
    let both = m.encode(&Tensor::new(&[2, 2, 64], twice)).unwrap();
    assert_eq!(both[0], both[1]);
    assert_eq!(both[0].factor_codes.len() + both[0].space_codes.len(), 6);
    assert!(both[0].factor_codes.iter().all(|c| c.len() == 16));
}

#[test]
fn encode_rejects_wrong_length() {
    let m = default_model();
    assert!(matches!(m.encode(&Tensor::zeros(&[1, 2, 32])), Err(Error::Data(_))));
}

#[test]
fn encode_is_finite_on_dataset_signals() {
    use crate::synth::{synth_dataset, SynthConfig};
    let cfg = SynthConfig {
        signals_per_cell: 5,
        ..SynthConfig::default()
    };
    let ds = synth_dataset(&cfg).unwrap();
    assert!(ds.signals.len() >= 1000);
    let m = default_model();
    let planar: Vec<Vec<f64>> = ds.signals[..1000].iter().map(|s| s.to_planar()).collect();
    for chunk in planar.chunks(250) {
        let reprs = m.encode(&signals_tensor(chunk, 64)).unwrap();
        assert!(reprs.iter().all(Representations::is_finite));
    }
}

#[test]
fn space_field_is_a_distribution_over_factors() {
    let m = default_model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let reprs = m.encode(&randn(&[3, 2, 64], &mut rng)).unwrap();
    for field in m.decode_space(&reprs).unwrap() {
        assert_eq!(field.probs.len(), 3);
        for i in 0..64 {
            let s: f64 = field.probs.iter().map(|p| p[i]).sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(field.probs.iter().all(|p| (0.0..=1.0).contains(&p[i])));
        }
    }
}

#[test]
fn equal_space_logits_give_uniform_field() {
    let mut m = default_model();
    let last = m.space_decoder.convs[2].clone();
    assert!(last.b.is_none());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reprs = m.encode(&randn(&[2, 2, 64], &mut rng)).unwrap();
    m.params_mut().get_mut(last.w).data_mut().fill(0.0);
    for f in m.decode_space(&reprs).unwrap() {
        assert!(f.probs.iter().flatten().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
    }
}

#[test]
fn factor_features_have_the_declared_shape() {
    let m = default_model();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let reprs = m.encode(&randn(&[5, 2, 64], &mut rng)).unwrap();
    let feats = m.decode_factor(&reprs).unwrap();
    assert_eq!(feats.len(), 5);
    assert!(feats.iter().all(|f| f.len() == 3 && f.iter().all(|v| v.len() == 32)));
    assert!(feats.iter().flatten().flatten().all(|v| v.is_finite()));
    assert_eq!(feats, m.decode_factor(&reprs).unwrap());
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn symmetric_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

#[test]
fn factor_map_components_are_rank_one_and_sum_to_the_map() {
    let m = default_model();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = randn(&[2, 2, 64], &mut rng);
    let reprs = m.encode(&x).unwrap();
    let maps = m.build_factor_map(&reprs).unwrap();
    assert_eq!(maps[0].map.shape(), &[64, 32]);

    for comp in &maps[0].components {
        let (l, d) = (64, 32);
        let ata: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| (0..l).map(|r| comp.at(&[r, i]) * comp.at(&[r, j])).sum()).collect())
            .collect();
        let mut ev = symmetric_eigenvalues(ata);
        ev.sort_by(|a, b| b.total_cmp(a));
        assert!(ev[0] > 0.0);
        assert!(ev[1].abs() < 1e-10 * ev[0], "second singular value not ~0: {:?}", &ev[..3]);
    }

    let summed = FactorMap::from_components(maps[1].components.clone());
    assert!(summed.map.max_abs_diff(&maps[1].map) <= 1e-12);

    let tape = Tape::new();
    let p = m.params().bind_const(&tape);
    let codes = m.encode_t(&p, tape.constant(x));
    let batch = m.factor_map_t(&p, codes);
    let v = batch.value();
    let first = Tensor::new(&[64, 32], v.data()[..64 * 32].to_vec());
    assert!(first.max_abs_diff(&maps[0].map) < 1e-12);
}

#[test]
fn zeroing_a_factor_code_removes_its_component() {
    let m = default_model();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut reprs = m.encode(&randn(&[1, 2, 64], &mut rng)).unwrap();
    let full = m.build_factor_map(&reprs).unwrap().remove(0);
    reprs[0].factor_codes[1].fill(0.0);
    let cut = m.build_factor_map(&reprs).unwrap().remove(0);
    assert!(cut.components[1].data().iter().all(|&v| v == 0.0));
    let expect = full.map.zip_map(&full.components[1], |a, b| a - b);
    assert!(cut.map.max_abs_diff(&expect) < 1e-12);
}

#[test]
fn denoiser_output_matches_input_shape_and_reacts_to_the_map() {
    let m = default_model();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = randn(&[1, 2, 64], &mut rng);
    let map = randn(&[64, 32], &mut rng);
    let out = m.denoise(&x, 40, &[&map]).unwrap();
    assert_eq!(out.shape(), &[1, 2, 64]);
    let other = map.zip_map(&randn(&[64, 32], &mut rng), |a, b| a + 0.1 * b);
    let out2 = m.denoise(&x, 40, &[&other]).unwrap();
    assert!(out.max_abs_diff(&out2) > 0.0);
    assert!(matches!(m.denoise(&x, 0, &[&map]), Err(Error::Contract(_))));
    assert!(matches!(m.denoise(&x, 101, &[&map]), Err(Error::Contract(_))));
}

#[test]
fn denoiser_gradient_wrt_factor_map_passes_grad_check() {
    let m = Model::<f64>::new(small_cfg()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = randn(&[2, 2, 16], &mut rng);
    let map = randn(&[2, 16, 6], &mut rng);
    let err = grad_check(
        |tape, mf| {
            let p = m.params().bind_const(tape);
            let xt = tape.constant(x.clone());
            let out = m.denoise_t(&p, xt, &[3, 70], mf);
            let d = out - tape.constant(x.clone());
            (d * d).sum()
        },
        &map,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn sample_reverse_is_deterministic_and_finite() {
    let m = Model::<f64>::new(small_cfg()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = randn(&[1, 2, 16], &mut rng);
    let map = randn(&[16, 6], &mut rng);
    let a = m.sample_reverse(&x, 100, &[&map], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = m.sample_reverse(&x, 100, &[&map], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), &[1, 2, 16]);
    assert!(a.is_finite());
}

#[test]
fn perfect_denoiser_posterior_mean_at_first_step_is_x0() {
    let s = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x0: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eps: Vec<f64> = (0..32).map(|_| StandardNormal.sample(&mut rng)).collect();
    let x1 = s.diffuse(&x0, 1, &eps);
    let p = s.posterior(1);
    for i in 0..32 {
        let mu = p.coef_x0 * x0[i] + p.coef_xt * x1[i];
        assert_eq!(mu, x0[i]);
    }
}

#[test]
fn diffused_signal_at_last_step_is_near_standard_normal() {
    let s = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 10_000;
    let x0: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 0.8 } else { -0.6 }).collect();
    let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let xt = s.diffuse(&x0, 100, &eps);
    let mean = xt.iter().sum::<f64>() / n as f64;
    let var = xt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    assert!(mean.abs() < 0.1);
    assert!((var - 1.0).abs() < 0.1);
}

#[test]
fn classifier_heads() {
    let mut m = default_model();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let feats: Vec<Vec<f64>> = (0..4).map(|_| (0..32).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    for n in 0..3 {
        for p in m.classify_factor(n, &feats).unwrap() {
            assert_eq!(p.len(), m.config().cardinalities[n]);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
    // the feature of any factor is a valid input to any classifier
    let reprs = m.encode(&randn(&[2, 2, 64], &mut rng)).unwrap();
    let dec = m.decode_factor(&reprs).unwrap();
    for n1 in 0..3 {
        for n2 in (0..3).filter(|&k| k != n1) {
            let f: Vec<Vec<f64>> = dec.iter().map(|d| d[n1].clone()).collect();
            assert_eq!(m.classify_factor(n2, &f).unwrap().len(), 2);
        }
    }
    let ids = m.classifiers[1].params();
    for id in ids {
        m.params_mut().get_mut(id).data_mut().fill(0.0);
    }
    for p in m.classify_factor(1, &feats).unwrap() {
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }
}

/// Touches every head so each parameter group receives gradient.
fn probe_loss<'t>(m: &Model<f64>, p: &Bound<'t, f64>, tape: &'t Tape<f64>) -> Var<'t, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let x = tape.constant(randn(&[2, 2, 16], &mut rng));
    let codes = m.encode_t(p, x);
    let mut terms = Vec::new();
    for (n, f) in m.decode_factor_t(p, codes.factor).into_iter().enumerate() {
        let probs = m.classify_t(p, n, f);
        let w = tape.constant(randn(&probs.shape(), &mut rng));
        terms.push((probs * w).sum());
    }
    let field = m.decode_space_t(p, codes.space);
    let w = tape.constant(randn(&field.shape(), &mut rng));
    terms.push((field * w).sum());
    let map = m.factor_map_t(p, codes);
    let xt = tape.constant(randn(&[2, 2, 16], &mut rng));
    let out = m.denoise_t(p, xt, &[5, 60], map);
    let w = tape.constant(randn(&out.shape(), &mut rng));
    terms.push((out * w).sum());
    terms.into_iter().reduce(|a, b| a + b).unwrap()
}

#[test]
fn every_parameter_group_passes_finite_difference_checks() {
    let mut m = Model::<f64>::new(small_cfg()).unwrap();
    // zero biases put padded positions exactly on the leaky kink
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let ids: Vec<_> = m.params().ids().collect();
    for id in ids {
        for v in m.params_mut().get_mut(id).data_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += 0.1 * e;
        }
    }
    for (name, ids) in m.groups().named() {
        assert!(!ids.is_empty());
        // a step can straddle a kink; a wrong gradient fails at both sizes
        let err = [1e-5, 1e-6]
            .iter()
            .map(|&h| param_grad_check(&m, ids, probe_loss, h, 3).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(err < 1e-6, "{name}: relative error {err}");
    }
}

#[test]
fn groups_partition_the_parameters() {
    let m = default_model();
    let mut all: Vec<usize> = m.groups().named().iter().flat_map(|(_, ids)| ids.iter().map(|i| i.0)).collect();
    all.sort_unstable();
    assert_eq!(all, (0..m.params().len()).collect::<Vec<_>>());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let m = Model::<f64>::new(small_cfg()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.rfck");
    m.save(&path).unwrap();
    let back = Model::<f64>::load(&path).unwrap();
    assert_eq!(back.config(), m.config());
    for ((na, a), (nb, b)) in m.params().iter().zip(back.params().iter()) {
        assert_eq!(na, nb);
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = ModelConfig::new(60, &[3, 3, 3]);
    assert!(Model::<f64>::new(cfg.clone()).is_err());
    cfg.length = 64;
    cfg.beta_end = 0.02;
    assert!(Model::<f64>::new(cfg.clone()).is_err());
    cfg.beta_end = DEFAULT_BETA_END;
    cfg.cardinalities = vec![3, 1];
    assert!(Model::<f64>::new(cfg).is_err());
}

#[test]
fn f32_model_runs() {
    let m = default_model().cast::<f32>();
    let x = Tensor::<f32>::from_fn(&[1, 2, 64], |i| (i as f32 * 0.37).sin());
    let r = m.encode(&x).unwrap();
    assert!(r[0].is_finite());
}

