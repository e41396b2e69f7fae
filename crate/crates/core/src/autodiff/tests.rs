use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Contracts `y` with a fixed random tensor so every output element matters.
fn project<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, seed: u64) -> Var<'t, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rand_tensor(&mut rng, &y.shape());
    (y * tape.constant(r)).sum()
}

#[test]
fn conv_identity_kernel_example() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_f64(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]));
    let w = tape.constant(Tensor::from_f64(&[1, 1, 1], &[1.0]));
    let b = tape.constant(Tensor::zeros(&[1]));
    assert_eq!(x.conv1d(w, b).value().data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let tape = Tape::<f64>::new();
    let y = tape.constant(Tensor::<f64>::zeros(&[3])).softmax(0);
    for &p in y.value().data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[4, 2]);
    let mut oracle = [0.0f64; 6];
    for i in 0..3 {
        for j in 0..2 {
            for k in 0..4 {
                oracle[i * 2 + j] += a.at(&[i, k]) * b.at(&[k, j]);
            }
        }
    }
    let tape = Tape::<f64>::new();
    let c = tape.constant(a).matmul(tape.constant(b));
    for (x, y) in c.value().data().iter().zip(oracle) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn sum_gradient_is_ones() {
    let tape = Tape::<f64>::new();
    let x = tape.param(Tensor::<f64>::from_fn(&[2, 3], |i| i as f64));
    let g = tape.backward(x.sum()).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
}

#[test]
fn mse_against_zero_gradient() {
    let tape = Tape::<f64>::new();
    let x = tape.param(Tensor::from_f64(&[1], &[3.0]));
    let zero = tape.constant(Tensor::zeros(&[1]));
    let g = tape.backward(x.mse(zero)).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[6.0]);
}

#[test]
fn second_backward_is_contract_violation() {
    let tape = Tape::<f64>::new();
    let x = tape.param(Tensor::<f64>::ones(&[2]));
    let loss = x.sum();
    tape.backward(loss).unwrap();
    assert!(matches!(tape.backward(loss), Err(Error::Contract(_))));
}

#[test]
fn reset_allows_reuse() {
    let mut tape = Tape::<f64>::new();
    {
        let x = tape.param(Tensor::ones(&[2]));
        tape.backward(x.sum()).unwrap();
    }
    tape.reset();
    let x = tape.param(Tensor::ones(&[2]));
    assert!(tape.backward(x.sum()).is_ok());
}

#[test]
fn non_finite_output_names_the_op() {
    let tape = Tape::<f64>::new();
    let x = tape.param(Tensor::from_f64(&[2], &[-1.0, 1.0]));
    let y = x.ln().sum();
    match tape.backward(y) {
        Err(Error::NonFinite { op }) => assert_eq!(op, "log"),
        other => panic!("expected NonFinite, got {:?}", other.err()),
    }
}

#[test]
#[should_panic(expected = "matmul inner extent mismatch")]
fn shape_mismatch_panics() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let _ = a.matmul(b);
}

#[test]
fn grad_check_sum_of_squares() {
    let x = Tensor::from_f64(&[2], &[1.0, 2.0]);
    let err = grad_check(|_, v| (v * v).sum(), &x, 1e-5).unwrap();
    assert!(err < 1e-8, "err = {err}");
}

#[test]
fn grad_check_relu_away_from_kink() {
    let x = Tensor::from_f64(&[4], &[0.5, -0.3, 1.2, -2.0]);
    let err = grad_check(|t, v| project(t, v.relu(), 3), &x, 1e-5).unwrap();
    assert!(err < 1e-8, "err = {err}");
}

#[test]
fn constant_function_has_zero_gradient() {
    let tape = Tape::<f64>::new();
    let x = tape.param(Tensor::<f64>::ones(&[3]));
    let c = tape.constant(Tensor::scalar(4.0));
    let loss = x.scale(0.0).sum() + c;
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0; 3]);
}

/// Randomized finite-difference check of every primitive.
#[test]
fn every_primitive_passes_grad_check() {
    type Case = (&'static str, Vec<usize>, Box<dyn for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Var<'t, f64>>);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let other = rand_tensor(&mut rng, &[3, 4]);
    let rhs = rand_tensor(&mut rng, &[4, 2]);
    let brhs = rand_tensor(&mut rng, &[2, 4, 3]);
    let kernel = rand_tensor(&mut rng, &[3, 2, 5]);
    let bias = rand_tensor(&mut rng, &[3]);
    let cases: Vec<Case> = vec![
        ("add", vec![3, 4], Box::new({ let o = other.clone(); move |t, v| project(t, v + t.constant(o.clone()), 1) })),
        ("sub", vec![3, 4], Box::new({ let o = other.clone(); move |t, v| project(t, t.constant(o.clone()) - v, 1) })),
        ("mul", vec![3, 4], Box::new({ let o = other.clone(); move |t, v| project(t, v * t.constant(o.clone()), 1) })),
        ("self-mul", vec![3, 4], Box::new(|t, v| project(t, v * v, 2))),
        ("scale", vec![3, 4], Box::new(|t, v| project(t, v.scale(-1.7), 1))),
        ("add_scalar", vec![3, 4], Box::new(|t, v| project(t, v.add_scalar(0.3), 1))),
        ("matmul lhs", vec![3, 4], Box::new({ let r = rhs.clone(); move |t, v| project(t, v.matmul(t.constant(r.clone())), 4) })),
        ("matmul rhs", vec![4, 2], Box::new({ let o = other.clone(); move |t, v| project(t, t.constant(o.clone()).matmul(v), 4) })),
        ("bmm lhs", vec![2, 3, 4], Box::new({ let r = brhs.clone(); move |t, v| project(t, v.bmm(t.constant(r.clone())), 5) })),
        ("bmm rhs", vec![2, 4, 3], Box::new(move |t, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let l = rand_tensor(&mut rng, &[2, 3, 4]);
            project(t, t.constant(l).bmm(v), 5)
        })),
        ("conv1d input", vec![2, 2, 7], Box::new({
            let (k, b) = (kernel.clone(), bias.clone());
            move |t, v| project(t, v.conv1d(t.constant(k.clone()), t.constant(b.clone())), 6)
        })),
        ("conv1d weight", vec![3, 2, 5], Box::new({
            let b = bias.clone();
            move |t, v| {
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                let x = rand_tensor(&mut rng, &[2, 2, 7]);
                project(t, t.constant(x).conv1d(v, t.constant(b.clone())), 6)
            }
        })),
        ("conv1d bias", vec![3], Box::new({
            let k = kernel.clone();
            move |t, v| {
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                let x = rand_tensor(&mut rng, &[2, 2, 7]);
                project(t, t.constant(x).conv1d(t.constant(k.clone()), v), 6)
            }
        })),
        ("avg_pool2", vec![2, 3, 4], Box::new(|t, v| project(t, v.avg_pool2(), 7))),
        ("upsample2", vec![2, 3, 4], Box::new(|t, v| project(t, v.upsample2(), 7))),
        ("transpose", vec![2, 3, 4], Box::new(|t, v| project(t, v.transpose(), 8))),
        ("reshape", vec![2, 3, 4], Box::new(|t, v| project(t, v.reshape(&[6, 4]), 8))),
        ("concat", vec![2, 3], Box::new(|t, v| project(t, Var::concat(&[v, v.scale(2.0), v], 1), 9))),
        ("slice", vec![2, 5, 3], Box::new(|t, v| project(t, v.slice(1, 1, 3), 9))),
        ("repeat_leading", vec![3, 2], Box::new(|t, v| project(t, v.repeat_leading(4), 10))),
        ("repeat_trailing", vec![3, 2], Box::new(|t, v| project(t, v.repeat_trailing(4), 10))),
        ("leaky_relu", vec![3, 4], Box::new(|t, v| project(t, v.leaky_relu(0.2), 11))),
        ("exp", vec![3, 4], Box::new(|t, v| project(t, v.exp(), 12))),
        ("log", vec![3, 4], Box::new(|t, v| project(t, v.abs().add_scalar(0.5).ln(), 12))),
        ("softmax axis0", vec![3, 4], Box::new(|t, v| project(t, v.softmax(0), 13))),
        ("softmax axis1", vec![2, 3, 4], Box::new(|t, v| project(t, v.softmax(1), 13))),
        ("sum axis", vec![2, 3, 4], Box::new(|t, v| project(t, v.sum_axis(1), 14))),
        ("mean axis", vec![2, 3, 4], Box::new(|t, v| project(t, v.mean_axis(2), 14))),
        ("l2_normalize", vec![3, 4], Box::new(|t, v| project(t, v.l2_normalize(1, 1e-12), 15))),
        ("mse", vec![3, 4], Box::new({ let o = other.clone(); move |t, v| v.mse(t.constant(o.clone())) })),
    ];
    for (name, shape, f) in cases {
        let mut x = rand_tensor(&mut rng, &shape);
        // keep abs/relu-style kinks out of the finite-difference window
        x.data_mut().iter_mut().for_each(|v| {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        });
        let err = grad_check(|t, v| f(t, v), &x, 1e-5).unwrap();
        assert!(err < 1e-6, "{name}: relative error {err}");
    }
}

#[test]
fn gradient_accumulates_across_consumers() {
    let tape = Tape::<f64>::new();
    let x = tape.param(Tensor::from_f64(&[2], &[1.0, -2.0]));
    let loss = (x + x + x.scale(3.0)).sum();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[5.0, 5.0]);
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x0 = rand_tensor(&mut rng, &[4, 3]);
    fn l1(v: Var<'_, f64>) -> Var<'_, f64> {
        v.exp().sum()
    }
    fn l2(v: Var<'_, f64>) -> Var<'_, f64> {
        (v * v).softmax(1).ln().sum()
    }
    let grad_of = |f: &dyn for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Var<'t, f64>| {
        let tape = Tape::<f64>::new();
        let v = tape.param(x0.clone());
        let loss = f(&tape, v);
        tape.backward(loss).unwrap().get_or_zeros(v)
    };
    let (a, b) = (0.7, -1.3);
    let g1 = grad_of(&|_, v| l1(v));
    let g2 = grad_of(&|_, v| l2(v));
    let gc = grad_of(&|_, v| l1(v).scale(a) + l2(v).scale(b));
    for i in 0..x0.len() {
        let expect = a * g1.data()[i] + b * g2.data()[i];
        assert!((gc.data()[i] - expect).abs() < 1e-12);
    }
}

#[test]
fn l2_normalize_uses_epsilon_floor() {
    let tape = Tape::<f64>::new();
    let x = tape.param(Tensor::<f64>::zeros(&[1, 3]));
    let y = x.l2_normalize(1, 1e-12);
    assert_eq!(y.value().data(), &[0.0; 3]);
    let g = tape.backward(y.sum()).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&v| (v - 1e12).abs() < 1.0));
}

#[test]
fn detach_blocks_gradient() {
    let tape = Tape::<f64>::new();
    let x = tape.param(Tensor::<f64>::ones(&[2]));
    let loss = (x.detach() * x).sum();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[2, 2, 8]);
        let w = rand_tensor(&mut rng, &[4, 2, 3]);
        let tape = Tape::<f64>::new();
        let xv = tape.param(x);
        let wv = tape.param(w);
        let y = xv.conv1d(wv, tape.constant(Tensor::zeros(&[4]))).leaky_relu(0.2).softmax(1);
        let loss = project(&tape, y, 1);
        let g = tape.backward(loss).unwrap();
        (loss.item(), g.get_or_zeros(wv))
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(ga, gb);
}

#[test]
fn engine_runs_in_single_precision() {
    let tape = Tape::<f32>::new();
    let x = tape.param(Tensor::from_f64(&[1, 3], &[0.0, 1.0, 2.0]));
    let y = x.softmax(1).sum();
    assert!((y.item() - 1.0).abs() < 1e-6);
    let g = tape.backward(y).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|v| v.abs() < 1e-6));
}
