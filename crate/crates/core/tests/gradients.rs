//! Shift-rule and forward-mode derivatives against central finite differences.
//!
//! Steps: 1e-5 for first derivatives, 1e-4 for second and third.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfqnn_core::autodiff::{
    analytic_generator_gradient, derivative_jacobian, generator_contributions, gpsr_gradient,
    grad_ansatz, grad_generator, input_derivative, mixed_input_derivative, parameter_gradient,
    supervised_gradient, Backend, DerivativeSet, EvalCounter, GapSet, MultiIndex,
};
use tfqnn_core::circuits::{
    forward, Entangler, FeatureMapKind, LayoutKind, ModelSpec, QuantumModel, RotationSchedule,
};
use tfqnn_core::pde::{dqc_loss, dqc_loss_gradient, NseProblem, TaylorGreenSpec};
use tfqnn_core::training::cost_factor;

fn close(value: f64, oracle: f64, rel: f64, abs: f64) -> bool {
    if oracle.abs() < 1e-3 {
        (value - oracle).abs() < abs
    } else {
        ((value - oracle) / oracle).abs() < rel
    }
}

fn random_model(rng: &mut ChaCha8Rng, max_qubits: usize, max_features: usize) -> QuantumModel {
    let kind = FeatureMapKind::ALL[rng.gen_range(0..4)];
    let qubits = rng.gen_range(1..=max_qubits);
    let features = rng.gen_range(1..=max_features.min(qubits));
    let layout = match rng.gen_range(0..3) {
        0 => LayoutKind::Encode,
        1 => LayoutKind::Reupload,
        _ => LayoutKind::ReuploadSplit,
    };
    let spec = ModelSpec {
        qubits,
        layers: rng.gen_range(2..=3),
        feature_map: kind,
        rotations: [RotationSchedule::Yz, RotationSchedule::Xyz][rng.gen_range(0..2)],
        entangler: [Entangler::CxRing, Entangler::AnalogZzRing][rng.gen_range(0..2)],
        layout,
        features,
        input_scale: Some(rng.gen_range(0.3..1.0)),
        input_ranges: None,
    };
    let mut model = spec.build(rng.gen()).unwrap();
    let theta_f: Vec<f64> = (0..model.theta_f().len()).map(|_| rng.gen_range(0.5..1.5)).collect();
    model.set_theta_f(&theta_f).unwrap();
    model
}

fn random_input(rng: &mut ChaCha8Rng, dims: usize) -> Vec<f64> {
    (0..dims).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

fn eval_shifted(model: &QuantumModel, x: &[f64], dim: usize, h: f64) -> f64 {
    let mut y = x.to_vec();
    y[dim] += h;
    forward(model, &y).unwrap()
}

fn fd_input(model: &QuantumModel, x: &[f64], dim: usize, order: usize) -> f64 {
    let f = |h: f64| eval_shifted(model, x, dim, h);
    match order {
        1 => {
            let h = 1e-5;
            (f(h) - f(-h)) / (2.0 * h)
        }
        2 => {
            let h = 1e-4;
            (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h)
        }
        _ => unreachable!(),
    }
}

#[test]
fn grad_ansatz_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let model = random_model(&mut rng, 4, 2);
        let x = random_input(&mut rng, model.num_features());
        let i = rng.gen_range(0..model.theta_a().len());
        let g = grad_ansatz(&model, &x, i).unwrap();
        let h = 1e-5;
        let at = |d: f64| {
            let mut m = model.clone();
            let mut t = m.theta_a().to_vec();
            t[i] += d;
            m.set_theta_a(&t).unwrap();
            forward(&m, &x).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        assert!((g - fd).abs() < 1e-6, "{g} vs {fd}");
    }
}

#[test]
fn grad_generator_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    while checked < 60 {
        let model = random_model(&mut rng, 4, 2);
        if model.theta_f().is_empty() {
            continue;
        }
        checked += 1;
        let x = random_input(&mut rng, model.num_features());
        let j = rng.gen_range(0..model.theta_f().len());
        let g = grad_generator(&model, &x, j).unwrap();
        let h = 1e-5;
        let at = |d: f64| {
            let mut m = model.clone();
            let mut t = m.theta_f().to_vec();
            t[j] += d;
            m.set_theta_f(&t).unwrap();
            forward(&m, &x).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        assert!(close(g, fd, 1e-4, 1e-6), "{g} vs {fd}");
        let a = analytic_generator_gradient(&model, &x, j, |_| true).unwrap();
        assert!((a - g).abs() < 1e-10);
    }
}

#[test]
fn input_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let model = random_model(&mut rng, 4, 2);
        let x = random_input(&mut rng, model.num_features());
        let dim = rng.gen_range(0..model.num_features());
        for order in 1..=2 {
            let fd = fd_input(&model, &x, dim, order);
            for backend in [Backend::ShiftRule, Backend::AnalyticForward] {
                let d = input_derivative(&model, &x, dim, order, backend).unwrap();
                assert!(close(d, fd, 1e-4, 1e-6), "{backend:?} order {order}: {d} vs {fd}");
            }
        }
    }
}

#[test]
fn third_order_matches_finite_differences_of_second() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let model = random_model(&mut rng, 3, 1);
        let x = random_input(&mut rng, 1);
        let h = 1e-4;
        let second = |d: f64| {
            input_derivative(&model, &[x[0] + d], 0, 2, Backend::AnalyticForward).unwrap()
        };
        let fd = (second(h) - second(-h)) / (2.0 * h);
        let d3 = input_derivative(&model, &x, 0, 3, Backend::AnalyticForward).unwrap();
        assert!(close(d3, fd, 1e-4, 1e-6), "{d3} vs {fd}");
        let s3 = input_derivative(&model, &x, 0, 3, Backend::ShiftRule).unwrap();
        assert!((s3 - d3).abs() < 1e-8);
    }
}

#[test]
fn backends_agree_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let model = random_model(&mut rng, 4, 2);
        let x = random_input(&mut rng, model.num_features());
        for dim in 0..model.num_features() {
            for order in 1..=2 {
                let a = input_derivative(&model, &x, dim, order, Backend::ShiftRule).unwrap();
                let b = input_derivative(&model, &x, dim, order, Backend::AnalyticForward).unwrap();
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn mixed_multi_indices_agree_across_backends() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let counter = EvalCounter::new();
    for _ in 0..10 {
        let spec = ModelSpec {
            features: 3,
            layout: LayoutKind::Reupload,
            input_scale: Some(0.8),
            ..ModelSpec::cosine(FeatureMapKind::Trainable, 2, 2)
        };
        let mut model = spec.build(rng.gen()).unwrap();
        let tf: Vec<f64> = (0..model.theta_f().len()).map(|_| rng.gen_range(0.5..1.5)).collect();
        model.set_theta_f(&tf).unwrap();
        let x = random_input(&mut rng, 3);
        for alpha in [[1, 1, 0], [2, 1, 0], [1, 0, 1], [0, 2, 1], [1, 1, 1]] {
            let alpha = MultiIndex(alpha.to_vec());
            let a = mixed_input_derivative(&model, &x, &alpha, Backend::ShiftRule, &counter).unwrap();
            let b = mixed_input_derivative(&model, &x, &alpha, Backend::AnalyticForward, &counter)
                .unwrap();
            assert!((a - b).abs() < 1e-8, "{alpha:?}: {a} vs {b}");
        }
    }
}

#[test]
fn jacobian_of_derivatives_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..8 {
        let model = random_model(&mut rng, 3, 2);
        let dims = model.num_features();
        let x = random_input(&mut rng, dims);
        let mut requested = vec![MultiIndex::unit(dims, 0, 2)];
        if dims > 1 {
            requested.push(MultiIndex(vec![1, 1]));
        }
        let set = DerivativeSet::new(dims, &requested).unwrap();
        let jac = derivative_jacobian(&model, &x, &set, &EvalCounter::new()).unwrap();
        let params = model.params();
        for k in 0..params.len() {
            let h = 1e-5;
            let values_at = |d: f64| {
                let mut m = model.clone();
                let mut p = params.clone();
                p[k] += d;
                m.set_params(&p).unwrap();
                tfqnn_core::autodiff::input_derivatives(&m, &x, &set).unwrap()
            };
            let (up, down) = (values_at(h), values_at(-h));
            for pos in 0..set.len() {
                let fd = (up[pos] - down[pos]) / (2.0 * h);
                let g = jac.grads[k][pos];
                assert!(close(g, fd, 1e-4, 1e-6), "param {k} index {:?}: {g} vs {fd}", set.indices()[pos]);
            }
        }
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let model = random_model(&mut rng, 3, 1);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| random_input(&mut rng, 1)).collect();
        let ys: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = supervised_gradient(&model, &xs, &ys, &EvalCounter::new()).unwrap();
        let params = model.params();
        let loss_at = |p: &[f64]| {
            let mut m = model.clone();
            m.set_params(p).unwrap();
            supervised_gradient(&m, &xs, &ys, &EvalCounter::new()).unwrap().loss
        };
        for k in 0..params.len() {
            let h = 1e-5;
            let mut up = params.clone();
            up[k] += h;
            let mut down = params.clone();
            down[k] -= h;
            let fd = (loss_at(&up) - loss_at(&down)) / (2.0 * h);
            assert!(close(g.grad[k], fd, 1e-4, 1e-6), "{k}: {} vs {fd}", g.grad[k]);
        }
    }
}

#[test]
fn reupload_sum_rule() {
    let spec = ModelSpec {
        layout: LayoutKind::Reupload,
        ..ModelSpec::cosine(FeatureMapKind::Trainable, 3, 3)
    };
    let mut model = spec.build(9).unwrap();
    model.set_theta_f(&[0.8, 1.1, 1.3]).unwrap();
    let x = [0.7];
    for j in 0..3 {
        let total = grad_generator(&model, &x, j).unwrap();
        let parts = generator_contributions(&model, &x, j, &EvalCounter::new()).unwrap();
        assert_eq!(parts.len(), 2);
        let mut masked = 0.0;
        for (occurrence, shifted) in parts {
            let single = analytic_generator_gradient(&model, &x, j, |o| o == occurrence).unwrap();
            assert!((single - shifted).abs() < 1e-10);
            masked += single;
        }
        assert!((masked - total).abs() < 1e-10);
    }
}

#[test]
fn gpsr_is_linear_in_the_evaluator() {
    let model = ModelSpec::cosine(FeatureMapKind::Tower, 2, 2).build(3).unwrap();
    let gaps = GapSet::new(vec![1.0, 2.0, 3.0]).unwrap();
    let f = |t: f64| forward(&model, &[t]).unwrap();
    for a in [-2.0, 0.5, 3.0] {
        let scaled = gpsr_gradient(|t| a * f(t), &gaps, 0.4).unwrap();
        let plain = gpsr_gradient(f, &gaps, 0.4).unwrap();
        assert!((scaled - a * plain).abs() < 1e-12);
    }
}

#[test]
fn evaluation_ratio_equals_cost_factor() {
    let tf = ModelSpec::flow_architecture(FeatureMapKind::Trainable, 6, 10).build(0).unwrap();
    let ff = ModelSpec::flow_architecture(FeatureMapKind::Simple, 6, 10).build(0).unwrap();
    let x = [0.3, -0.2, 0.9];
    let (c_tf, c_ff) = (EvalCounter::new(), EvalCounter::new());
    parameter_gradient(&tf, &x, &c_tf).unwrap();
    parameter_gradient(&ff, &x, &c_ff).unwrap();
    assert_eq!((c_tf.shifted(), c_ff.shifted()), (384, 360));
    let ratio = c_tf.shifted() as f64 / c_ff.shifted() as f64;
    assert_eq!(ratio, cost_factor(12, 180).unwrap());
}

#[test]
fn shift_rule_cost_grows_with_order() {
    let model = ModelSpec::cosine(FeatureMapKind::Simple, 3, 1).build(0).unwrap();
    for order in 1..=3u32 {
        let counter = EvalCounter::new();
        mixed_input_derivative(
            &model,
            &[0.4],
            &MultiIndex::unit(1, 0, order as usize),
            Backend::ShiftRule,
            &counter,
        )
        .unwrap();
        assert_eq!(counter.shifted(), 6u64.pow(order));
    }
}

#[test]
fn dqc_gradient_matches_finite_differences() {
    let spec = TaylorGreenSpec {
        x: tfqnn_core::pde::Axis { lo: 0.25, hi: 2.75, n: 4 },
        y: tfqnn_core::pde::Axis { lo: 0.25, hi: 2.75, n: 4 },
        t: tfqnn_core::pde::Axis { lo: 0.0, hi: 1.0, n: 2 },
        reynolds: 10.0,
    };
    let reference = spec.field().unwrap();
    let model_spec = ModelSpec {
        features: 3,
        layout: LayoutKind::Reupload,
        entangler: Entangler::AnalogZzRing,
        ..ModelSpec::cosine(FeatureMapKind::Trainable, 3, 2)
    };
    let mut problem = NseProblem::from_reference(&model_spec, &reference, (2, 2), 5).unwrap();
    let mut params = problem.params();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = params.len();
    for (k, p) in params.iter_mut().enumerate() {
        if k >= n - 4 {
            *p = rng.gen_range(0.5..1.5);
        }
    }
    problem.set_params(&params).unwrap();
    let batch: Vec<[f64; 3]> = reference.points().into_iter().step_by(5).collect();
    let data = problem.data.clone();
    let g = dqc_loss_gradient(&problem, &batch, &data, &EvalCounter::new()).unwrap();
    let direct = dqc_loss(&problem, problem.reynolds, &batch, &data).unwrap();
    assert!((g.loss.total - direct.total).abs() < 1e-10);
    assert!((g.loss.total - g.loss.l_pde - g.loss.l_data).abs() < 1e-12);
    for k in 0..n {
        let h = 1e-5;
        let at = |d: f64| {
            let mut q = problem.clone();
            let mut p = params.clone();
            p[k] += d;
            q.set_params(&p).unwrap();
            dqc_loss(&q, q.reynolds, &batch, &data).unwrap().total
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        assert!(close(g.grad[k], fd, 1e-4, 1e-6), "param {k}: {} vs {fd}", g.grad[k]);
    }
}
