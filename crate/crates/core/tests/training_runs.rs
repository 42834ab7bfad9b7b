use std::f64::consts::PI;

use tfqnn_core::circuits::{FeatureMapKind, ModelSpec};
use tfqnn_core::training::{
    dataset_mse, sample_cosine_series, train_supervised, TrainConfig,
};

fn config(iterations: usize, batch_size: usize, learning_rate: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_size,
        learning_rate,
        seed,
    }
}

#[test]
fn zero_iterations_keeps_initial_parameters() {
    let data = sample_cosine_series(&[1.0], (-4.0 * PI, 4.0 * PI)).unwrap();
    let mut model = ModelSpec::cosine(FeatureMapKind::Trainable, 2, 2).build(3).unwrap();
    let before = model.params();
    let report = train_supervised(&mut model, &data, &config(0, 2, 1e-2, 0)).unwrap();
    assert!(report.loss_trace.is_empty());
    assert_eq!(model.params(), before);
    assert_eq!(report.theta_f, vec![1.0, 1.0]);
    assert_eq!(report.final_mse, dataset_mse(&model, &data).unwrap());
}

#[test]
fn single_qubit_fits_cosine() {
    let data = sample_cosine_series(&[1.0], (-4.0 * PI, 4.0 * PI)).unwrap();
    let mut model = ModelSpec::cosine(FeatureMapKind::Simple, 1, 1).build(7).unwrap();
    let report = train_supervised(&mut model, &data, &config(500, 2, 1e-2, 7)).unwrap();
    assert_eq!(report.loss_trace.len(), 500);
    assert!(report.final_mse < 1e-3, "final mse {}", report.final_mse);

    // 100-iteration moving average trends down after the first 100 steps.
    let avg: Vec<f64> = report
        .loss_trace
        .windows(100)
        .map(|w| w.iter().sum::<f64>() / 100.0)
        .collect();
    for pair in avg[100..].windows(50).step_by(50) {
        assert!(pair[49] <= pair[0] + 1e-3, "{} -> {}", pair[0], pair[49]);
    }
    assert!(avg[avg.len() - 1] < avg[0]);
}

#[test]
fn training_is_deterministic() {
    let data = sample_cosine_series(&[1.0, 2.0], (-PI, PI)).unwrap();
    let run = || {
        let mut model = ModelSpec::cosine(FeatureMapKind::Trainable, 2, 2).build(11).unwrap();
        train_supervised(&mut model, &data, &config(40, 3, 1e-2, 5)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.theta_a, b.theta_a);
    assert_eq!(a.theta_f, b.theta_f);
}

#[test]
fn trainable_and_fixed_models_start_equal() {
    let data = sample_cosine_series(&[1.0, 1.2, 3.0], (-4.0 * PI, 4.0 * PI)).unwrap();
    let tf = ModelSpec::cosine(FeatureMapKind::Trainable, 4, 4).build(2).unwrap();
    let ff = ModelSpec::cosine(FeatureMapKind::Simple, 4, 4).build(2).unwrap();
    let (a, b) = (dataset_mse(&tf, &data).unwrap(), dataset_mse(&ff, &data).unwrap());
    assert!((a - b).abs() < 1e-12);

    let mut tf = tf;
    let mut ff = ff;
    let rt = train_supervised(&mut tf, &data, &config(1, 2, 1e-3, 9)).unwrap();
    let rf = train_supervised(&mut ff, &data, &config(1, 2, 1e-3, 9)).unwrap();
    assert!((rt.loss_trace[0] - rf.loss_trace[0]).abs() < 1e-12);
}

#[test]
fn invalid_configs_are_rejected() {
    let data = sample_cosine_series(&[1.0], (0.0, 10.0)).unwrap();
    let mut model = ModelSpec::cosine(FeatureMapKind::Simple, 1, 1).build(0).unwrap();
    assert!(train_supervised(&mut model, &data, &config(5, 0, 1e-2, 0)).is_err());
    assert!(train_supervised(&mut model, &data, &config(5, 1, 0.0, 0)).is_err());
    assert!(train_supervised(&mut model, &data, &config(5, 1000, 1e-2, 0)).is_err());
}
