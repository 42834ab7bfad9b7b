use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfqnn_core::circuits::{
    dft_spectrum_windowed, find_peaks, forward, make_feature_map, uniform_grid, Entangler,
    FeatureMapKind, LayoutKind, ModelBuilder, ModelSpec, Phi, RotationSchedule, SpectrumMode,
    SpectrumReport, Window, DEFAULT_GAP_TOL,
};
use tfqnn_core::pde::{NseProblem, TaylorGreenSpec};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trainable_at_unit_theta_reduces_to_simple(
        qubits in 1usize..=4,
        layers in 1usize..=3,
        seed in any::<u64>(),
        x in -10.0f64..10.0,
    ) {
        let tf = ModelSpec::cosine(FeatureMapKind::Trainable, qubits, layers).build(seed).unwrap();
        let ff = ModelSpec::cosine(FeatureMapKind::Simple, qubits, layers).build(seed).unwrap();
        prop_assert_eq!(tf.theta_a(), ff.theta_a());
        let a = forward(&tf, &[x]).unwrap();
        let b = forward(&ff, &[x]).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn global_scale_equals_trainable_theta(
        qubits in 1usize..=3,
        seed in any::<u64>(),
        scale in -3.0f64..3.0,
        x in -5.0f64..5.0,
    ) {
        // φ(x) = s x on a fixed map against θ_F = s on the trainable one.
        let mut b = ModelBuilder::new(qubits, 1);
        b.encode(make_feature_map(FeatureMapKind::Simple, qubits, 0).unwrap().with_phi(Phi::GlobalScale { scale }));
        b.ansatz(RotationSchedule::Yz, Entangler::CxRing);
        let scaled = b.build_seeded(seed).unwrap();

        let mut b = ModelBuilder::new(qubits, 1);
        b.encode(make_feature_map(FeatureMapKind::Trainable, qubits, 0).unwrap());
        b.ansatz(RotationSchedule::Yz, Entangler::CxRing);
        let mut trainable = b.build_seeded(seed).unwrap();
        trainable.set_theta_f(&vec![scale; qubits]).unwrap();

        let ga = scaled.circuit().gates(&scaled.angles(&[x]));
        let gb = trainable.circuit().gates(&trainable.angles(&[x]));
        prop_assert_eq!(ga, gb);
        prop_assert_eq!(forward(&scaled, &[x]).unwrap(), forward(&trainable, &[x]).unwrap());
    }
}

/// Peaks of the sampled model output must sit on generator gaps.
#[test]
fn dft_peaks_lie_on_generator_gaps() {
    for (kind, theta) in [
        (FeatureMapKind::Simple, vec![]),
        (FeatureMapKind::Tower, vec![]),
        (FeatureMapKind::Trainable, vec![0.9, 1.25]),
    ] {
        let mut model = ModelSpec::cosine(kind, 2, 3).build(17).unwrap();
        if !theta.is_empty() {
            model.set_theta_f(&theta).unwrap();
        }
        let report = SpectrumReport::from_block(
            &model.blocks()[0],
            model.theta_f(),
            SpectrumMode::QnnGaps,
            DEFAULT_GAP_TOL,
        )
        .unwrap();
        let xs = uniform_grid(-40.0 * PI, 40.0 * PI, 4096);
        let ys: Vec<f64> = xs.iter().map(|&x| forward(&model, &[x]).unwrap()).collect();
        let spectrum = dft_spectrum_windowed(&xs, &ys, Window::Hann).unwrap();
        let resolution = 2.0 * PI / (xs[xs.len() - 1] - xs[0]);
        // The constant term sits at ω = 0.
        let allowed: Vec<f64> = std::iter::once(0.0).chain(report.gaps.iter().copied()).collect();
        for (w, _) in find_peaks(&spectrum, 0.05) {
            let nearest = allowed
                .iter()
                .map(|g| (g - w).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 2.0 * resolution, "{kind:?}: peak {w} vs gaps {:?}", report.gaps);
        }
    }
}

#[test]
fn mass_continuity_for_random_stream_models() {
    let reference = TaylorGreenSpec::desk().field().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..3 {
        let spec = ModelSpec {
            features: 3,
            layout: [LayoutKind::Reupload, LayoutKind::ReuploadSplit, LayoutKind::Serial][seed],
            ..ModelSpec::cosine(FeatureMapKind::Trainable, 3, 2)
        };
        let mut problem = NseProblem::from_reference(&spec, &reference, (10, 10), seed as u64).unwrap();
        let mut params = problem.params();
        for p in params.iter_mut() {
            *p += rng.gen_range(-0.3..0.3);
        }
        problem.set_params(&params).unwrap();
        for _ in 0..100 {
            let pt = [rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..4.0)];
            assert!(problem.mass_continuity(pt).unwrap().abs() < 1e-8);
        }
    }
}
