//! Dense-matrix oracles: generators and feature-map unitaries built from
//! explicit Kronecker products and diagonalized with nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use tfqnn_core::circuits::{
    composite_eigenvalues, make_feature_map, spectral_gaps, EncodingBlock, FeatureMapKind, Phi,
    DEFAULT_GAP_TOL,
};
use tfqnn_core::qstate::{evolve_encoding_block, Pauli, StateVector};

type CMat = DMatrix<Complex64>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn pauli(axis: Pauli) -> CMat {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let i = c(0.0, 1.0);
    match axis {
        Pauli::X => CMat::from_row_slice(2, 2, &[z, one, one, z]),
        Pauli::Y => CMat::from_row_slice(2, 2, &[z, -i, i, z]),
        Pauli::Z => CMat::from_row_slice(2, 2, &[one, z, z, -one]),
    }
}

/// `σ` on `qubit` of an `n`-qubit register; qubit 0 is the least significant bit.
fn embed(axis: Pauli, qubit: usize, n: usize) -> CMat {
    let mut out = CMat::identity(1, 1);
    for q in (0..n).rev() {
        let factor = if q == qubit { pauli(axis) } else { CMat::identity(2, 2) };
        out = out.kronecker(&factor);
    }
    out
}

fn generator(block: &EncodingBlock, theta_f: &[f64], n: usize) -> CMat {
    let weights = block.weights(theta_f).unwrap();
    let mut g = CMat::zeros(1 << n, 1 << n);
    for (&q, w) in block.qubits.iter().zip(weights) {
        g += embed(block.axis, q, n) * c(0.5 * w, 0.0);
    }
    g
}

fn dense_eigenvalues(g: CMat) -> Vec<f64> {
    let mut e: Vec<f64> = g.symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

fn dense_unitary(g: &CMat, t: f64) -> CMat {
    let eig = g.clone().symmetric_eigen();
    let v = eig.eigenvectors.clone();
    let phases = CMat::from_diagonal(&eig.eigenvalues.map(|l| Complex64::from_polar(1.0, -l * t)));
    &v * phases * v.adjoint()
}

fn oracle_gaps(kind: FeatureMapKind, n: usize) -> Vec<f64> {
    let block = make_feature_map(kind, n, 0).unwrap();
    let theta = vec![1.0; n];
    spectral_gaps(&dense_eigenvalues(generator(&block, &theta, n)), 1e-8)
}

#[test]
fn gaps_of_three_qubit_feature_maps() {
    let cases = [
        (FeatureMapKind::Simple, vec![1.0, 2.0, 3.0]),
        (FeatureMapKind::Tower, (1..=6).map(f64::from).collect()),
        (FeatureMapKind::Exponential, (1..=7).map(f64::from).collect()),
    ];
    for (kind, expected) in cases {
        let block = make_feature_map(kind, 3, 0).unwrap();
        let gaps = spectral_gaps(&composite_eigenvalues(&block, &[1.0; 3]).unwrap(), DEFAULT_GAP_TOL);
        assert_eq!(gaps, expected, "{kind:?}");
        let oracle = oracle_gaps(kind, 3);
        assert_eq!(oracle.len(), gaps.len());
        for (a, b) in gaps.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10, "{kind:?}: {a} vs {b}");
        }
    }
}

#[test]
fn composite_eigenvalues_match_diagonalization() {
    for n in 1..=3 {
        for kind in FeatureMapKind::ALL {
            let block = make_feature_map(kind, n, 0).unwrap();
            let theta: Vec<f64> = (0..n).map(|m| 0.7 + 0.31 * m as f64).collect();
            let ours = composite_eigenvalues(&block, &theta).unwrap();
            let dense = dense_eigenvalues(generator(&block, &theta, n));
            for (a, b) in ours.iter().zip(&dense) {
                assert!((a - b).abs() < 1e-10, "{kind:?} n={n}: {a} vs {b}");
            }
        }
    }
}

fn random_state(n: usize, seeds: &[f64]) -> StateVector {
    let mut amps: Vec<Complex64> = (0..1 << n)
        .map(|i| c((seeds[i % seeds.len()] * (i + 1) as f64).sin(), (seeds[(i + 1) % seeds.len()] + i as f64).cos()))
        .collect();
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    amps.iter_mut().for_each(|a| *a /= norm);
    StateVector::from_amplitudes(n, amps).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn encoding_block_matches_matrix_exponential(
        n in 1usize..=3,
        kind_index in 0usize..4,
        axis_index in 0usize..3,
        x in -4.0f64..4.0,
        scale in 0.2f64..2.0,
        theta in proptest::collection::vec(-2.0f64..2.0, 3),
        seeds in proptest::collection::vec(-3.0f64..3.0, 4),
    ) {
        let kind = FeatureMapKind::ALL[kind_index];
        let mut block = make_feature_map(kind, n, 0).unwrap().with_phi(Phi::GlobalScale { scale });
        block.axis = [Pauli::X, Pauli::Y, Pauli::Z][axis_index];
        let theta = &theta[..n];
        let state = random_state(n, &seeds);
        let ours = evolve_encoding_block(state.clone(), &block, theta, x).unwrap();
        let u = dense_unitary(&generator(&block, theta, n), scale * x);
        let v = nalgebra::DVector::from_column_slice(state.amplitudes());
        let expected = u * v;
        for (a, b) in ours.amplitudes().iter().zip(expected.iter()) {
            prop_assert!((a - b).norm() < 1e-10);
        }
    }
}
