//! Dense statevector simulation.
//!
//! Qubit ordering is little-endian: qubit 0 is the least significant bit of
//! the basis index. Rotations follow `R_σ(α) = exp(-i α σ / 2)`.
//!
//! The gate kernels operate on raw amplitude slices so that the derivative
//! tracker in [`crate::autodiff`] can reuse them on unnormalized tangent
//! vectors.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circuits::EncodingBlock;
use crate::error::{Error, Result};

/// Default upper bound on the simulated register width.
pub const DEFAULT_MAX_QUBITS: usize = 14;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl std::str::FromStr for Pauli {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "X" | "x" => Ok(Pauli::X),
            "Y" | "y" => Ok(Pauli::Y),
            "Z" | "z" => Ok(Pauli::Z),
            other => Err(Error::Config(format!("unknown Pauli axis `{other}`"))),
        }
    }
}

/// A single gate of the circuit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GateSpec {
    /// `exp(-i angle σ/2)` on one qubit.
    Rotation { axis: Pauli, qubit: usize, angle: f64 },
    Cx { control: usize, target: usize },
    /// `exp(i π n_k n_l)`: a phase of -1 on the basis states with both qubits set.
    AnalogZz { qubit_k: usize, qubit_l: usize },
}

impl GateSpec {
    pub fn validate(&self, num_qubits: usize) -> Result<()> {
        let check = |q: usize| {
            if q >= num_qubits {
                Err(Error::Index(format!(
                    "qubit {q} out of range for a {num_qubits}-qubit register"
                )))
            } else {
                Ok(())
            }
        };
        match *self {
            GateSpec::Rotation { qubit, .. } => check(qubit),
            GateSpec::Cx { control: a, target: b }
            | GateSpec::AnalogZz { qubit_k: a, qubit_l: b } => {
                check(a)?;
                check(b)?;
                if a == b {
                    return Err(Error::Index(format!(
                        "two-qubit gate acts twice on qubit {a}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Applies the gate to a raw amplitude slice. Indices must already be valid.
    pub fn apply_to(&self, amps: &mut [Complex64]) {
        match *self {
            GateSpec::Rotation { axis, qubit, angle } => rotate(amps, axis, qubit, angle),
            GateSpec::Cx { control, target } => cx(amps, control, target),
            GateSpec::AnalogZz { qubit_k, qubit_l } => analog_zz(amps, qubit_k, qubit_l),
        }
    }
}

/// `exp(-i angle σ/2)` on `qubit`.
pub fn rotate(amps: &mut [Complex64], axis: Pauli, qubit: usize, angle: f64) {
    let (s, c) = (0.5 * angle).sin_cos();
    let stride = 1usize << qubit;
    match axis {
        Pauli::X => {
            let ms = Complex64::new(0.0, -s);
            for_each_pair(amps, stride, |a0, a1| {
                let (x0, x1) = (*a0, *a1);
                *a0 = x0 * c + x1 * ms;
                *a1 = x0 * ms + x1 * c;
            });
        }
        Pauli::Y => {
            for_each_pair(amps, stride, |a0, a1| {
                let (x0, x1) = (*a0, *a1);
                *a0 = x0 * c - x1 * s;
                *a1 = x0 * s + x1 * c;
            });
        }
        Pauli::Z => {
            let lo = Complex64::new(c, -s);
            let hi = Complex64::new(c, s);
            for_each_pair(amps, stride, |a0, a1| {
                *a0 *= lo;
                *a1 *= hi;
            });
        }
    }
}

/// Multiplies the slice by the bare Pauli matrix on `qubit`.
pub fn apply_pauli(amps: &mut [Complex64], axis: Pauli, qubit: usize) {
    let stride = 1usize << qubit;
    match axis {
        Pauli::X => for_each_pair(amps, stride, |a0, a1| std::mem::swap(a0, a1)),
        Pauli::Y => for_each_pair(amps, stride, |a0, a1| {
            let (x0, x1) = (*a0, *a1);
            *a0 = Complex64::new(x1.im, -x1.re);
            *a1 = Complex64::new(-x0.im, x0.re);
        }),
        Pauli::Z => for_each_pair(amps, stride, |_, a1| *a1 = -*a1),
    }
}

pub fn cx(amps: &mut [Complex64], control: usize, target: usize) {
    let cmask = 1usize << control;
    let tmask = 1usize << target;
    for i in 0..amps.len() {
        if i & cmask != 0 && i & tmask == 0 {
            amps.swap(i, i | tmask);
        }
    }
}

pub fn analog_zz(amps: &mut [Complex64], qubit_k: usize, qubit_l: usize) {
    let mask = (1usize << qubit_k) | (1usize << qubit_l);
    for (i, a) in amps.iter_mut().enumerate() {
        if i & mask == mask {
            *a = -*a;
        }
    }
}

#[inline]
fn for_each_pair(
    amps: &mut [Complex64],
    stride: usize,
    mut f: impl FnMut(&mut Complex64, &mut Complex64),
) {
    for block in amps.chunks_exact_mut(2 * stride) {
        let (lo, hi) = block.split_at_mut(stride);
        for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
            f(a0, a1);
        }
    }
}

/// Observable measured at the end of every circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostOperator {
    /// `Σ_m Z^m`, equally weighted over all qubits.
    #[default]
    TotalMagnetization,
}

impl CostOperator {
    /// Diagonal entry of the operator for a computational basis index.
    #[inline]
    pub fn diagonal(&self, num_qubits: usize, index: usize) -> f64 {
        match self {
            CostOperator::TotalMagnetization => {
                num_qubits as f64 - 2.0 * index.count_ones() as f64
            }
        }
    }

    /// `⟨a|C|b⟩` for arbitrary (possibly unnormalized) vectors.
    pub fn bilinear(&self, num_qubits: usize, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(i, (x, y))| x.conj() * y * self.diagonal(num_qubits, i))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// `|0…0⟩` on `num_qubits` qubits, bounded by [`DEFAULT_MAX_QUBITS`].
    pub fn zero(num_qubits: usize) -> Result<Self> {
        Self::zero_with_cap(num_qubits, DEFAULT_MAX_QUBITS)
    }

    pub fn zero_with_cap(num_qubits: usize, cap: usize) -> Result<Self> {
        if num_qubits == 0 || num_qubits > cap {
            return Err(Error::Capacity(format!(
                "requested {num_qubits} qubits, supported range is 1..={cap}"
            )));
        }
        let mut amplitudes = vec![ZERO; 1 << num_qubits];
        amplitudes[0] = ONE;
        Ok(Self {
            num_qubits,
            amplitudes,
        })
    }

    pub fn from_amplitudes(num_qubits: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        if num_qubits == 0 || num_qubits > DEFAULT_MAX_QUBITS {
            return Err(Error::Capacity(format!("{num_qubits} qubits")));
        }
        if amplitudes.len() != 1 << num_qubits {
            return Err(Error::Input(format!(
                "expected {} amplitudes, got {}",
                1usize << num_qubits,
                amplitudes.len()
            )));
        }
        let state = Self {
            num_qubits,
            amplitudes,
        };
        if (state.norm() - 1.0).abs() > 1e-10 {
            return Err(Error::Input(format!(
                "amplitudes are not normalized (norm {})",
                state.norm()
            )));
        }
        Ok(state)
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|a| a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// In-place gate application.
    pub fn apply(&mut self, gate: &GateSpec) -> Result<()> {
        gate.validate(self.num_qubits)?;
        gate.apply_to(&mut self.amplitudes);
        Ok(())
    }

    /// Probability-weighted `⟨Z⟩` of a single qubit.
    pub fn z_expectation(&self, qubit: usize) -> f64 {
        let mask = 1usize << qubit;
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| if i & mask == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum()
    }
}

pub fn new_zero_state(num_qubits: usize) -> Result<StateVector> {
    StateVector::zero(num_qubits)
}

pub fn apply_gate(mut state: StateVector, gate: &GateSpec) -> Result<StateVector> {
    state.apply(gate)?;
    Ok(state)
}

/// Applies the product feature map of `block` at the given feature value:
/// one `exp(-i w_m φ(x) σ/2)` per qubit of the block, with `w_m = γ_m θ_m`.
pub fn evolve_encoding_block(
    mut state: StateVector,
    block: &EncodingBlock,
    theta_f: &[f64],
    feature_value: f64,
) -> Result<StateVector> {
    let weights = block.weights(theta_f)?;
    let arg = block.phi.apply(feature_value);
    for (&qubit, w) in block.qubits.iter().zip(weights) {
        state.apply(&GateSpec::Rotation {
            axis: block.axis,
            qubit,
            angle: w * arg,
        })?;
    }
    Ok(state)
}

pub fn expectation(state: &StateVector, cost: &CostOperator) -> f64 {
    let n = state.num_qubits;
    state
        .amplitudes
        .iter()
        .enumerate()
        .map(|(i, a)| a.norm_sqr() * cost.diagonal(n, i))
        .sum()
}
