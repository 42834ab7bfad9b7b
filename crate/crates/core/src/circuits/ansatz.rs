use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qstate::Pauli;

/// Two-qubit entangler applied around the ring after the rotations of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entangler {
    CxRing,
    AnalogZzRing,
    None,
}

impl std::str::FromStr for Entangler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cx" | "cx_ring" => Ok(Entangler::CxRing),
            "analog_zz" | "analog_zz_ring" | "sdaqc" => Ok(Entangler::AnalogZzRing),
            "none" => Ok(Entangler::None),
            other => Err(Error::Config(format!("unknown entangler `{other}`"))),
        }
    }
}

/// Per-qubit rotation schedule of a hardware-efficient layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationSchedule {
    /// RY then RZ on every qubit.
    Yz,
    /// RX, RY, RZ on every qubit.
    Xyz,
    /// A single RY per qubit.
    Y,
}

impl RotationSchedule {
    pub fn axes(self) -> &'static [Pauli] {
        match self {
            RotationSchedule::Yz => &[Pauli::Y, Pauli::Z],
            RotationSchedule::Xyz => &[Pauli::X, Pauli::Y, Pauli::Z],
            RotationSchedule::Y => &[Pauli::Y],
        }
    }
}

/// Ring connectivity `(0,1), (1,2), ..., (N-1,0)`; a single pair for two qubits.
pub fn ring_pairs(num_qubits: usize) -> Vec<(usize, usize)> {
    match num_qubits {
        0 | 1 => Vec::new(),
        2 => vec![(0, 1)],
        n => (0..n).map(|i| (i, (i + 1) % n)).collect(),
    }
}

/// One hardware-efficient ansatz layer.
///
/// Parameters are laid out axis-major: `param_offset + axis_index * N + qubit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzLayer {
    pub rotations: RotationSchedule,
    pub entangler: Entangler,
    pub param_offset: usize,
}

impl AnsatzLayer {
    pub fn num_params(&self, num_qubits: usize) -> usize {
        self.rotations.axes().len() * num_qubits
    }

    pub fn param_slice(&self, num_qubits: usize) -> std::ops::Range<usize> {
        self.param_offset..self.param_offset + self.num_params(num_qubits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_topology() {
        assert!(ring_pairs(1).is_empty());
        assert_eq!(ring_pairs(2), vec![(0, 1)]);
        assert_eq!(ring_pairs(4), vec![(0, 1), (1, 2), (2, 3), (3, 0)]);
    }

    #[test]
    fn param_slices() {
        let layer = AnsatzLayer {
            rotations: RotationSchedule::Xyz,
            entangler: Entangler::CxRing,
            param_offset: 18,
        };
        assert_eq!(layer.param_slice(6), 18..36);
    }
}
