use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qstate::Pauli;

/// Weighting scheme of a product feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMapKind {
    /// `γ_m = 1`
    Simple,
    /// `γ_m = m`
    Tower,
    /// `γ_m = 2^(m-1)`
    Exponential,
    /// `γ_m = 1` multiplied by a trainable `θ_m`
    Trainable,
}

impl FeatureMapKind {
    pub const ALL: [FeatureMapKind; 4] = [
        FeatureMapKind::Simple,
        FeatureMapKind::Tower,
        FeatureMapKind::Exponential,
        FeatureMapKind::Trainable,
    ];

    pub fn is_trainable(self) -> bool {
        matches!(self, FeatureMapKind::Trainable)
    }

    /// Fixed weight of the `m`-th qubit of a block (1-based `m`).
    pub fn gamma(self, m: usize) -> f64 {
        match self {
            FeatureMapKind::Simple | FeatureMapKind::Trainable => 1.0,
            FeatureMapKind::Tower => m as f64,
            FeatureMapKind::Exponential => 2f64.powi(m as i32 - 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureMapKind::Simple => "simple",
            FeatureMapKind::Tower => "tower",
            FeatureMapKind::Exponential => "exponential",
            FeatureMapKind::Trainable => "trainable",
        }
    }
}

impl std::str::FromStr for FeatureMapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(FeatureMapKind::Simple),
            "tower" => Ok(FeatureMapKind::Tower),
            "exponential" => Ok(FeatureMapKind::Exponential),
            "trainable" => Ok(FeatureMapKind::Trainable),
            other => Err(Error::Config(format!("unknown feature map kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for FeatureMapKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Encoding function applied to the raw feature before it multiplies the generator.
///
/// All variants are affine in `x`, so higher derivatives of the encoded angle vanish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Phi {
    Identity,
    GlobalScale { scale: f64 },
    Affine { scale: f64, shift: f64 },
}

impl Default for Phi {
    fn default() -> Self {
        Phi::Identity
    }
}

impl Phi {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Phi::Identity => x,
            Phi::GlobalScale { scale } => scale * x,
            Phi::Affine { scale, shift } => scale * x + shift,
        }
    }

    /// `dφ/dx`
    #[inline]
    pub fn slope(&self) -> f64 {
        match *self {
            Phi::Identity => 1.0,
            Phi::GlobalScale { scale } | Phi::Affine { scale, .. } => scale,
        }
    }

    /// Maps the interval `[lo, hi]` onto `[0, π]`.
    pub fn normalizing(lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::Config(format!("empty input range [{lo}, {hi}]")));
        }
        let scale = std::f64::consts::PI / (hi - lo);
        Ok(Phi::Affine {
            scale,
            shift: -scale * lo,
        })
    }
}

/// A product-generator feature map: one single-qubit Pauli evolution per qubit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingBlock {
    pub axis: Pauli,
    /// Qubits the block acts on, in block order `m = 1, 2, ...`.
    pub qubits: Vec<usize>,
    pub gamma: Vec<f64>,
    /// Indices into the model's `θ_F`; empty for fixed-frequency blocks.
    pub theta_f_slice: Vec<usize>,
    pub phi: Phi,
    pub feature_dim: usize,
}

impl EncodingBlock {
    /// Builds a block of the given kind over an explicit list of qubits.
    pub fn on_qubits(kind: FeatureMapKind, qubits: Vec<usize>, feature_dim: usize) -> Result<Self> {
        if qubits.is_empty() {
            return Err(Error::Config("feature map needs at least one qubit".into()));
        }
        let gamma = (1..=qubits.len()).map(|m| kind.gamma(m)).collect();
        let theta_f_slice = if kind.is_trainable() {
            (0..qubits.len()).collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            axis: Pauli::Y,
            qubits,
            gamma,
            theta_f_slice,
            phi: Phi::Identity,
            feature_dim,
        })
    }

    pub fn with_phi(mut self, phi: Phi) -> Self {
        self.phi = phi;
        self
    }

    pub fn width(&self) -> usize {
        self.qubits.len()
    }

    pub fn is_trainable(&self) -> bool {
        !self.theta_f_slice.is_empty()
    }

    pub fn validate(&self, num_qubits: usize) -> Result<()> {
        if self.gamma.len() != self.qubits.len() {
            return Err(Error::Config(format!(
                "block has {} weights for {} qubits",
                self.gamma.len(),
                self.qubits.len()
            )));
        }
        if self.is_trainable() && self.theta_f_slice.len() != self.qubits.len() {
            return Err(Error::Config(format!(
                "trainable block needs {} θ_F entries, has {}",
                self.qubits.len(),
                self.theta_f_slice.len()
            )));
        }
        for (i, &q) in self.qubits.iter().enumerate() {
            if q >= num_qubits {
                return Err(Error::Index(format!(
                    "block qubit {q} out of range for {num_qubits} qubits"
                )));
            }
            if self.qubits[..i].contains(&q) {
                return Err(Error::Index(format!("block repeats qubit {q}")));
            }
        }
        Ok(())
    }

    /// Effective per-qubit weights `w_m = γ_m θ_m` (`θ_m = 1` for fixed blocks).
    pub fn weights(&self, theta_f: &[f64]) -> Result<Vec<f64>> {
        if !self.is_trainable() {
            return Ok(self.gamma.clone());
        }
        self.gamma
            .iter()
            .zip(&self.theta_f_slice)
            .map(|(g, &j)| {
                theta_f.get(j).map(|t| g * t).ok_or_else(|| {
                    Error::Index(format!("θ_F index {j} out of range ({})", theta_f.len()))
                })
            })
            .collect()
    }
}

/// A feature map of `kind` spanning all `num_qubits` qubits.
pub fn make_feature_map(
    kind: FeatureMapKind,
    num_qubits: usize,
    feature_dim: usize,
) -> Result<EncodingBlock> {
    if num_qubits == 0 {
        return Err(Error::Config("feature map needs at least one qubit".into()));
    }
    EncodingBlock::on_qubits(kind, (0..num_qubits).collect(), feature_dim)
}
