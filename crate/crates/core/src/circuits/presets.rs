use serde::{Deserialize, Serialize};

use super::ansatz::{Entangler, RotationSchedule};
use super::feature_map::{EncodingBlock, FeatureMapKind, Phi};
use super::model::{BlockId, ModelBuilder, QuantumModel};
use crate::error::{Error, Result};

/// Arrangement of encoding blocks and ansatz layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    /// Encoding blocks (one per feature) followed by `L` ansatz layers.
    Encode,
    /// One ansatz layer, the encoding blocks on all qubits, `L - 2` layers,
    /// a re-upload of the same blocks, and a final layer.
    Reupload,
    /// As [`LayoutKind::Reupload`], but each feature is encoded on its own
    /// contiguous group of qubits.
    ReuploadSplit,
    /// Features encoded one after another, separated by ansatz layers; the
    /// `L` main layers are bisected by a re-upload of the whole serial map.
    Serial,
}

/// Declarative description of a model, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub qubits: usize,
    pub layers: usize,
    pub feature_map: FeatureMapKind,
    #[serde(default = "default_rotations")]
    pub rotations: RotationSchedule,
    #[serde(default = "default_entangler")]
    pub entangler: Entangler,
    #[serde(default = "default_layout")]
    pub layout: LayoutKind,
    #[serde(default = "default_features")]
    pub features: usize,
    /// Optional global input scale `s` so that `φ(x) = s x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_scale: Option<f64>,
    /// Optional per-feature ranges mapped affinely onto `[0, π]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_ranges: Option<Vec<[f64; 2]>>,
}

fn default_rotations() -> RotationSchedule {
    RotationSchedule::Yz
}
fn default_entangler() -> Entangler {
    Entangler::CxRing
}
fn default_layout() -> LayoutKind {
    LayoutKind::Encode
}
fn default_features() -> usize {
    1
}

impl ModelSpec {
    /// `N` qubits, `L` layers, CX ring, single feature, encode-then-ansatz.
    pub fn cosine(kind: FeatureMapKind, qubits: usize, layers: usize) -> Self {
        Self {
            qubits,
            layers,
            feature_map: kind,
            rotations: default_rotations(),
            entangler: default_entangler(),
            layout: LayoutKind::Encode,
            features: 1,
            input_scale: None,
            input_ranges: None,
        }
    }

    /// The digital-analog stream-function/pressure architecture with
    /// 3-rotation layers and split parallel encoding.
    pub fn flow_architecture(kind: FeatureMapKind, qubits: usize, layers: usize) -> Self {
        Self {
            qubits,
            layers,
            feature_map: kind,
            rotations: RotationSchedule::Xyz,
            entangler: Entangler::AnalogZzRing,
            layout: LayoutKind::ReuploadSplit,
            features: 3,
            input_scale: None,
            input_ranges: None,
        }
    }

    pub fn with_kind(&self, kind: FeatureMapKind) -> Self {
        Self {
            feature_map: kind,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.qubits == 0 || self.qubits > crate::qstate::DEFAULT_MAX_QUBITS {
            return Err(Error::Config(format!("qubits = {} out of range", self.qubits)));
        }
        if self.features == 0 {
            return Err(Error::Config("features must be at least 1".into()));
        }
        match self.layout {
            LayoutKind::Reupload | LayoutKind::ReuploadSplit if self.layers < 2 => {
                return Err(Error::Config(
                    "re-upload layouts need at least 2 ansatz layers".into(),
                ))
            }
            LayoutKind::ReuploadSplit if self.qubits < self.features => {
                return Err(Error::Config(format!(
                    "cannot split {} qubits across {} features",
                    self.qubits, self.features
                )))
            }
            _ => {}
        }
        if let Some(r) = &self.input_ranges {
            if r.len() != self.features {
                return Err(Error::Config(format!(
                    "{} input ranges for {} features",
                    r.len(),
                    self.features
                )));
            }
        }
        if self.input_scale.is_some() && self.input_ranges.is_some() {
            return Err(Error::Config(
                "input_scale and input_ranges are mutually exclusive".into(),
            ));
        }
        Ok(())
    }

    fn phi(&self, dim: usize) -> Result<Phi> {
        if let Some(ranges) = &self.input_ranges {
            let [lo, hi] = ranges[dim];
            return Phi::normalizing(lo, hi);
        }
        Ok(match self.input_scale {
            Some(scale) => Phi::GlobalScale { scale },
            None => Phi::Identity,
        })
    }

    fn block(&self, qubits: Vec<usize>, dim: usize) -> Result<EncodingBlock> {
        Ok(EncodingBlock::on_qubits(self.feature_map, qubits, dim)?.with_phi(self.phi(dim)?))
    }

    fn layer(&self, b: &mut ModelBuilder) {
        b.ansatz(self.rotations, self.entangler);
    }

    /// Builds the model with `θ_A` drawn from `seed`.
    pub fn build(&self, seed: u64) -> Result<QuantumModel> {
        self.validate()?;
        let n = self.qubits;
        let mut b = ModelBuilder::new(n, self.features);
        let all: Vec<usize> = (0..n).collect();
        match self.layout {
            LayoutKind::Encode => {
                for d in 0..self.features {
                    b.encode(self.block(all.clone(), d)?);
                }
                for _ in 0..self.layers {
                    self.layer(&mut b);
                }
            }
            LayoutKind::Reupload | LayoutKind::ReuploadSplit => {
                self.layer(&mut b);
                let groups = if self.layout == LayoutKind::Reupload {
                    vec![all.clone(); self.features]
                } else {
                    split_qubits(n, self.features)
                };
                let ids: Vec<BlockId> = groups
                    .into_iter()
                    .enumerate()
                    .map(|(d, qs)| Ok(b.encode(self.block(qs, d)?)))
                    .collect::<Result<_>>()?;
                for _ in 0..self.layers - 2 {
                    self.layer(&mut b);
                }
                for id in &ids {
                    b.reupload(*id);
                }
                self.layer(&mut b);
            }
            LayoutKind::Serial => {
                let mut ids = Vec::with_capacity(self.features);
                for d in 0..self.features {
                    if d > 0 {
                        self.layer(&mut b);
                    }
                    ids.push(b.encode(self.block(all.clone(), d)?));
                }
                let first = self.layers / 2;
                for _ in 0..first {
                    self.layer(&mut b);
                }
                for (d, id) in ids.iter().enumerate() {
                    if d > 0 {
                        self.layer(&mut b);
                    }
                    b.reupload(*id);
                }
                for _ in first..self.layers {
                    self.layer(&mut b);
                }
            }
        }
        b.build_seeded(seed)
    }
}

/// Contiguous qubit groups, earlier groups taking the remainder.
pub fn split_qubits(num_qubits: usize, parts: usize) -> Vec<Vec<usize>> {
    let base = num_qubits / parts;
    let extra = num_qubits % parts;
    let mut next = 0;
    (0..parts)
        .map(|p| {
            let len = base + usize::from(p < extra);
            let group = (next..next + len).collect();
            next += len;
            group
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_architecture_parameter_counts() {
        let tf = ModelSpec::flow_architecture(FeatureMapKind::Trainable, 6, 10)
            .build(0)
            .unwrap();
        assert_eq!(tf.theta_a().len(), 180);
        assert_eq!(tf.theta_f().len(), 6);
        assert_eq!(tf.parameterized_occurrences(), (180, 12));
        let ff = ModelSpec::flow_architecture(FeatureMapKind::Simple, 6, 10)
            .build(0)
            .unwrap();
        assert_eq!(ff.theta_a(), tf.theta_a());
        assert_eq!(ff.parameterized_occurrences(), (180, 0));
    }

    #[test]
    fn cosine_layout_counts() {
        let m = ModelSpec::cosine(FeatureMapKind::Simple, 4, 4).build(1).unwrap();
        assert_eq!(m.theta_a().len(), 32);
        assert!(m.theta_f().is_empty());
        let m = ModelSpec::cosine(FeatureMapKind::Trainable, 4, 4).build(1).unwrap();
        assert_eq!(m.theta_f(), &[1.0; 4]);
    }

    #[test]
    fn serial_layout_separates_features() {
        let spec = ModelSpec {
            layout: LayoutKind::Serial,
            features: 3,
            ..ModelSpec::cosine(FeatureMapKind::Trainable, 4, 4)
        };
        let m = spec.build(0).unwrap();
        // 4 main layers plus 2 separators in each copy of the serial map.
        assert_eq!(m.theta_a().len(), 8 * 8);
        assert_eq!(m.theta_f().len(), 12);
        assert_eq!(m.parameterized_occurrences().1, 24);
    }

    #[test]
    fn qubit_split() {
        assert_eq!(split_qubits(6, 3), vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
        assert_eq!(split_qubits(4, 3), vec![vec![0, 1], vec![2], vec![3]]);
    }

    #[test]
    fn invalid_specs() {
        let mut s = ModelSpec::cosine(FeatureMapKind::Simple, 4, 1);
        s.layout = LayoutKind::Reupload;
        assert!(s.build(0).is_err());
        let s = ModelSpec::cosine(FeatureMapKind::Simple, 15, 1);
        assert!(s.build(0).is_err());
    }
}
