use std::f64::consts::PI;

use num_complex::Complex64;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ansatz::{ring_pairs, AnsatzLayer, Entangler, RotationSchedule};
use super::feature_map::{EncodingBlock, Phi};
use crate::error::{Error, Result};
use crate::qstate::{CostOperator, GateSpec, Pauli};

/// Element of a model layout. Encoding items refer to a block by index, so a
/// block listed twice is a data re-upload sharing the same `θ_F` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayoutItem {
    Ansatz(AnsatzLayer),
    Encoding(usize),
}

/// Where the angle of a compiled rotation comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngleSource {
    Ansatz { param: usize },
    Encoding {
        dim: usize,
        gamma: f64,
        theta_f: Option<usize>,
        phi: Phi,
        block: usize,
        /// Position of the enclosing encoding item among all encoding items.
        occurrence: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Rotation {
        axis: Pauli,
        qubit: usize,
        source: AngleSource,
    },
    Fixed(GateSpec),
}

/// Flat gate list of a model, independent of parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub num_qubits: usize,
    pub ops: Vec<Op>,
    pub cost: CostOperator,
}

impl Circuit {
    /// Rotation angle of every op (zero for fixed gates).
    pub fn angles(&self, theta_a: &[f64], theta_f: &[f64], x: &[f64]) -> Vec<f64> {
        self.ops
            .iter()
            .map(|op| match op {
                Op::Rotation {
                    source: AngleSource::Ansatz { param },
                    ..
                } => theta_a[*param],
                Op::Rotation {
                    source:
                        AngleSource::Encoding {
                            dim,
                            gamma,
                            theta_f: tf,
                            phi,
                            ..
                        },
                    ..
                } => gamma * tf.map_or(1.0, |j| theta_f[j]) * phi.apply(x[*dim]),
                Op::Fixed(_) => 0.0,
            })
            .collect()
    }

    /// `(feature dimension, ∂angle/∂x)` for every encoding op, `None` otherwise.
    pub fn slopes(&self, theta_f: &[f64]) -> Vec<Option<(usize, f64)>> {
        self.ops
            .iter()
            .map(|op| match op {
                Op::Rotation {
                    source:
                        AngleSource::Encoding {
                            dim,
                            gamma,
                            theta_f: tf,
                            phi,
                            ..
                        },
                    ..
                } => Some((*dim, gamma * tf.map_or(1.0, |j| theta_f[j]) * phi.slope())),
                _ => None,
            })
            .collect()
    }

    #[inline]
    pub fn apply_op(&self, index: usize, angle: f64, amps: &mut [Complex64]) {
        match self.ops[index] {
            Op::Rotation { axis, qubit, .. } => crate::qstate::rotate(amps, axis, qubit, angle),
            Op::Fixed(g) => g.apply_to(amps),
        }
    }

    /// Resets `amps` to `|0…0⟩` and applies every op.
    pub fn prepare(&self, angles: &[f64], amps: &mut [Complex64]) {
        amps.fill(Complex64::new(0.0, 0.0));
        amps[0] = Complex64::new(1.0, 0.0);
        for i in 0..self.ops.len() {
            self.apply_op(i, angles[i], amps);
        }
    }

    pub fn expectation(&self, angles: &[f64]) -> f64 {
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << self.num_qubits];
        self.prepare(angles, &mut amps);
        self.cost_of(&amps)
    }

    pub fn cost_of(&self, amps: &[Complex64]) -> f64 {
        let n = self.num_qubits;
        amps.iter()
            .enumerate()
            .map(|(i, a)| a.norm_sqr() * self.cost.diagonal(n, i))
            .sum()
    }

    /// The concrete gate sequence at the given angles.
    pub fn gates(&self, angles: &[f64]) -> Vec<GateSpec> {
        self.ops
            .iter()
            .zip(angles)
            .map(|(op, &angle)| match *op {
                Op::Rotation { axis, qubit, .. } => GateSpec::Rotation { axis, qubit, angle },
                Op::Fixed(g) => g,
            })
            .collect()
    }
}

/// A quantum neural network: layout of ansatz layers and encoding blocks plus
/// the parameter vectors `θ_A` and `θ_F`. The output is the cost expectation
/// after running the layout on `|0…0⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumModel {
    num_qubits: usize,
    num_features: usize,
    blocks: Vec<EncodingBlock>,
    layout: Vec<LayoutItem>,
    theta_a: Vec<f64>,
    theta_f: Vec<f64>,
    circuit: Circuit,
}

impl QuantumModel {
    pub fn new(
        num_qubits: usize,
        num_features: usize,
        blocks: Vec<EncodingBlock>,
        layout: Vec<LayoutItem>,
        theta_a: Vec<f64>,
        theta_f: Vec<f64>,
        cost: CostOperator,
    ) -> Result<Self> {
        if num_qubits == 0 || num_qubits > crate::qstate::DEFAULT_MAX_QUBITS {
            return Err(Error::Capacity(format!("{num_qubits} qubits")));
        }
        let mut a_used = vec![false; theta_a.len()];
        let mut f_used = vec![false; theta_f.len()];
        for block in &blocks {
            block.validate(num_qubits)?;
            if block.feature_dim >= num_features {
                return Err(Error::Config(format!(
                    "block encodes feature {} but the model has {num_features}",
                    block.feature_dim
                )));
            }
            for &j in &block.theta_f_slice {
                *f_used.get_mut(j).ok_or_else(|| {
                    Error::Index(format!("θ_F index {j} out of range ({})", theta_f.len()))
                })? = true;
            }
        }
        for item in &layout {
            match item {
                LayoutItem::Ansatz(layer) => {
                    for i in layer.param_slice(num_qubits) {
                        *a_used.get_mut(i).ok_or_else(|| {
                            Error::Index(format!("θ_A index {i} out of range ({})", theta_a.len()))
                        })? = true;
                    }
                }
                LayoutItem::Encoding(b) => {
                    if *b >= blocks.len() {
                        return Err(Error::Index(format!("layout references missing block {b}")));
                    }
                }
            }
        }
        if let Some(i) = a_used.iter().position(|u| !u) {
            return Err(Error::Config(format!("θ_A[{i}] is not referenced by any layer")));
        }
        if let Some(j) = f_used.iter().position(|u| !u) {
            return Err(Error::Config(format!("θ_F[{j}] is not referenced by any block")));
        }
        let circuit = compile(num_qubits, &blocks, &layout, cost);
        Ok(Self {
            num_qubits,
            num_features,
            blocks,
            layout,
            theta_a,
            theta_f,
            circuit,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn blocks(&self) -> &[EncodingBlock] {
        &self.blocks
    }

    pub fn layout(&self) -> &[LayoutItem] {
        &self.layout
    }

    pub fn circuit(&self) -> &Circuit {
        &self.circuit
    }

    pub fn theta_a(&self) -> &[f64] {
        &self.theta_a
    }

    pub fn theta_f(&self) -> &[f64] {
        &self.theta_f
    }

    pub fn num_params(&self) -> usize {
        self.theta_a.len() + self.theta_f.len()
    }

    pub fn is_trainable_frequency(&self) -> bool {
        !self.theta_f.is_empty()
    }

    pub fn set_theta_a(&mut self, theta_a: &[f64]) -> Result<()> {
        if theta_a.len() != self.theta_a.len() {
            return Err(Error::Input(format!(
                "θ_A has {} entries, got {}",
                self.theta_a.len(),
                theta_a.len()
            )));
        }
        self.theta_a.copy_from_slice(theta_a);
        Ok(())
    }

    pub fn set_theta_f(&mut self, theta_f: &[f64]) -> Result<()> {
        if theta_f.len() != self.theta_f.len() {
            return Err(Error::Input(format!(
                "θ_F has {} entries, got {}",
                self.theta_f.len(),
                theta_f.len()
            )));
        }
        self.theta_f.copy_from_slice(theta_f);
        Ok(())
    }

    /// Concatenated `(θ_A, θ_F)`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.theta_a.clone();
        p.extend_from_slice(&self.theta_f);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Input(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let (a, f) = params.split_at(self.theta_a.len());
        self.theta_a.copy_from_slice(a);
        self.theta_f.copy_from_slice(f);
        Ok(())
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.num_features {
            return Err(Error::Input(format!(
                "model expects {} features, got {}",
                self.num_features,
                x.len()
            )));
        }
        Ok(())
    }

    pub fn angles(&self, x: &[f64]) -> Vec<f64> {
        self.circuit.angles(&self.theta_a, &self.theta_f, x)
    }

    /// Number of gate occurrences driven by `θ_A` and `θ_F` respectively.
    pub fn parameterized_occurrences(&self) -> (usize, usize) {
        let mut a = 0;
        let mut f = 0;
        for op in &self.circuit.ops {
            match op {
                Op::Rotation {
                    source: AngleSource::Ansatz { .. },
                    ..
                } => a += 1,
                Op::Rotation {
                    source: AngleSource::Encoding { theta_f: Some(_), .. },
                    ..
                } => f += 1,
                _ => {}
            }
        }
        (a, f)
    }

    /// Number of gate layers when gates on disjoint qubits are packed together.
    pub fn depth(&self) -> usize {
        let mut frontier = vec![0usize; self.num_qubits];
        for op in &self.circuit.ops {
            let qubits: Vec<usize> = match *op {
                Op::Rotation { qubit, .. } => vec![qubit],
                Op::Fixed(GateSpec::Rotation { qubit, .. }) => vec![qubit],
                Op::Fixed(GateSpec::Cx { control, target }) => vec![control, target],
                Op::Fixed(GateSpec::AnalogZz { qubit_k, qubit_l }) => vec![qubit_k, qubit_l],
            };
            let level = qubits.iter().map(|&q| frontier[q]).max().unwrap_or(0) + 1;
            for q in qubits {
                frontier[q] = level;
            }
        }
        frontier.into_iter().max().unwrap_or(0)
    }
}

fn compile(
    num_qubits: usize,
    blocks: &[EncodingBlock],
    layout: &[LayoutItem],
    cost: CostOperator,
) -> Circuit {
    let mut ops = Vec::new();
    let mut occurrence = 0;
    for item in layout {
        match item {
            LayoutItem::Ansatz(layer) => {
                for (k, &axis) in layer.rotations.axes().iter().enumerate() {
                    for qubit in 0..num_qubits {
                        ops.push(Op::Rotation {
                            axis,
                            qubit,
                            source: AngleSource::Ansatz {
                                param: layer.param_offset + k * num_qubits + qubit,
                            },
                        });
                    }
                }
                for (a, b) in ring_pairs(num_qubits) {
                    match layer.entangler {
                        Entangler::CxRing => ops.push(Op::Fixed(GateSpec::Cx {
                            control: a,
                            target: b,
                        })),
                        Entangler::AnalogZzRing => ops.push(Op::Fixed(GateSpec::AnalogZz {
                            qubit_k: a,
                            qubit_l: b,
                        })),
                        Entangler::None => {}
                    }
                }
            }
            LayoutItem::Encoding(b) => {
                let block = &blocks[*b];
                for (m, &qubit) in block.qubits.iter().enumerate() {
                    ops.push(Op::Rotation {
                        axis: block.axis,
                        qubit,
                        source: AngleSource::Encoding {
                            dim: block.feature_dim,
                            gamma: block.gamma[m],
                            theta_f: block.theta_f_slice.get(m).copied(),
                            phi: block.phi,
                            block: *b,
                            occurrence,
                        },
                    });
                }
                occurrence += 1;
            }
        }
    }
    Circuit {
        num_qubits,
        ops,
        cost,
    }
}

/// Handle to an encoding block registered with a [`ModelBuilder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockId(pub usize);

/// Incrementally assembles a layout, allocating `θ_A` and `θ_F` indices.
#[derive(Debug, Clone)]
pub struct ModelBuilder {
    num_qubits: usize,
    num_features: usize,
    blocks: Vec<EncodingBlock>,
    layout: Vec<LayoutItem>,
    num_theta_a: usize,
    num_theta_f: usize,
    cost: CostOperator,
}

impl ModelBuilder {
    pub fn new(num_qubits: usize, num_features: usize) -> Self {
        Self {
            num_qubits,
            num_features,
            blocks: Vec::new(),
            layout: Vec::new(),
            num_theta_a: 0,
            num_theta_f: 0,
            cost: CostOperator::TotalMagnetization,
        }
    }

    pub fn ansatz(&mut self, rotations: RotationSchedule, entangler: Entangler) -> &mut Self {
        let layer = AnsatzLayer {
            rotations,
            entangler,
            param_offset: self.num_theta_a,
        };
        self.num_theta_a += layer.num_params(self.num_qubits);
        self.layout.push(LayoutItem::Ansatz(layer));
        self
    }

    /// Registers a new block and appends it to the layout. A trainable block's
    /// local `θ_F` slice is rebased onto fresh global indices.
    pub fn encode(&mut self, mut block: EncodingBlock) -> BlockId {
        if block.is_trainable() {
            let base = self.num_theta_f;
            for j in block.theta_f_slice.iter_mut() {
                *j += base;
            }
            self.num_theta_f = block.theta_f_slice.iter().max().map_or(base, |m| m + 1).max(base);
        }
        let id = BlockId(self.blocks.len());
        self.blocks.push(block);
        self.layout.push(LayoutItem::Encoding(id.0));
        id
    }

    /// Appends another occurrence of an existing block (shared parameters).
    pub fn reupload(&mut self, id: BlockId) -> &mut Self {
        self.layout.push(LayoutItem::Encoding(id.0));
        self
    }

    pub fn num_theta_a(&self) -> usize {
        self.num_theta_a
    }

    pub fn build(self, theta_a: Vec<f64>) -> Result<QuantumModel> {
        if theta_a.len() != self.num_theta_a {
            return Err(Error::Input(format!(
                "layout needs {} ansatz parameters, got {}",
                self.num_theta_a,
                theta_a.len()
            )));
        }
        let theta_f = vec![1.0; self.num_theta_f];
        QuantumModel::new(
            self.num_qubits,
            self.num_features,
            self.blocks,
            self.layout,
            theta_a,
            theta_f,
            self.cost,
        )
    }

    /// Builds with `θ_A ~ U[-π, π)` drawn from `seed` and `θ_F = 1`.
    pub fn build_seeded(self, seed: u64) -> Result<QuantumModel> {
        let theta_a = init_theta_a(self.num_theta_a, seed);
        self.build(theta_a)
    }
}

pub fn init_theta_a(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new(-PI, PI);
    (0..count).map(|_| dist.sample(&mut rng)).collect()
}

/// Model output `⟨ψ_f|C|ψ_f⟩` at input `x`.
pub fn forward(model: &QuantumModel, x: &[f64]) -> Result<f64> {
    model.check_input(x)?;
    Ok(model.circuit.expectation(&model.angles(x)))
}
