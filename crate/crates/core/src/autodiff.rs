//! Derivatives of model outputs with respect to ansatz parameters, generator
//! parameters and input features.
//!
//! Two backends are provided for input derivatives:
//!
//! * the shift-rule backend differentiates through the encoding angles with
//!   nested parameter shifts, costing `(2·occurrences)^order` evaluations;
//! * the analytic forward backend propagates the derivative states
//!   `|∂^α ψ⟩` through the circuit with the product rule and assembles
//!   `∂^α f = Σ_β C(α,β) ⟨∂^β ψ|C|∂^{α-β} ψ⟩`.
//!
//! Parameter gradients always use shift rules. When they are needed for a set
//! of input derivatives (physics-informed losses), the shifts are applied to
//! whole derivative stacks, and generator parameters pick up the extra
//! Leibniz term from `∂a/∂θ = γ φ(x)`.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circuits::{spectral_gaps, AngleSource, Circuit, Op, QuantumModel, DEFAULT_GAP_TOL};
use crate::error::{Error, Result};
use crate::qstate::apply_pauli;

/// Largest supported total input-derivative order.
pub const MAX_INPUT_ORDER: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    ShiftRule,
    AnalyticForward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeTarget {
    AnsatzParam(usize),
    GeneratorParam(usize),
    Input { dim: usize, order: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivativeRequest {
    pub target: DerivativeTarget,
    pub backend: Backend,
}

/// Circuit-evaluation bookkeeping. Shifted evaluations are the ones a
/// hardware gradient pass would have to run; forward evaluations produce
/// the model value itself.
#[derive(Debug, Default)]
pub struct EvalCounter {
    forward: AtomicU64,
    shifted: AtomicU64,
}

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&self) -> u64 {
        self.forward.load(Ordering::Relaxed)
    }

    pub fn shifted(&self) -> u64 {
        self.shifted.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        self.forward() + self.shifted()
    }

    fn add_forward(&self, n: u64) {
        self.forward.fetch_add(n, Ordering::Relaxed);
    }

    fn add_shifted(&self, n: u64) {
        self.shifted.fetch_add(n, Ordering::Relaxed);
    }
}

/// Per-feature derivative orders, e.g. `[2, 1, 0]` for `∂²/∂x² ∂/∂y`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn zero(dims: usize) -> Self {
        Self(vec![0; dims])
    }

    pub fn unit(dims: usize, dim: usize, order: usize) -> Self {
        let mut v = vec![0; dims];
        v[dim] = order;
        Self(v)
    }

    pub fn order(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    /// Feature dimensions in differentiation order, lowest dimension first.
    pub fn sequence(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(d, &k)| std::iter::repeat(d).take(k))
            .collect()
    }

    fn lowered(&self, dim: usize, by: usize) -> Self {
        let mut v = self.0.clone();
        v[dim] -= by;
        Self(v)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// A downward-closed set of multi-indices with precomputed product-rule tables.
#[derive(Debug, Clone)]
pub struct DerivativeSet {
    dims: usize,
    indices: Vec<MultiIndex>,
    position: HashMap<MultiIndex, usize>,
    /// Per feature: `(position of α, α_d, positions of α - j e_d for j = 1..=α_d)`,
    /// ordered by decreasing `α_d` so updates can run in place.
    lower: Vec<Vec<(usize, usize, Vec<usize>)>>,
    /// Per index: Leibniz terms `(C(α,β), pos β, pos α-β)`.
    pairs: Vec<Vec<(f64, usize, usize)>>,
}

impl DerivativeSet {
    pub fn new(dims: usize, requested: &[MultiIndex]) -> Result<Self> {
        let mut closure = std::collections::BTreeSet::new();
        closure.insert(MultiIndex::zero(dims));
        for alpha in requested {
            if alpha.dims() != dims {
                return Err(Error::Input(format!(
                    "multi-index {:?} does not match {dims} features",
                    alpha.0
                )));
            }
            if alpha.order() > MAX_INPUT_ORDER {
                return Err(Error::Config(format!(
                    "derivative order {} exceeds the supported maximum {MAX_INPUT_ORDER}",
                    alpha.order()
                )));
            }
            for beta in sub_indices(alpha) {
                closure.insert(beta);
            }
        }
        let mut indices: Vec<MultiIndex> = closure.into_iter().collect();
        indices.sort_by(|a, b| a.order().cmp(&b.order()).then_with(|| a.cmp(b)));
        let position: HashMap<MultiIndex, usize> =
            indices.iter().cloned().enumerate().map(|(i, a)| (a, i)).collect();

        let lower = (0..dims)
            .map(|d| {
                let mut rows: Vec<(usize, usize, Vec<usize>)> = indices
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| a.0[d] > 0)
                    .map(|(p, a)| {
                        let lows = (1..=a.0[d]).map(|j| position[&a.lowered(d, j)]).collect();
                        (p, a.0[d], lows)
                    })
                    .collect();
                rows.sort_by(|a, b| b.1.cmp(&a.1));
                rows
            })
            .collect();

        let pairs = indices
            .iter()
            .map(|alpha| {
                sub_indices(alpha)
                    .into_iter()
                    .map(|beta| {
                        let coef: f64 = alpha
                            .0
                            .iter()
                            .zip(&beta.0)
                            .map(|(&a, &b)| binomial(a, b))
                            .product();
                        let rest = MultiIndex(alpha.0.iter().zip(&beta.0).map(|(a, b)| a - b).collect());
                        (coef, position[&beta], position[&rest])
                    })
                    .collect()
            })
            .collect();

        Ok(Self {
            dims,
            indices,
            position,
            lower,
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.position.get(alpha).copied()
    }

    /// Position of `α - e_d`, if `α_d > 0`.
    fn lowered_position(&self, pos: usize, dim: usize) -> Option<usize> {
        let alpha = &self.indices[pos];
        (alpha.0[dim] > 0).then(|| self.position[&alpha.lowered(dim, 1)])
    }
}

fn sub_indices(alpha: &MultiIndex) -> Vec<MultiIndex> {
    let mut out = vec![MultiIndex(Vec::with_capacity(alpha.dims()))];
    for &k in &alpha.0 {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..=k).map(move |j| {
                    let mut p = prefix.clone();
                    p.0.push(j);
                    p
                })
            })
            .collect();
    }
    out
}

/// Derivative states `|∂^α ψ⟩` for every index of a [`DerivativeSet`],
/// stored back to back.
struct Stack {
    width: usize,
    data: Vec<Complex64>,
}

impl Stack {
    fn new(set: &DerivativeSet, num_qubits: usize) -> Self {
        let width = 1 << num_qubits;
        let mut data = vec![Complex64::new(0.0, 0.0); width * set.len()];
        data[0] = Complex64::new(1.0, 0.0);
        Self { width, data }
    }

    fn state(&self, pos: usize) -> &[Complex64] {
        &self.data[pos * self.width..(pos + 1) * self.width]
    }
}

struct StackEngine<'a> {
    circuit: &'a Circuit,
    set: &'a DerivativeSet,
    slopes: Vec<Option<(usize, f64)>>,
    scratch: Vec<Complex64>,
    acc: Vec<Complex64>,
}

impl<'a> StackEngine<'a> {
    fn new(circuit: &'a Circuit, set: &'a DerivativeSet, slopes: Vec<Option<(usize, f64)>>) -> Self {
        let width = 1 << circuit.num_qubits;
        Self {
            circuit,
            set,
            slopes,
            scratch: vec![Complex64::new(0.0, 0.0); width],
            acc: vec![Complex64::new(0.0, 0.0); width],
        }
    }

    fn apply(&mut self, stack: &mut Stack, index: usize, angle: f64) {
        let w = stack.width;
        if let (Some((dim, kappa)), Op::Rotation { axis, qubit, .. }) =
            (self.slopes[index], self.circuit.ops[index])
        {
            // ∂^j R(a(x)) = (-iκ/2 σ)^j R, and σ commutes with R.
            let c = Complex64::new(0.0, -0.5 * kappa);
            for (pos, order, lows) in &self.set.lower[dim] {
                self.acc.copy_from_slice(stack.state(*pos));
                let mut cj = Complex64::new(1.0, 0.0);
                for (j, &low) in lows.iter().enumerate() {
                    let j = j + 1;
                    cj *= c;
                    let coef = cj * binomial(*order, j);
                    self.scratch.copy_from_slice(stack.state(low));
                    if j % 2 == 1 {
                        apply_pauli(&mut self.scratch, axis, qubit);
                    }
                    for (a, s) in self.acc.iter_mut().zip(&self.scratch) {
                        *a += coef * s;
                    }
                }
                stack.data[pos * w..(pos + 1) * w].copy_from_slice(&self.acc);
            }
        }
        for chunk in stack.data.chunks_exact_mut(w) {
            self.circuit.apply_op(index, angle, chunk);
        }
    }

    fn run(&mut self, stack: &mut Stack, from: usize, angles: &[f64]) {
        for i in from..self.circuit.ops.len() {
            self.apply(stack, i, angles[i]);
        }
    }

    fn assemble(&self, stack: &Stack) -> Vec<f64> {
        let n = self.circuit.num_qubits;
        let cost = self.circuit.cost;
        self.set
            .pairs
            .iter()
            .map(|terms| {
                terms
                    .iter()
                    .map(|&(coef, b, r)| coef * cost.bilinear(n, stack.state(b), stack.state(r)).re)
                    .sum()
            })
            .collect()
    }
}

/// Values of `∂^α f` for every index of `set` (analytic forward backend).
pub fn input_derivatives(model: &QuantumModel, x: &[f64], set: &DerivativeSet) -> Result<Vec<f64>> {
    model.check_input(x)?;
    check_set(model, set)?;
    let circuit = model.circuit();
    let angles = model.angles(x);
    let mut engine = StackEngine::new(circuit, set, circuit.slopes(model.theta_f()));
    let mut stack = Stack::new(set, circuit.num_qubits);
    engine.run(&mut stack, 0, &angles);
    Ok(engine.assemble(&stack))
}

fn check_set(model: &QuantumModel, set: &DerivativeSet) -> Result<()> {
    if set.dims != model.num_features() {
        return Err(Error::Input(format!(
            "derivative set over {} features for a {}-feature model",
            set.dims,
            model.num_features()
        )));
    }
    Ok(())
}

/// Derivative values and their gradients with respect to `(θ_A, θ_F)`.
#[derive(Debug, Clone)]
pub struct DerivativeJacobian {
    /// `∂^α f` per index of the set.
    pub values: Vec<f64>,
    /// `∂/∂θ_k ∂^α f`, laid out `[param][index]`.
    pub grads: Vec<Vec<f64>>,
}

/// Shift-rule gradients of every `∂^α f` in `set`, evaluated on derivative
/// stacks with prefix caching.
pub fn derivative_jacobian(
    model: &QuantumModel,
    x: &[f64],
    set: &DerivativeSet,
    counter: &EvalCounter,
) -> Result<DerivativeJacobian> {
    model.check_input(x)?;
    check_set(model, set)?;
    let circuit = model.circuit();
    let mut angles = model.angles(x);
    let n_a = model.theta_a().len();
    let mut engine = StackEngine::new(circuit, set, circuit.slopes(model.theta_f()));

    let mut stack = Stack::new(set, circuit.num_qubits);
    let mut snapshots: Vec<(usize, Vec<Complex64>)> = Vec::new();
    for i in 0..circuit.ops.len() {
        if is_parameterized(&circuit.ops[i]) {
            snapshots.push((i, stack.data.clone()));
        }
        engine.apply(&mut stack, i, angles[i]);
    }
    counter.add_forward(1);
    let values = engine.assemble(&stack);

    let mut grads = vec![vec![0.0; set.len()]; model.num_params()];
    let mut work = Stack::new(set, circuit.num_qubits);
    for (i, snapshot) in &snapshots {
        let i = *i;
        let base = angles[i];
        let mut half = [Vec::new(), Vec::new()];
        for (slot, shift) in [FRAC_PI_2, -FRAC_PI_2].into_iter().enumerate() {
            work.data.copy_from_slice(snapshot);
            angles[i] = base + shift;
            engine.run(&mut work, i, &angles);
            half[slot] = engine.assemble(&work);
        }
        angles[i] = base;
        counter.add_shifted(2);
        let h: Vec<f64> = half[0].iter().zip(&half[1]).map(|(p, m)| 0.5 * (p - m)).collect();
        match circuit.ops[i] {
            Op::Rotation {
                source: AngleSource::Ansatz { param },
                ..
            } => {
                for (g, v) in grads[param].iter_mut().zip(&h) {
                    *g += v;
                }
            }
            Op::Rotation {
                source:
                    AngleSource::Encoding {
                        dim,
                        gamma,
                        theta_f: Some(j),
                        phi,
                        ..
                    },
                ..
            } => {
                let row = &mut grads[n_a + j];
                let at = phi.apply(x[dim]);
                for pos in 0..set.len() {
                    let mut v = at * h[pos];
                    if let Some(low) = set.lowered_position(pos, dim) {
                        v += set.indices[pos].0[dim] as f64 * phi.slope() * h[low];
                    }
                    row[pos] += gamma * v;
                }
            }
            _ => unreachable!("only parameterized ops are snapshotted"),
        }
    }
    Ok(DerivativeJacobian { values, grads })
}

fn is_parameterized(op: &Op) -> bool {
    matches!(
        op,
        Op::Rotation {
            source: AngleSource::Ansatz { .. },
            ..
        } | Op::Rotation {
            source: AngleSource::Encoding { theta_f: Some(_), .. },
            ..
        }
    )
}

/// Model value and full shift-rule gradient over `(θ_A, θ_F)`.
pub fn parameter_gradient(
    model: &QuantumModel,
    x: &[f64],
    counter: &EvalCounter,
) -> Result<(f64, Vec<f64>)> {
    let set = DerivativeSet::new(model.num_features(), &[])?;
    let jac = derivative_jacobian(model, x, &set, counter)?;
    Ok((jac.values[0], jac.grads.into_iter().map(|g| g[0]).collect()))
}

fn shifted_expectation(circuit: &Circuit, angles: &[f64], counter: &EvalCounter) -> f64 {
    counter.add_shifted(1);
    circuit.expectation(angles)
}

/// `∂f/∂θ_A[i]` by the two-term shift rule, summed over every occurrence.
pub fn grad_ansatz(model: &QuantumModel, x: &[f64], param_index: usize) -> Result<f64> {
    grad_ansatz_counted(model, x, param_index, &EvalCounter::new())
}

pub fn grad_ansatz_counted(
    model: &QuantumModel,
    x: &[f64],
    param_index: usize,
    counter: &EvalCounter,
) -> Result<f64> {
    model.check_input(x)?;
    if param_index >= model.theta_a().len() {
        return Err(Error::Index(format!(
            "ansatz parameter {param_index} out of range ({})",
            model.theta_a().len()
        )));
    }
    let circuit = model.circuit();
    let mut angles = model.angles(x);
    let mut total = 0.0;
    for i in 0..circuit.ops.len() {
        if let Op::Rotation {
            source: AngleSource::Ansatz { param },
            ..
        } = circuit.ops[i]
        {
            if param == param_index {
                total += psr(circuit, &mut angles, i, counter);
            }
        }
    }
    Ok(total)
}

fn psr(circuit: &Circuit, angles: &mut [f64], i: usize, counter: &EvalCounter) -> f64 {
    let base = angles[i];
    angles[i] = base + FRAC_PI_2;
    let plus = shifted_expectation(circuit, angles, counter);
    angles[i] = base - FRAC_PI_2;
    let minus = shifted_expectation(circuit, angles, counter);
    angles[i] = base;
    0.5 * (plus - minus)
}

/// `∂f/∂θ_F[j]`: each occurrence contributes `γ φ(x) · PSR`.
pub fn grad_generator(model: &QuantumModel, x: &[f64], theta_f_index: usize) -> Result<f64> {
    Ok(generator_contributions(model, x, theta_f_index, &EvalCounter::new())?
        .into_iter()
        .map(|(_, v)| v)
        .sum())
}

/// Shift-rule contribution of each encoding occurrence of `θ_F[j]`, keyed by
/// the occurrence index of the enclosing block.
pub fn generator_contributions(
    model: &QuantumModel,
    x: &[f64],
    theta_f_index: usize,
    counter: &EvalCounter,
) -> Result<Vec<(usize, f64)>> {
    model.check_input(x)?;
    if theta_f_index >= model.theta_f().len() {
        return Err(Error::Index(format!(
            "generator parameter {theta_f_index} out of range ({})",
            model.theta_f().len()
        )));
    }
    let circuit = model.circuit();
    let mut angles = model.angles(x);
    let mut out: Vec<(usize, f64)> = Vec::new();
    for i in 0..circuit.ops.len() {
        if let Op::Rotation {
            source:
                AngleSource::Encoding {
                    dim,
                    gamma,
                    theta_f: Some(j),
                    phi,
                    occurrence,
                    ..
                },
            ..
        } = circuit.ops[i]
        {
            if j == theta_f_index {
                let chain = gamma * phi.apply(x[dim]);
                let v = chain * psr(circuit, &mut angles, i, counter);
                match out.iter_mut().find(|(o, _)| *o == occurrence) {
                    Some(entry) => entry.1 += v,
                    None => out.push((occurrence, v)),
                }
            }
        }
    }
    Ok(out)
}

/// `∂f/∂θ_F[j]` by forward-mode propagation of `|∂_θ ψ⟩`, optionally
/// restricted to the encoding occurrences accepted by `include`.
pub fn analytic_generator_gradient(
    model: &QuantumModel,
    x: &[f64],
    theta_f_index: usize,
    include: impl Fn(usize) -> bool,
) -> Result<f64> {
    model.check_input(x)?;
    let circuit = model.circuit();
    let angles = model.angles(x);
    let width = 1 << circuit.num_qubits;
    let mut psi = vec![Complex64::new(0.0, 0.0); width];
    psi[0] = Complex64::new(1.0, 0.0);
    let mut tangent = vec![Complex64::new(0.0, 0.0); width];
    let mut scratch = vec![Complex64::new(0.0, 0.0); width];
    for i in 0..circuit.ops.len() {
        if let Op::Rotation {
            axis,
            qubit,
            source:
                AngleSource::Encoding {
                    dim,
                    gamma,
                    theta_f: Some(j),
                    phi,
                    occurrence,
                    ..
                },
        } = circuit.ops[i]
        {
            if j == theta_f_index && include(occurrence) {
                // d/dθ R(a) = (-i/2)(∂a/∂θ) σ R(a)
                let c = Complex64::new(0.0, -0.5 * gamma * phi.apply(x[dim]));
                scratch.copy_from_slice(&psi);
                apply_pauli(&mut scratch, axis, qubit);
                for (t, s) in tangent.iter_mut().zip(&scratch) {
                    *t += c * s;
                }
            }
        }
        circuit.apply_op(i, angles[i], &mut psi);
        circuit.apply_op(i, angles[i], &mut tangent);
    }
    let b = circuit.cost.bilinear(circuit.num_qubits, &tangent, &psi);
    Ok(2.0 * b.re)
}

/// `∂^order f / ∂x_dim^order` on the requested backend.
pub fn input_derivative(
    model: &QuantumModel,
    x: &[f64],
    dim: usize,
    order: usize,
    backend: Backend,
) -> Result<f64> {
    if order == 0 || order > MAX_INPUT_ORDER {
        return Err(Error::Config(format!(
            "input derivative order {order} unsupported (1..={MAX_INPUT_ORDER})"
        )));
    }
    if dim >= model.num_features() {
        return Err(Error::Index(format!(
            "feature {dim} out of range ({})",
            model.num_features()
        )));
    }
    let alpha = MultiIndex::unit(model.num_features(), dim, order);
    mixed_input_derivative(model, x, &alpha, backend, &EvalCounter::new())
}

/// `∂^α f` for a mixed multi-index on the requested backend.
pub fn mixed_input_derivative(
    model: &QuantumModel,
    x: &[f64],
    alpha: &MultiIndex,
    backend: Backend,
    counter: &EvalCounter,
) -> Result<f64> {
    model.check_input(x)?;
    match backend {
        Backend::AnalyticForward => {
            let set = DerivativeSet::new(model.num_features(), std::slice::from_ref(alpha))?;
            counter.add_forward(1);
            let values = input_derivatives(model, x, &set)?;
            Ok(values[set.position(alpha).expect("requested index is in its closure")])
        }
        Backend::ShiftRule => {
            if alpha.dims() != model.num_features() {
                return Err(Error::Input("multi-index dimension mismatch".into()));
            }
            if alpha.order() > MAX_INPUT_ORDER {
                return Err(Error::Config(format!(
                    "derivative order {} exceeds {MAX_INPUT_ORDER}",
                    alpha.order()
                )));
            }
            shift_rule_derivative(model, x, &alpha.sequence(), counter)
        }
    }
}

/// Nested shift rule over the encoding angles, differentiating in the order
/// given by `dims` (outermost first).
pub fn shift_rule_derivative(
    model: &QuantumModel,
    x: &[f64],
    dims: &[usize],
    counter: &EvalCounter,
) -> Result<f64> {
    model.check_input(x)?;
    let circuit = model.circuit();
    let slopes = circuit.slopes(model.theta_f());
    let mut angles = model.angles(x);
    if dims.is_empty() {
        counter.add_forward(1);
        return Ok(circuit.expectation(&angles));
    }
    Ok(nested_shift(circuit, &slopes, &mut angles, dims, counter))
}

fn nested_shift(
    circuit: &Circuit,
    slopes: &[Option<(usize, f64)>],
    angles: &mut [f64],
    dims: &[usize],
    counter: &EvalCounter,
) -> f64 {
    let Some((&dim, rest)) = dims.split_first() else {
        return shifted_expectation(circuit, angles, counter);
    };
    let mut total = 0.0;
    for (i, slope) in slopes.iter().enumerate() {
        let Some((d, kappa)) = *slope else { continue };
        if d != dim || kappa == 0.0 {
            continue;
        }
        let base = angles[i];
        angles[i] = base + FRAC_PI_2;
        let plus = nested_shift(circuit, slopes, angles, rest, counter);
        angles[i] = base - FRAC_PI_2;
        let minus = nested_shift(circuit, slopes, angles, rest, counter);
        angles[i] = base;
        total += kappa * 0.5 * (plus - minus);
    }
    total
}

/// Unique positive gaps of a generator spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSet(Vec<f64>);

impl GapSet {
    pub fn new(mut gaps: Vec<f64>) -> Result<Self> {
        gaps.retain(|g| *g > 0.0);
        gaps.sort_by(f64::total_cmp);
        gaps.dedup();
        if gaps.is_empty() {
            return Err(Error::Input("gap set is empty".into()));
        }
        Ok(Self(gaps))
    }

    pub fn from_eigenvalues(eigenvalues: &[f64]) -> Result<Self> {
        Self::new(spectral_gaps(eigenvalues, DEFAULT_GAP_TOL))
    }

    pub fn gaps(&self) -> &[f64] {
        &self.0
    }
}

/// Derivative of `f` at `angle` from `2R` shifted evaluations, where `R`
/// is the number of unique gaps of the generator driving `angle`.
///
/// `f(θ)` is a trigonometric polynomial with frequencies in the gap set, so
/// `f(θ+δ_s) - f(θ-δ_s) = Σ_k 2 sin(Δ_k δ_s) b_k` and `f'(θ) = Σ_k Δ_k b_k`.
/// With `δ_s = (2s-1)π / (2RΔ_min)` the coefficients `r_s` of
/// `f' = Σ_s r_s (f(θ+δ_s) - f(θ-δ_s))` solve `M r = Δ`.
pub fn gpsr_gradient(f: impl Fn(f64) -> f64, gap_set: &GapSet, angle: f64) -> Result<f64> {
    let gaps = gap_set.gaps();
    let r = gaps.len();
    let base = gaps[0];
    let shifts: Vec<f64> = (1..=r)
        .map(|s| (2 * s - 1) as f64 * std::f64::consts::PI / (2.0 * r as f64 * base))
        .collect();
    let m = DMatrix::from_fn(r, r, |k, s| 2.0 * (gaps[k] * shifts[s]).sin());
    let svd = m.clone().svd(false, false);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if !(min_sv > 1e-10 * max_sv) {
        return Err(Error::Numerical(format!(
            "generalized shift system is singular for gaps {gaps:?} \
             (singular values {min_sv:e}..{max_sv:e})"
        )));
    }
    let rhs = DVector::from_column_slice(gaps);
    let coeffs = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical(format!("shift system for gaps {gaps:?} has no solution")))?;
    Ok(shifts
        .iter()
        .zip(coeffs.iter())
        .map(|(&d, &c)| c * (f(angle + d) - f(angle - d)))
        .sum())
}

/// Loss functions whose gradient is assembled by the chain rule.
pub enum LossSpec<'a> {
    /// `(1/M) Σ (f(x_i) - y_i)²`
    SupervisedMse { xs: &'a [Vec<f64>], ys: &'a [f64] },
    /// Physics-informed loss of a stream-function/pressure pair.
    DqcPde {
        problem: &'a crate::pde::NseProblem,
        collocation: &'a [[f64; 3]],
        data: &'a [crate::pde::DataPoint],
    },
}

#[derive(Debug, Clone)]
pub struct LossGradient {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Loss and gradient over the trainable parameters. For the supervised loss
/// the parameters are `(θ_A, θ_F)` of `model`; for the physics-informed loss
/// they are laid out as in [`crate::pde::NseProblem::params`].
pub fn loss_gradient(
    spec: &LossSpec<'_>,
    model: &QuantumModel,
    counter: &EvalCounter,
) -> Result<LossGradient> {
    match spec {
        LossSpec::SupervisedMse { xs, ys } => supervised_gradient(model, xs, ys, counter),
        LossSpec::DqcPde {
            problem,
            collocation,
            data,
        } => {
            let out = crate::pde::dqc_loss_gradient(problem, collocation, data, counter)?;
            Ok(LossGradient {
                loss: out.total,
                grad: out.grad,
            })
        }
    }
}

pub fn supervised_gradient(
    model: &QuantumModel,
    xs: &[Vec<f64>],
    ys: &[f64],
    counter: &EvalCounter,
) -> Result<LossGradient> {
    if xs.len() != ys.len() {
        return Err(Error::Input(format!(
            "{} inputs for {} targets",
            xs.len(),
            ys.len()
        )));
    }
    if xs.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let m = xs.len() as f64;
    let mut grad = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let (f, g) = parameter_gradient(model, x, counter)?;
        let residual = f - y;
        loss += residual * residual / m;
        let dl_df = 2.0 * residual / m;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += dl_df * gi;
        }
    }
    Ok(LossGradient { loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::{
        forward, make_feature_map, Entangler, FeatureMapKind, ModelBuilder, RotationSchedule,
    };

    fn ry_model(theta: f64) -> QuantumModel {
        let mut b = ModelBuilder::new(1, 1);
        b.ansatz(RotationSchedule::Y, Entangler::None);
        b.build(vec![theta]).unwrap()
    }

    /// `f = cos(θ x)` on one qubit with a trainable generator.
    fn tf_cos_model(theta: f64) -> QuantumModel {
        let mut b = ModelBuilder::new(1, 1);
        b.encode(make_feature_map(FeatureMapKind::Trainable, 1, 0).unwrap());
        let mut m = b.build(vec![]).unwrap();
        m.set_theta_f(&[theta]).unwrap();
        m
    }

    #[test]
    fn grad_ansatz_examples() {
        assert!(grad_ansatz(&ry_model(0.0), &[0.0], 0).unwrap().abs() < 1e-12);
        assert!((grad_ansatz(&ry_model(FRAC_PI_2), &[0.0], 0).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(grad_ansatz(&ry_model(0.0), &[0.0], 1), Err(Error::Index(_))));
    }

    #[test]
    fn absent_parameter_has_zero_gradient() {
        // θ_A[1] drives an RZ acting on a Z eigenstate: only a global phase.
        let mut b = ModelBuilder::new(1, 1);
        b.ansatz(RotationSchedule::Yz, Entangler::None);
        let model = b.build(vec![0.0, 0.4]).unwrap();
        assert!(grad_ansatz(&model, &[0.0], 1).unwrap().abs() < 1e-12);
    }

    #[test]
    fn grad_generator_examples() {
        let m = tf_cos_model(0.5);
        let g = grad_generator(&m, &[2.0], 0).unwrap();
        assert!((g + 2.0 * 1f64.sin()).abs() < 1e-12, "{g}");
        assert!(grad_generator(&m, &[0.0], 0).unwrap().abs() < 1e-15);
        let a = analytic_generator_gradient(&m, &[2.0], 0, |_| true).unwrap();
        assert!((a - g).abs() < 1e-12);
    }

    #[test]
    fn reuploaded_generator_gradient_matches_finite_differences() {
        let mut b = ModelBuilder::new(1, 1);
        let id = b.encode(make_feature_map(FeatureMapKind::Trainable, 1, 0).unwrap());
        b.reupload(id);
        let mut m = b.build(vec![]).unwrap();
        m.set_theta_f(&[0.7]).unwrap();
        let x = [1.3f64];
        // f = cos(2θx)
        let analytic = -2.0 * x[0] * (2.0 * 0.7 * x[0]).sin();
        let g = grad_generator(&m, &x, 0).unwrap();
        assert!((g - analytic).abs() < 1e-12);
        let h = 1e-6;
        let mut mp = m.clone();
        mp.set_theta_f(&[0.7 + h]).unwrap();
        let mut mm = m.clone();
        mm.set_theta_f(&[0.7 - h]).unwrap();
        let fd = (forward(&mp, &x).unwrap() - forward(&mm, &x).unwrap()) / (2.0 * h);
        assert!((g - fd).abs() < 1e-6);
    }

    #[test]
    fn input_derivative_examples() {
        let m = tf_cos_model(0.5);
        for backend in [Backend::ShiftRule, Backend::AnalyticForward] {
            let d1 = input_derivative(&m, &[2.0], 0, 1, backend).unwrap();
            assert!((d1 + 0.5 * 1f64.sin()).abs() < 1e-12, "{backend:?}: {d1}");
            let d2 = input_derivative(&m, &[2.0], 0, 2, backend).unwrap();
            assert!((d2 + 0.25 * 1f64.cos()).abs() < 1e-12, "{backend:?}: {d2}");
            let d3 = input_derivative(&m, &[2.0], 0, 3, backend).unwrap();
            assert!((d3 - 0.125 * 1f64.sin()).abs() < 1e-12, "{backend:?}: {d3}");
        }
        assert!(matches!(
            input_derivative(&m, &[2.0], 0, 4, Backend::AnalyticForward),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            input_derivative(&m, &[2.0], 0, 0, Backend::ShiftRule),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn constant_model_has_zero_input_derivatives() {
        let m = ry_model(0.3);
        for order in 1..=3 {
            for backend in [Backend::ShiftRule, Backend::AnalyticForward] {
                assert_eq!(input_derivative(&m, &[0.4], 0, order, backend).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn gpsr_reduces_to_psr_for_unit_gap() {
        let m = ry_model(0.0);
        let f = |t: f64| forward(&ry_model(t), &[0.0]).unwrap();
        let gaps = GapSet::new(vec![1.0]).unwrap();
        for theta in [-1.0, 0.3, 2.0] {
            let g = gpsr_gradient(f, &gaps, theta).unwrap();
            let psr = grad_ansatz(&ry_model(theta), &[0.0], 0).unwrap();
            assert!((g - psr).abs() < 1e-12);
        }
        let _ = m;
    }

    #[test]
    fn gpsr_on_tower_generator_matches_finite_differences() {
        let mut b = ModelBuilder::new(2, 1);
        b.encode(make_feature_map(FeatureMapKind::Tower, 2, 0).unwrap());
        b.ansatz(RotationSchedule::Xyz, Entangler::CxRing);
        let model = b.build_seeded(11).unwrap();
        let block = &model.blocks()[0];
        let eigs = crate::circuits::composite_eigenvalues(block, &[]).unwrap();
        let gaps = GapSet::from_eigenvalues(&eigs).unwrap();
        assert_eq!(gaps.gaps(), &[1.0, 2.0, 3.0]);
        let f = |t: f64| forward(&model, &[t]).unwrap();
        for x0 in [-0.9, 0.2, 1.7] {
            let g = gpsr_gradient(f, &gaps, x0).unwrap();
            let h = 1e-4;
            let fd = (f(x0 + h) - f(x0 - h)) / (2.0 * h);
            assert!((g - fd).abs() < 1e-6, "{g} vs {fd}");
        }
    }

    #[test]
    fn gpsr_constant_and_singular() {
        let gaps = GapSet::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(gpsr_gradient(|_| 0.7, &gaps, 0.3).unwrap(), 0.0);
        // Gaps 1 and 3 with R = 2: δ = π/4, 3π/4 gives sin(π/4) = sin(3π/4) and
        // sin(3π/4) = sin(9π/4) in both rows, i.e. two identical columns.
        let gaps = GapSet::new(vec![1.0, 3.0]).unwrap();
        assert!(matches!(gpsr_gradient(|t| t.sin(), &gaps, 0.3), Err(Error::Numerical(_))));
        assert!(GapSet::new(vec![]).is_err());
    }

    #[test]
    fn supervised_gradient_examples() {
        let m = ry_model(FRAC_PI_2);
        let xs = vec![vec![0.0]];
        let g = supervised_gradient(&m, &xs, &[0.0], &EvalCounter::new()).unwrap();
        assert!(g.grad[0].abs() < 1e-12);
        // Perfect fit → zero gradient.
        let y = forward(&ry_model(0.4), &[0.0]).unwrap();
        let g = supervised_gradient(&ry_model(0.4), &xs, &[y], &EvalCounter::new()).unwrap();
        assert!(g.loss.abs() < 1e-30 && g.grad.iter().all(|v| v.abs() < 1e-12));
        assert!(supervised_gradient(&m, &xs, &[0.0, 1.0], &EvalCounter::new()).is_err());
    }

    #[test]
    fn derivative_set_closure() {
        let set = DerivativeSet::new(3, &[MultiIndex(vec![2, 1, 0]), MultiIndex(vec![0, 0, 1])]).unwrap();
        assert_eq!(set.len(), 7);
        assert_eq!(set.indices()[0], MultiIndex::zero(3));
        assert!(DerivativeSet::new(2, &[MultiIndex(vec![3, 1])]).is_err());
        assert!(DerivativeSet::new(2, &[MultiIndex(vec![1, 1, 0])]).is_err());
        assert_eq!(MultiIndex(vec![2, 0, 1]).sequence(), vec![0, 0, 2]);
    }
}
