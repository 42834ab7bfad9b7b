//! Cosine-series datasets, Adam, and the supervised training loop.

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{supervised_gradient, EvalCounter};
use crate::circuits::{forward, QuantumModel};
use crate::error::{Error, Result};

/// `n = ⌈2 (hi - lo) max Ω⌉`
pub fn nyquist_count(frequencies: &[f64], domain: (f64, f64)) -> Result<usize> {
    check_series(frequencies, domain)?;
    let max = frequencies.iter().copied().fold(f64::MIN, f64::max);
    Ok((2.0 * (domain.1 - domain.0) * max).ceil() as usize)
}

fn check_series(frequencies: &[f64], (lo, hi): (f64, f64)) -> Result<()> {
    if frequencies.is_empty() {
        return Err(Error::Input("frequency set is empty".into()));
    }
    if frequencies.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::Input(format!("frequencies must be positive: {frequencies:?}")));
    }
    if !(hi > lo) {
        return Err(Error::Input(format!("empty domain [{lo}, {hi}]")));
    }
    Ok(())
}

/// `(1/|Ω|) Σ_ω cos(ω x)`
pub fn cosine_series(frequencies: &[f64], x: f64) -> f64 {
    frequencies.iter().map(|w| (w * x).cos()).sum::<f64>() / frequencies.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineDataset {
    pub frequencies: Vec<f64>,
    pub domain: (f64, f64),
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl CosineDataset {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// Equally spaced samples of the cosine series at the Nyquist count.
pub fn sample_cosine_series(frequencies: &[f64], domain: (f64, f64)) -> Result<CosineDataset> {
    let n = nyquist_count(frequencies, domain)?;
    sample_cosine_series_with_count(frequencies, domain, n)
}

/// As [`sample_cosine_series`] with an explicit sample count.
pub fn sample_cosine_series_with_count(
    frequencies: &[f64],
    domain: (f64, f64),
    count: usize,
) -> Result<CosineDataset> {
    check_series(frequencies, domain)?;
    if count < 2 {
        return Err(Error::Input(format!("need at least 2 samples, got {count}")));
    }
    let xs = crate::circuits::uniform_grid(domain.0, domain.1, count);
    let ys = xs.iter().map(|&x| cosine_series(frequencies, x)).collect();
    Ok(CosineDataset {
        frequencies: frequencies.to_vec(),
        domain,
        xs,
        ys,
    })
}

/// `count` frequencies equally spaced in `[lo, hi]`; a single frequency is `single`.
pub fn richness_frequencies(count: usize, (lo, hi): (f64, f64), single: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![single],
        n => (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} predictions, {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Input("mse of empty arrays".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// `(|θ_F| + |θ_A|) / |θ_A|`
pub fn cost_factor(num_theta_f: usize, num_theta_a: usize) -> Result<f64> {
    if num_theta_a == 0 {
        return Err(Error::Input("cost factor undefined without ansatz parameters".into()));
    }
    Ok((num_theta_f + num_theta_a) as f64 / num_theta_a as f64)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
pub fn adam_step(
    mut state: AdamState,
    params: &[f64],
    grads: &[f64],
    lr: f64,
) -> Result<(AdamState, Vec<f64>)> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Input(format!(
            "adam shapes differ: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let mut out = params.to_vec();
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        out[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok((state, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Batch loss before each update.
    pub loss_trace: Vec<f64>,
    pub theta_a: Vec<f64>,
    pub theta_f: Vec<f64>,
    /// MSE over the full dataset after training.
    pub final_mse: f64,
    pub forward_evaluations: u64,
    pub shifted_evaluations: u64,
    pub wall_clock_s: f64,
}

/// Seeded batch sampler drawing without replacement within each batch.
pub struct BatchSampler {
    rng: ChaCha8Rng,
    population: usize,
    batch: usize,
}

impl BatchSampler {
    pub fn new(seed: u64, population: usize, batch: usize) -> Result<Self> {
        if population == 0 {
            return Err(Error::Input("cannot sample from an empty set".into()));
        }
        if batch > population {
            return Err(Error::Config(format!(
                "batch_size {batch} exceeds the {population} available points"
            )));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            population,
            batch,
        })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        sample(&mut self.rng, self.population, self.batch).into_vec()
    }
}

/// Adam on the supervised MSE, updating `θ_A` and `θ_F` jointly.
pub fn train_supervised(
    model: &mut QuantumModel,
    dataset: &CosineDataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if model.num_features() != 1 {
        return Err(Error::Input(format!(
            "supervised cosine fits need a 1-feature model, got {}",
            model.num_features()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    let start = Instant::now();
    let counter = EvalCounter::new();
    let mut sampler = BatchSampler::new(config.seed, dataset.len(), config.batch_size)?;
    let mut adam = AdamState::new(model.num_params());
    let mut params = model.params();
    let mut trace = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let idx = sampler.next_batch();
        let xs: Vec<Vec<f64>> = idx.iter().map(|&i| vec![dataset.xs[i]]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| dataset.ys[i]).collect();
        let g = supervised_gradient(model, &xs, &ys, &counter)?;
        if !g.loss.is_finite() {
            return Err(Error::Numerical(format!("loss diverged to {}", g.loss)));
        }
        trace.push(g.loss);
        let (next, updated) = adam_step(adam, &params, &g.grad, config.learning_rate)?;
        adam = next;
        params = updated;
        model.set_params(&params)?;
    }
    let final_mse = dataset_mse(model, dataset)?;
    Ok(TrainReport {
        loss_trace: trace,
        theta_a: model.theta_a().to_vec(),
        theta_f: model.theta_f().to_vec(),
        final_mse,
        forward_evaluations: counter.forward(),
        shifted_evaluations: counter.shifted(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

pub fn predict(model: &QuantumModel, xs: &[f64]) -> Result<Vec<f64>> {
    xs.iter().map(|&x| forward(model, &[x])).collect()
}

pub fn dataset_mse(model: &QuantumModel, dataset: &CosineDataset) -> Result<f64> {
    mse(&predict(model, &dataset.xs)?, &dataset.ys)
}
