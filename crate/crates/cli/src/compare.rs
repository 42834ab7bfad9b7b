//! Side-by-side comparison of two completed runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::config::ExperimentKind;
use crate::experiments::load_results;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `b - a`
    pub delta: f64,
    /// The run with the lower value.
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub experiment: ExperimentKind,
    pub run_a: String,
    pub run_b: String,
    pub metrics: Vec<MetricDelta>,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
}

pub fn compare(dir_a: &Path, dir_b: &Path) -> Result<Comparison> {
    let a = load_results(dir_a)?;
    let b = load_results(dir_b)?;
    if a.experiment != b.experiment {
        return Err(CliError::Incompatible(format!(
            "cannot compare a {} run with a {} run",
            a.experiment.name(),
            b.experiment.name()
        )));
    }
    let mut metrics = Vec::new();
    for (name, &va) in &a.metrics {
        let Some(&vb) = b.metrics.get(name) else { continue };
        let verdict = if va < vb {
            Verdict::A
        } else if vb < va {
            Verdict::B
        } else {
            Verdict::Tie
        };
        metrics.push(MetricDelta {
            metric: name.clone(),
            a: va,
            b: vb,
            delta: vb - va,
            verdict,
        });
    }
    if metrics.is_empty() && !a.metrics.is_empty() {
        return Err(CliError::Incompatible("the runs share no metrics".into()));
    }
    let count = |v| metrics.iter().filter(|m| m.verdict == v).count();
    Ok(Comparison {
        experiment: a.experiment,
        run_a: dir_a.display().to_string(),
        run_b: dir_b.display().to_string(),
        wins_a: count(Verdict::A),
        wins_b: count(Verdict::B),
        ties: count(Verdict::Tie),
        metrics,
    })
}
