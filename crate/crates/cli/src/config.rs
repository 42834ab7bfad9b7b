//! Experiment configuration documents (TOML) and their validation.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tfqnn_core::circuits::{FeatureMapKind, ModelSpec, SpectrumMode, Window};
use tfqnn_core::pde::TaylorGreenSpec;
use tfqnn_core::training::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    FitCosine,
    RichnessSweep,
    Spectrum,
    SolveNse,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FitCosine => "fit_cosine",
            ExperimentKind::RichnessSweep => "richness_sweep",
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::SolveNse => "solve_nse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Run directory, relative to the output root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_domain() -> [f64; 2] {
    [-4.0 * PI, 4.0 * PI]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub frequencies: Vec<f64>,
    #[serde(default = "default_domain")]
    pub domain: [f64; 2],
    /// Overrides the Nyquist sample count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_counts")]
    pub counts: Vec<usize>,
    #[serde(default = "default_frequency_range")]
    pub frequency_range: [f64; 2],
    #[serde(default = "default_single_frequency")]
    pub single_frequency: f64,
    #[serde(default = "default_feature_maps")]
    pub feature_maps: Vec<FeatureMapKind>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_domain")]
    pub domain: [f64; 2],
}

fn default_counts() -> Vec<usize> {
    (1..=7).collect()
}
fn default_frequency_range() -> [f64; 2] {
    [1.0, 3.0]
}
fn default_single_frequency() -> f64 {
    1.0
}
fn default_feature_maps() -> Vec<FeatureMapKind> {
    FeatureMapKind::ALL.to_vec()
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    /// Analytic vortex reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taylor_green: Option<TaylorGreenSpec>,
    /// Flow-field CSV with its metadata sidecar, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default = "default_stride")]
    pub stride: [usize; 2],
}

fn default_stride() -> [usize; 2] {
    [10, 10]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default = "default_mode")]
    pub mode: SpectrumMode,
    /// Generator parameters to analyse instead of the initial ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_f: Option<Vec<f64>>,
    /// Also sample the model output and write its DFT.
    #[serde(default)]
    pub dft: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_mode() -> SpectrumMode {
    SpectrumMode::QnnGaps
}

/// Settings for prediction curves and DFT spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_dft_domain")]
    pub dft_domain: [f64; 2],
    #[serde(default = "default_dft_samples")]
    pub dft_samples: usize,
    #[serde(default = "default_window")]
    pub window: Window,
    #[serde(default = "default_peak_threshold")]
    pub peak_threshold: f64,
    #[serde(default = "default_prediction_samples")]
    pub prediction_samples: usize,
}

fn default_dft_domain() -> [f64; 2] {
    [-32.0 * PI, 32.0 * PI]
}
fn default_dft_samples() -> usize {
    4096
}
fn default_window() -> Window {
    Window::Hann
}
fn default_peak_threshold() -> f64 {
    0.1
}
fn default_prediction_samples() -> usize {
    1001
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            dft_domain: default_dft_domain(),
            dft_samples: default_dft_samples(),
            window: default_window(),
            peak_threshold: default_peak_threshold(),
            prediction_samples: default_prediction_samples(),
        }
    }
}

/// A validation finding anchored to `[section] key`.
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub section: Option<&'static str>,
    pub key: &'static str,
    pub message: String,
}

fn issue(section: Option<&'static str>, key: &'static str, message: impl Into<String>) -> Issue {
    Issue {
        section,
        key,
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn parse(source: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(source)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configs always serialize")
    }

    pub fn train(&self) -> &TrainConfig {
        self.train.as_ref().expect("validated configs carry a [train] table")
    }

    pub fn run_name(&self) -> String {
        self.output_dir
            .clone()
            .unwrap_or_else(|| self.experiment.name().to_string())
    }

    pub fn issues(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        let m = &self.model;
        if m.qubits == 0 || m.qubits > tfqnn_core::qstate::DEFAULT_MAX_QUBITS {
            out.push(issue(Some("model"), "qubits", format!("must be in 1..=14, got {}", m.qubits)));
        }
        if m.layers == 0 {
            out.push(issue(Some("model"), "layers", "must be at least 1"));
        }
        if m.features == 0 {
            out.push(issue(Some("model"), "features", "must be at least 1"));
        }
        if out.is_empty() {
            if let Err(e) = m.validate() {
                out.push(issue(Some("model"), "", e.to_string()));
            }
        }

        let needs_train = self.experiment != ExperimentKind::Spectrum;
        match &self.train {
            None if needs_train => out.push(issue(None, "train", "missing [train] table")),
            None => {}
            Some(t) => {
                if t.batch_size == 0 {
                    out.push(issue(Some("train"), "batch_size", "must be at least 1"));
                }
                if !(t.learning_rate > 0.0) || !t.learning_rate.is_finite() {
                    out.push(issue(
                        Some("train"),
                        "learning_rate",
                        format!("must be positive, got {}", t.learning_rate),
                    ));
                }
            }
        }

        match self.experiment {
            ExperimentKind::FitCosine => match &self.data {
                None => out.push(issue(None, "data", "missing [data] table")),
                Some(d) => {
                    check_frequencies(&d.frequencies, &mut out);
                    check_domain(Some("data"), "domain", d.domain, &mut out);
                    if let (Some(n), Some(t)) = (d.samples, &self.train) {
                        if n < 2 {
                            out.push(issue(Some("data"), "samples", "must be at least 2"));
                        } else if t.batch_size > n {
                            out.push(issue(
                                Some("train"),
                                "batch_size",
                                format!("exceeds the {n} samples"),
                            ));
                        }
                    }
                    if m.features != 1 {
                        out.push(issue(Some("model"), "features", "cosine fits take 1 feature"));
                    }
                }
            },
            ExperimentKind::RichnessSweep => match &self.sweep {
                None => out.push(issue(None, "sweep", "missing [sweep] table")),
                Some(s) => {
                    if s.counts.is_empty() || s.counts.contains(&0) {
                        out.push(issue(Some("sweep"), "counts", "must list positive frequency counts"));
                    }
                    if s.feature_maps.is_empty() {
                        out.push(issue(Some("sweep"), "feature_maps", "must not be empty"));
                    }
                    if s.seeds.is_empty() {
                        out.push(issue(Some("sweep"), "seeds", "must not be empty"));
                    }
                    let [lo, hi] = s.frequency_range;
                    if !(lo > 0.0 && hi >= lo) {
                        out.push(issue(Some("sweep"), "frequency_range", "needs 0 < lo <= hi"));
                    }
                    if !(s.single_frequency > 0.0) {
                        out.push(issue(Some("sweep"), "single_frequency", "must be positive"));
                    }
                    check_domain(Some("sweep"), "domain", s.domain, &mut out);
                    if m.features != 1 {
                        out.push(issue(Some("model"), "features", "cosine fits take 1 feature"));
                    }
                }
            },
            ExperimentKind::Spectrum => {}
            ExperimentKind::SolveNse => match &self.flow {
                None => out.push(issue(None, "flow", "missing [flow] table")),
                Some(f) => {
                    if f.taylor_green.is_some() == f.file.is_some() {
                        out.push(issue(
                            Some("flow"),
                            "file",
                            "set exactly one of `file` and [flow.taylor_green]",
                        ));
                    }
                    if let Some(tg) = &f.taylor_green {
                        if !(tg.reynolds > 0.0) {
                            out.push(issue(Some("flow.taylor_green"), "reynolds", "must be positive"));
                        }
                        for (key, a) in [("x", tg.x), ("y", tg.y), ("t", tg.t)] {
                            if a.n == 0 || (a.n > 1 && !(a.hi > a.lo)) {
                                out.push(issue(Some("flow.taylor_green"), key, "needs n >= 1 and lo < hi"));
                            }
                        }
                    }
                    if f.stride.contains(&0) {
                        out.push(issue(Some("flow"), "stride", "must be positive"));
                    }
                    if m.features != 3 {
                        out.push(issue(Some("model"), "features", "flow models take (x, y, t): features = 3"));
                    }
                }
            },
        }

        let a = &self.analysis;
        check_domain(Some("analysis"), "dft_domain", a.dft_domain, &mut out);
        if a.dft_samples < 2 {
            out.push(issue(Some("analysis"), "dft_samples", "must be at least 2"));
        }
        if a.prediction_samples < 2 {
            out.push(issue(Some("analysis"), "prediction_samples", "must be at least 2"));
        }
        if !(0.0..1.0).contains(&a.peak_threshold) {
            out.push(issue(Some("analysis"), "peak_threshold", "must lie in [0, 1)"));
        }
        out
    }
}

fn check_frequencies(f: &[f64], out: &mut Vec<Issue>) {
    if f.is_empty() || f.iter().any(|w| !(*w > 0.0)) {
        out.push(issue(Some("data"), "frequencies", "must be a nonempty list of positive values"));
    }
}

fn check_domain(section: Option<&'static str>, key: &'static str, [lo, hi]: [f64; 2], out: &mut Vec<Issue>) {
    if !(hi > lo) {
        out.push(issue(section, key, format!("needs lo < hi, got [{lo}, {hi}]")));
    }
}

/// 1-based line of `[section] key` in `source`, falling back to the
/// section header, then to `None`.
pub fn locate(source: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let lines: Vec<&str> = source.lines().collect();
    let mut start = 0;
    let mut header = None;
    if let Some(section) = section {
        let target = format!("[{section}]");
        let pos = lines.iter().position(|l| l.trim() == target)?;
        header = Some(pos + 1);
        start = pos + 1;
    }
    for (i, line) in lines.iter().enumerate().skip(start) {
        let t = line.trim();
        if t.starts_with('[') {
            break;
        }
        if let Some(rest) = t.strip_prefix(key) {
            if !key.is_empty() && rest.trim_start().starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    header
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Reads, parses and validates a config file.
pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let source = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(path, None, format!("cannot read config: {e}")))?;
    from_source(path, &source)
}

pub fn from_source(path: &Path, source: &str) -> Result<ExperimentConfig, CliError> {
    let config = ExperimentConfig::parse(source).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(source, s.start));
        CliError::config(path, line, e.message().trim().to_string())
    })?;
    if let Some(first) = config.issues().into_iter().next() {
        let line = locate(source, first.section, first.key);
        let field = match (first.section, first.key) {
            (Some(s), "") => s.to_string(),
            (Some(s), k) => format!("{s}.{k}"),
            (None, k) => k.to_string(),
        };
        return Err(CliError::config(path, line, format!("`{field}` {}", first.message)));
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIT: &str = r#"
experiment = "fit_cosine"

[model]
qubits = 4
layers = 4
feature_map = "simple"

[train]
iterations = 10
batch_size = 1
learning_rate = 1e-3
seed = 0

[data]
frequencies = [1.0, 2.0, 3.0]
"#;

    #[test]
    fn parses_and_round_trips() {
        let c = from_source(Path::new("fit.toml"), FIT).unwrap();
        assert_eq!(c.data.as_ref().unwrap().domain, default_domain());
        let echo = c.to_toml();
        let back = from_source(Path::new("echo.toml"), &echo).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn zero_batch_size_is_anchored() {
        let bad = FIT.replace("batch_size = 1", "batch_size = 0");
        let err = from_source(Path::new("fit.toml"), &bad).unwrap_err();
        let text = err.to_string();
        assert!(text.starts_with("fit.toml:11:"), "{text}");
        assert!(text.contains("train.batch_size"), "{text}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_key_is_anchored() {
        let bad = FIT.replace("layers = 4", "layers = 4\nlayres = 2");
        let text = from_source(Path::new("fit.toml"), &bad).unwrap_err().to_string();
        assert!(text.starts_with("fit.toml:7:"), "{text}");
    }

    #[test]
    fn locate_falls_back_to_header() {
        assert_eq!(locate(FIT, Some("train"), "missing"), Some(9));
        assert_eq!(locate(FIT, Some("data"), "frequencies"), Some(16));
        assert_eq!(locate(FIT, None, "experiment"), Some(2));
        assert_eq!(locate(FIT, Some("nope"), "x"), None);
    }
}
