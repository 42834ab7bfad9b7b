//! Experiment runners. Each writes its artifacts into a run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tfqnn_core::circuits::{
    dft_spectrum_windowed, find_peaks, uniform_grid, FeatureMapKind, QuantumModel,
    SpectrumReport, DEFAULT_GAP_TOL,
};
use tfqnn_core::pde::{
    load_flow_field, median_baseline, train_nse, write_flow_field, FlowField, MaermReport,
    NseProblem,
};
use tfqnn_core::training::{
    predict, richness_frequencies, sample_cosine_series, sample_cosine_series_with_count,
    train_supervised, CosineDataset, TrainConfig,
};

use crate::config::{AnalysisConfig, ExperimentConfig, ExperimentKind};
use crate::error::{CliError, Result};

pub const RESULTS_FILE: &str = "results.json";
pub const CONFIG_ECHO: &str = "config.toml";
pub const OUTPUT_ROOT_VAR: &str = "TFQNN_OUTPUT_ROOT";

/// Contents of `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub experiment: ExperimentKind,
    pub seed: Option<u64>,
    /// Scalar observables, all lower-is-better.
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub details: Value,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub results: RunResults,
}

/// `$TFQNN_OUTPUT_ROOT`, or `runs` in the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Loads `path` and runs it under `root`.
pub fn run_file(path: &Path, root: &Path) -> Result<RunOutcome> {
    let config = crate::config::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let dir = root.join(config.run_name());
    let results = run_config(&config, base, &dir)?;
    Ok(RunOutcome { dir, results })
}

/// Runs only the spectral analysis of the model declared in `path`.
pub fn spectrum_file(path: &Path, root: &Path) -> Result<RunOutcome> {
    let mut config = crate::config::load(path)?;
    if config.experiment != ExperimentKind::Spectrum {
        config.output_dir = Some(format!("{}_spectrum", config.run_name()));
        config.experiment = ExperimentKind::Spectrum;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let dir = root.join(config.run_name());
    let results = run_config(&config, base, &dir)?;
    Ok(RunOutcome { dir, results })
}

/// Runs a validated config, writing into `dir`. Relative flow-field paths are
/// resolved against `base`.
pub fn run_config(config: &ExperimentConfig, base: &Path, dir: &Path) -> Result<RunResults> {
    let mut config = config.clone();
    if let Some(file) = config.flow.as_mut().and_then(|f| f.file.as_mut()) {
        if file.is_relative() {
            *file = base.join(&*file);
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    write_text(&dir.join(CONFIG_ECHO), &config.to_toml())?;
    let results = match config.experiment {
        ExperimentKind::FitCosine => fit_cosine(&config, dir)?,
        ExperimentKind::RichnessSweep => richness_sweep(&config, dir)?,
        ExperimentKind::Spectrum => spectrum(&config, dir)?,
        ExperimentKind::SolveNse => solve_nse(&config, dir)?,
    };
    write_text(&dir.join(RESULTS_FILE), &serde_json::to_string_pretty(&results)?)?;
    Ok(results)
}

pub fn load_results(dir: &Path) -> Result<RunResults> {
    let path = dir.join(RESULTS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(path.display(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Other(format!("{}: malformed results: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path.display(), e))
}

fn write_csv<const N: usize>(path: &Path, header: [&str; N], rows: impl IntoIterator<Item = [String; N]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(path.display(), e))?;
    Ok(())
}

fn f(v: f64) -> String {
    v.to_string()
}

fn numerical(e: tfqnn_core::Error) -> CliError {
    if e.is_numerical() {
        CliError::Numerical(e.to_string())
    } else {
        e.into()
    }
}

/// Prediction of a single-feature model over the analysis window and its peaks.
fn spectrum_of(model: &QuantumModel, a: &AnalysisConfig) -> Result<(Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    let xs = uniform_grid(a.dft_domain[0], a.dft_domain[1], a.dft_samples);
    let ys = predict(model, &xs)?;
    let spectrum = dft_spectrum_windowed(&xs, &ys, a.window)?;
    let peaks = find_peaks(&spectrum, a.peak_threshold);
    Ok((spectrum, peaks))
}

fn gaps_of(model: &QuantumModel, mode: tfqnn_core::circuits::SpectrumMode) -> Result<Vec<SpectrumReport>> {
    model
        .blocks()
        .iter()
        .map(|b| SpectrumReport::from_block(b, model.theta_f(), mode, DEFAULT_GAP_TOL).map_err(Into::into))
        .collect()
}

fn fit_cosine(config: &ExperimentConfig, dir: &Path) -> Result<RunResults> {
    let data = config.data.as_ref().expect("validated");
    let train = config.train();
    let domain = (data.domain[0], data.domain[1]);
    let dataset = match data.samples {
        Some(n) => sample_cosine_series_with_count(&data.frequencies, domain, n)?,
        None => sample_cosine_series(&data.frequencies, domain)?,
    };
    let mut model = config.model.build(train.seed)?;
    let report = train_supervised(&mut model, &dataset, train).map_err(numerical)?;

    write_csv(
        &dir.join("trace.csv"),
        ["iteration", "loss"],
        report.loss_trace.iter().enumerate().map(|(i, l)| [i.to_string(), f(*l)]),
    )?;
    let xs = uniform_grid(domain.0, domain.1, config.analysis.prediction_samples);
    let pred = predict(&model, &xs)?;
    write_csv(
        &dir.join("prediction.csv"),
        ["x", "target", "prediction"],
        xs.iter().zip(&pred).map(|(&x, &p)| {
            [f(x), f(tfqnn_core::training::cosine_series(&data.frequencies, x)), f(p)]
        }),
    )?;
    write_csv(
        &dir.join("data.csv"),
        ["x", "y"],
        dataset.xs.iter().zip(&dataset.ys).map(|(x, y)| [f(*x), f(*y)]),
    )?;
    let (spectrum, peaks) = spectrum_of(&model, &config.analysis)?;
    write_csv(&dir.join("dft.csv"), ["omega", "magnitude"], spectrum.iter().map(|(w, m)| [f(*w), f(*m)]))?;
    let gaps = gaps_of(&model, tfqnn_core::circuits::SpectrumMode::QnnGaps)?;

    let mut metrics = BTreeMap::new();
    metrics.insert("final_mse".to_string(), report.final_mse);
    if let Some(last) = report.loss_trace.last() {
        metrics.insert("final_batch_loss".to_string(), *last);
    }
    Ok(RunResults {
        experiment: config.experiment,
        seed: Some(train.seed),
        metrics,
        details: json!({
            "samples": dataset.len(),
            "theta_f": report.theta_f,
            "theta_a": report.theta_a,
            "frequencies": gaps.iter().map(|g| &g.gaps).collect::<Vec<_>>(),
            "dft_peaks": peaks,
            "evaluations": { "forward": report.forward_evaluations, "shifted": report.shifted_evaluations },
        }),
        timing: Timing { wall_clock_s: report.wall_clock_s },
    })
}

#[derive(Debug, Clone, Serialize)]
struct SweepRun {
    count: usize,
    feature_map: FeatureMapKind,
    seed: u64,
    final_mse: f64,
    theta_f: Vec<f64>,
    wall_clock_s: f64,
}

fn richness_sweep(config: &ExperimentConfig, dir: &Path) -> Result<RunResults> {
    let sweep = config.sweep.as_ref().expect("validated");
    let train = config.train();
    let range = (sweep.frequency_range[0], sweep.frequency_range[1]);
    let domain = (sweep.domain[0], sweep.domain[1]);
    let datasets: Vec<(usize, CosineDataset)> = sweep
        .counts
        .iter()
        .map(|&c| {
            let freqs = richness_frequencies(c, range, sweep.single_frequency);
            sample_cosine_series(&freqs, domain).map(|d| (c, d))
        })
        .collect::<std::result::Result<_, _>>()?;
    let jobs: Vec<(usize, FeatureMapKind, u64)> = datasets
        .iter()
        .enumerate()
        .flat_map(|(i, _)| {
            sweep
                .feature_maps
                .iter()
                .flat_map(move |&k| sweep.seeds.iter().map(move |&s| (i, k, s)))
        })
        .collect();
    let runs: Vec<SweepRun> = jobs
        .par_iter()
        .map(|&(i, kind, seed)| {
            let (count, dataset) = &datasets[i];
            let mut model = config.model.with_kind(kind).build(seed)?;
            let cfg = TrainConfig { seed, ..train.clone() };
            let r = train_supervised(&mut model, dataset, &cfg).map_err(numerical)?;
            Ok(SweepRun {
                count: *count,
                feature_map: kind,
                seed,
                final_mse: r.final_mse,
                theta_f: r.theta_f,
                wall_clock_s: r.wall_clock_s,
            })
        })
        .collect::<Result<_>>()?;

    write_csv(
        &dir.join("mse.csv"),
        ["count", "feature_map", "seed", "final_mse"],
        runs.iter().map(|r| [r.count.to_string(), r.feature_map.name().to_string(), r.seed.to_string(), f(r.final_mse)]),
    )?;

    let mut metrics = BTreeMap::new();
    let mut per_seed = BTreeMap::new();
    for &kind in &sweep.feature_maps {
        let means: Vec<f64> = sweep
            .seeds
            .iter()
            .map(|&s| {
                let v: Vec<f64> = runs
                    .iter()
                    .filter(|r| r.feature_map == kind && r.seed == s)
                    .map(|r| r.final_mse)
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            })
            .collect();
        let med = tfqnn_core::pde::median(&means).expect("seeds are nonempty");
        metrics.insert(format!("mean_mse.{}", kind.name()), med);
        per_seed.insert(kind.name().to_string(), means);
    }
    Ok(RunResults {
        experiment: config.experiment,
        seed: None,
        metrics,
        details: json!({
            "seeds": sweep.seeds,
            "mean_mse_per_seed": per_seed,
            "runs": runs.iter().map(|r| json!({
                "count": r.count, "feature_map": r.feature_map, "seed": r.seed,
                "final_mse": r.final_mse, "theta_f": r.theta_f,
            })).collect::<Vec<_>>(),
        }),
        timing: Timing { wall_clock_s: runs.iter().map(|r| r.wall_clock_s).sum() },
    })
}

fn spectrum(config: &ExperimentConfig, dir: &Path) -> Result<RunResults> {
    let start = std::time::Instant::now();
    let settings = config.spectrum.clone().unwrap_or(crate::config::SpectrumConfig {
        mode: tfqnn_core::circuits::SpectrumMode::QnnGaps,
        theta_f: None,
        dft: false,
        seed: 0,
    });
    let seed = config.train.as_ref().map(|t| t.seed).unwrap_or(settings.seed);
    let mut model = config.model.build(seed)?;
    if let Some(theta) = &settings.theta_f {
        model.set_theta_f(theta).map_err(|e| CliError::Other(e.to_string()))?;
    }
    let reports = gaps_of(&model, settings.mode)?;
    write_csv(
        &dir.join("gaps.csv"),
        ["block", "frequency"],
        reports
            .iter()
            .enumerate()
            .flat_map(|(b, r)| r.frequencies().into_iter().map(move |g| [b.to_string(), f(g)])),
    )?;
    write_csv(
        &dir.join("eigenvalues.csv"),
        ["block", "eigenvalue"],
        reports
            .iter()
            .enumerate()
            .flat_map(|(b, r)| r.eigenvalues.iter().map(move |e| [b.to_string(), f(*e)])),
    )?;
    let mut peaks = None;
    if settings.dft && model.num_features() == 1 {
        let (spectrum, p) = spectrum_of(&model, &config.analysis)?;
        write_csv(&dir.join("dft.csv"), ["omega", "magnitude"], spectrum.iter().map(|(w, m)| [f(*w), f(*m)]))?;
        peaks = Some(p);
    }
    Ok(RunResults {
        experiment: ExperimentKind::Spectrum,
        seed: Some(seed),
        metrics: BTreeMap::new(),
        details: json!({
            "mode": settings.mode,
            "theta_f": model.theta_f(),
            "frequencies": reports.iter().map(|r| r.frequencies()).collect::<Vec<_>>(),
            "dft_peaks": peaks,
        }),
        timing: Timing { wall_clock_s: start.elapsed().as_secs_f64() },
    })
}

fn solve_nse(config: &ExperimentConfig, dir: &Path) -> Result<RunResults> {
    let flow = config.flow.as_ref().expect("validated");
    let train = config.train();
    let reference: FlowField = match (&flow.taylor_green, &flow.file) {
        (Some(tg), _) => tg.field()?,
        (None, Some(file)) => load_flow_field(file)?,
        (None, None) => unreachable!("validated"),
    };
    let stride = (flow.stride[0], flow.stride[1]);
    let mut problem = NseProblem::from_reference(&config.model, &reference, stride, train.seed)?;
    let report = train_nse(&mut problem, train, &reference).map_err(numerical)?;
    let baseline = MaermReport::compute(&median_baseline(&reference), &reference).map_err(numerical)?;
    let predicted = problem.predict_field(&reference)?;

    write_csv(
        &dir.join("trace.csv"),
        ["iteration", "total", "pde", "data"],
        report
            .loss_trace
            .iter()
            .zip(&report.pde_trace)
            .zip(&report.data_trace)
            .enumerate()
            .map(|(i, ((t, p), d))| [i.to_string(), f(*t), f(*p), f(*d)]),
    )?;
    let m = &report.maerm;
    write_csv(
        &dir.join("maerm.csv"),
        ["t", "u", "v", "p", "baseline_u", "baseline_v", "baseline_p"],
        (0..m.times.len()).map(|i| {
            [m.times[i], m.u[i], m.v[i], m.p[i], baseline.u[i], baseline.v[i], baseline.p[i]].map(f)
        }),
    )?;
    write_csv(
        &dir.join("pressure.csv"),
        ["x", "y", "t", "predicted", "reference"],
        (0..reference.len()).map(|i| {
            let [x, y, t] = reference.point(i);
            [x, y, t, predicted.p[i], reference.p[i]].map(f)
        }),
    )?;
    write_flow_field(&predicted, &dir.join("prediction.csv"))?;

    let mut metrics = BTreeMap::new();
    metrics.insert("final_loss".to_string(), report.final_loss.total);
    metrics.insert("final_pde_loss".to_string(), report.final_loss.l_pde);
    metrics.insert("final_data_loss".to_string(), report.final_loss.l_data);
    for (name, values, summary) in [("u", &m.u, &m.u_summary), ("v", &m.v, &m.v_summary), ("p", &m.p, &m.p_summary)] {
        metrics.insert(format!("maerm_{name}.mean"), summary.mean);
        for (i, v) in values.iter().enumerate() {
            metrics.insert(format!("maerm_{name}.t{i}"), *v);
        }
    }
    Ok(RunResults {
        experiment: config.experiment,
        seed: Some(train.seed),
        metrics,
        details: json!({
            "params": report.params,
            "maerm": report.maerm,
            "baseline_maerm": baseline,
            "evaluations": { "forward": report.forward_evaluations, "shifted": report.shifted_evaluations },
        }),
        timing: Timing { wall_clock_s: report.wall_clock_s },
    })
}
