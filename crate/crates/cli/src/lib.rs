//! Configuration-driven experiment runner for trainable-frequency quantum models.

pub mod compare;
pub mod config;
pub mod error;
pub mod experiments;

pub use compare::{compare, Comparison, MetricDelta, Verdict};
pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{CliError, Result};
pub use experiments::{
    load_results, output_root, run_config, run_file, spectrum_file, RunOutcome, RunResults,
};
