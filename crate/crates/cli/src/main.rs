use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tfqnn_cli::{compare, output_root, run_file, spectrum_file, CliError};

#[derive(Parser)]
#[command(name = "tfqnn", version, about = "Run trainable-frequency quantum model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Compare the results of two run directories.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        /// Write the comparison here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Spectral analysis of the model in a config.
    Spectrum { config: PathBuf },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config } => {
            let out = run_file(&config, &output_root())?;
            println!("{}", out.dir.display());
            for (k, v) in &out.results.metrics {
                println!("  {k} = {v}");
            }
        }
        Command::Spectrum { config } => {
            let out = spectrum_file(&config, &output_root())?;
            println!("{}", out.dir.display());
            if let Some(f) = out.results.details.get("frequencies") {
                println!("  frequencies = {f}");
            }
        }
        Command::Compare { run_a, run_b, output } => {
            let c = compare(&run_a, &run_b)?;
            let text = serde_json::to_string_pretty(&c)?;
            match output {
                Some(path) => std::fs::write(&path, text).map_err(|e| CliError::io(path.display(), e))?,
                None => println!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
