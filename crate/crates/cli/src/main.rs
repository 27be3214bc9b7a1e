//! `schedsim` — run the named contention experiments from the command line.
//!
//! Every experiment is a deterministic function of (machine, seed,
//! overrides); outputs land in `--out` as CSV/JSON plus a manifest. Exit
//! codes: 0 success, 1 error, 2 covert channel lost with retries exhausted.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::Parser;
use serde::Deserialize;

use schedsim::experiments::{run_experiment, ExperimentName, ExperimentSpec, ExperimentStatus};
use schedsim::uarch::Machine;

#[derive(Parser, Debug)]
#[command(
    name = "schedsim",
    about = "Scheduler-queue contention simulator and experiment harness",
    after_help = "Experiments: capacity-sweep, pxor-stalls, classify-table, keystroke-run, covert-run, mem-ordering"
)]
struct Cli {
    /// Experiment to run.
    experiment: String,
    /// Machine model (zen2 | zen3 | zen4).
    #[arg(long)]
    machine: Option<String>,
    /// Experiment seed; all randomness derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parameter overrides as key=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Optional TOML config file; command-line flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
struct FileConfig {
    machine: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    #[serde(default)]
    set: BTreeMap<String, String>,
}

fn build_spec(cli: &Cli) -> Result<ExperimentSpec, String> {
    let name = ExperimentName::from_str(&cli.experiment).map_err(|e| e.to_string())?;

    let file: FileConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            toml::from_str(&text).map_err(|e| format!("bad config file: {e}"))?
        }
        None => FileConfig::default(),
    };

    let machine_name = cli
        .machine
        .clone()
        .or(file.machine)
        .unwrap_or_else(|| "zen3".to_string());
    let machine = Machine::from_str(&machine_name).map_err(|e| e.to_string())?;

    let seed = cli
        .seed
        .or(file.seed)
        .ok_or("a --seed is required; outputs must not depend on wall-clock state")?;

    let out_dir = cli
        .out
        .clone()
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from("out").join(cli.experiment.clone()));

    let mut overrides = file.set;
    for entry in &cli.set {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| format!("--set expects key=value, got `{entry}`"))?;
        overrides.insert(key.to_string(), value.to_string());
    }

    Ok(ExperimentSpec {
        name,
        machine,
        seed,
        overrides,
        out_dir,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let spec = match build_spec(&cli) {
        Ok(spec) => spec,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    match run_experiment(&spec) {
        Ok(outcome) => {
            for file in &outcome.files {
                println!("wrote {}", file.display());
            }
            match outcome.status {
                ExperimentStatus::Success => ExitCode::SUCCESS,
                ExperimentStatus::LostChannelRetriesExhausted => {
                    eprintln!("covert channel lost; placement retries exhausted");
                    ExitCode::from(2)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
