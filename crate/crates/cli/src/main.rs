//! Command-line front end: one subcommand per experiment, CSV outputs
//! stamped with a run manifest, and acceptance checks behind `--check`.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

const PRESET_HELP: &str = "\
Presets (--preset NAME):
  fig3        spot scan of the reconstructed quadrant, 800 nm steps (spot)
  fig5a       threshold histogram, Table I rates, 25 ms windows over 50 s (threshold)
  fig5b       adaptive Bayesian fidelity vs mean detection time (fidelity)
  fig6        collection efficiency and QE fit over 68-98 um ion offsets (collection, qefit)
  table1      count budget from source toggling (budget)
  projection  5% collection, 100 cps dark counts, no scatter, 24% QE (fidelity)

Exit status: 0 success (and all --check thresholds met), 1 a --check threshold
was missed, 2 invalid input.";

#[derive(Debug, Parser)]
#[command(name = "spadtrap", version, about = "Trapped-ion detection with an integrated SPAD: simulation and analysis", after_help = PRESET_HELP)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario config file (TOML).
    #[arg(long, global = true, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Bundled scenario: fig3, fig5a, fig5b, fig6, table1 or projection.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true, env = "SPADTRAP_OUTPUT_DIR", default_value = ".")]
    pub output_dir: PathBuf,
    /// Compare results against acceptance thresholds and set the exit code.
    #[arg(long, global = true)]
    pub check: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a timestamped event stream (events.csv).
    Simulate {
        /// Ion present (default).
        #[arg(long, conflicts_with = "no_ion")]
        ion: bool,
        /// Ion absent.
        #[arg(long)]
        no_ion: bool,
        /// Stream length in seconds; defaults to the scenario's trial duration.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Adaptive Bayesian fidelity vs mean time (fidelity_curve.csv, window_curve.csv).
    Fidelity {
        /// Comma-separated target posteriors.
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<f64>>,
        /// Simulated trials per hypothesis.
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Fixed-window threshold histogram (histogram.csv).
    Threshold {
        /// Window in milliseconds.
        #[arg(long, default_value_t = 25.0)]
        window_ms: f64,
    },
    /// Collection efficiency vs lateral ion offset (collection.csv).
    Collection {
        /// Comma-separated offsets in micrometers; default 0 to 80 in 5 um steps.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        offsets: Option<Vec<f64>>,
    },
    /// ARC reflectance vs angle of incidence (arc.csv).
    Arc {
        /// Comma-separated angles in degrees; default 0 to 85 in 5 degree steps.
        #[arg(long, value_delimiter = ',')]
        angles: Option<Vec<f64>>,
    },
    /// Effective active area from a spot scan (spot_map.csv).
    Spot {
        /// Scan CSV; a synthetic scan of the reconstructed quadrant when omitted.
        scan: Option<PathBuf>,
    },
    /// Count budget from toggle measurements (budget.csv).
    Budget {
        /// Toggle CSV; synthetic Table I toggles when omitted.
        toggles: Option<PathBuf>,
    },
    /// Quantum-efficiency fit to fluorescence vs offset (qefit.csv).
    Qefit {
        /// Dataset CSV (offset_um,fluorescence_kcps[,stderr_kcps]); simulated when omitted.
        data: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Fidelity { .. } => "fidelity",
            Command::Threshold { .. } => "threshold",
            Command::Collection { .. } => "collection",
            Command::Arc { .. } => "arc",
            Command::Spot { .. } => "spot",
            Command::Budget { .. } => "budget",
            Command::Qefit { .. } => "qefit",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.common, &cli.command) {
        Ok(outcome) => {
            if cli.common.check && !outcome.passed {
                eprintln!("check failed");
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
