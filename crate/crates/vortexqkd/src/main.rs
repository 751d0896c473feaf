//! `vortexqkd`: four-dimensional polarization-OAM BB84 simulator and
//! decoy-state analysis tool.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vortexqkd::cli::{
    self, cmd_crosstalk, cmd_keyrate, cmd_mubs, cmd_simulate, cmd_timing, MisalignmentArg,
    ObservablesSource, RunConfig,
};
use vortexqkd::error::{QkdError, Result};

#[derive(Parser)]
#[command(
    name = "vortexqkd",
    about = "Four-dimensional polarization-OAM BB84 simulator with decoy-state analysis",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (JSON); defaults to the built-in nominal config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for primary outputs (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the eight MUB states, their squared-overlap Gram matrix and
    /// pass/fail for orthonormality and 1/4 unbiasedness.
    Mubs {
        #[command(flatten)]
        common: CommonArgs,
        /// Test hook: flip the circular-basis convention of the comparison
        /// table; the checks must then fail with a nonzero exit code.
        #[arg(long, hide = true)]
        perturb_convention: bool,
    },
    /// Export the misaligned crosstalk matrix (CSV) and per-state
    /// projective efficiencies.
    Crosstalk {
        #[command(flatten)]
        common: CommonArgs,
        /// Misalignment rotation angle in radians (canonical parametrization).
        #[arg(long, conflicts_with = "hwp_deg")]
        misalignment_rad: Option<f64>,
        /// Misalignment as a HWP fast-axis error in degrees (rotation 2*theta).
        #[arg(long)]
        hwp_deg: Option<f64>,
    },
    /// Run a Monte Carlo decoy-state session and write the tally JSON.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Use the calibrated reference-experiment configuration.
        #[arg(long)]
        paper: bool,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config pulse count.
        #[arg(long)]
        pulses: Option<u64>,
        /// Also write the sifted pulse records as CSV.
        #[arg(long)]
        records: bool,
        /// Also evaluate the key rate from the simulated tallies.
        #[arg(long)]
        keyrate: bool,
        /// Error-correction efficiency used with --keyrate.
        #[arg(long, default_value_t = 1.0)]
        fec: f64,
        /// Worker threads (also capped by VORTEXQKD_THREADS).
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Evaluate decoy bounds and the GLLP key rate from observables.
    Keyrate {
        #[command(flatten)]
        common: CommonArgs,
        /// Use the published reference observables.
        #[arg(long)]
        paper: bool,
        /// Observables JSON file (alternative to --paper).
        #[arg(long, conflicts_with = "paper")]
        observables: Option<PathBuf>,
        /// Error-correction efficiency f_EC >= 1.
        #[arg(long, default_value_t = 1.0)]
        fec: f64,
    },
    /// Emit the analytic two-peak arrival-time profile as CSV.
    Timing {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn thread_cap() -> Option<usize> {
    std::env::var("VORTEXQKD_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    match &common.config {
        Some(path) => RunConfig::load(path),
        None => cli::default_config(),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Mubs {
            common,
            perturb_convention,
        } => {
            let config = load_config(&common)?;
            let report = cmd_mubs(&config, perturb_convention)?;
            if let Some(dir) = &common.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(
                    dir.join("mubs.json"),
                    serde_json::to_string_pretty(&report)? + "\n",
                )?;
            }
            let pass = report.pass;
            print_json(&report)?;
            Ok(pass)
        }
        Command::Crosstalk {
            common,
            misalignment_rad,
            hwp_deg,
        } => {
            let config = load_config(&common)?;
            let arg = match (misalignment_rad, hwp_deg) {
                (Some(r), _) => MisalignmentArg::Radians(r),
                (None, Some(d)) => MisalignmentArg::HwpDegrees(d),
                (None, None) => MisalignmentArg::Calibrate,
            };
            let summary = cmd_crosstalk(&config, arg, common.out.as_deref())?;
            print_json(&summary)?;
            Ok(true)
        }
        Command::Simulate {
            common,
            paper,
            seed,
            pulses,
            records,
            keyrate,
            fec,
            parallel,
        } => {
            let mut config = if paper {
                RunConfig::paper_default(pulses.unwrap_or(1_000_000), seed.unwrap_or(0))?
            } else {
                load_config(&common)?
            };
            if let Some(s) = seed {
                config.session.seed = s;
            }
            if let Some(p) = pulses {
                config.session.pulses = p;
            }
            let parallelism = match (parallel, thread_cap()) {
                (Some(p), Some(cap)) => Some(p.min(cap)),
                (Some(p), None) => Some(p),
                (None, cap) => cap,
            };
            let report = cmd_simulate(
                &config,
                common.out.as_deref(),
                parallelism,
                records,
                keyrate,
                fec,
            )?;
            print_json(&report)?;
            Ok(true)
        }
        Command::Keyrate {
            common,
            paper,
            observables,
            fec,
        } => {
            let source = match (&observables, paper) {
                (Some(path), _) => ObservablesSource::File(path),
                (None, true) => ObservablesSource::Paper,
                (None, false) => {
                    return Err(QkdError::InvalidInput(
                        "keyrate needs --paper or --observables <path>".into(),
                    ))
                }
            };
            let report = cmd_keyrate(source, fec, common.out.as_deref())?;
            print_json(&report)?;
            Ok(true)
        }
        Command::Timing { common } => {
            let config = load_config(&common)?;
            let summary = cmd_timing(&config, common.out.as_deref())?;
            print_json(&summary)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
