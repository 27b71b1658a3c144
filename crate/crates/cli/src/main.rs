//! `disalign` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "disalign", version, about = "Long-tail calibration experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Experiment config file (`key = value` lines with dotted sections).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out` from the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override any config key, e.g. `--set align.rho=1.5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_key_value)]
    pub overrides: Vec<(String, String)>,
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    if k.trim().is_empty() {
        return Err(format!("empty key in `{s}`"));
    }
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the long-tailed training set and its balanced test twin.
    Gen {
        /// Also write CSV copies next to the LTDS files.
        #[arg(long)]
        csv: bool,
    },
    /// Stage 1: train encoder and head jointly.
    Train,
    /// Stage 2: learn the calibration over a frozen stage-1 model.
    Calibrate {
        /// Stage-1 checkpoint; trains stage 1 first when omitted.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Build and evaluate one baseline on top of a stage-1 model.
    Baseline {
        /// One of crt, lws, tau-norm, ncm, logit-adjust, tde.
        #[arg(long)]
        method: String,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// LTDS test set; defaults to the configured test set.
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
    },
    /// Calibrate once per ρ in `sweep.rhos` and tabulate the accuracies.
    SweepRho {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Compare each stage-1 sampler with the balanced-data bound head.
    BoundStudy,
    /// Export re-weighting coefficients per class for each ρ in `sweep.rhos`.
    WeightCurve,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let rendered = e.to_string();
            let mut lines = rendered.lines().map(str::trim).filter(|l| !l.is_empty());
            eprintln!("{}", lines.next().unwrap_or("error: invalid arguments"));
            if let Some(usage) = lines.find(|l| l.starts_with("Usage:")) {
                eprintln!("{usage}");
            }
            return ExitCode::from(2);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
