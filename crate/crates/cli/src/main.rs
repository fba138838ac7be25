//! `ecoglc`: synthetic ECoG generation, feature extraction, decoder training,
//! dataset-size experiments, learning-curve fits and manifold diagnostics.

mod commands;
mod config;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

/// Caller mistakes: bad flags, unusable configuration, wrong paths.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "ecoglc", version, about = "Synthetic ECoG decoding and dataset-size experiments")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory, written atomically.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Re-run the command recorded in a manifest and check its outputs.
    #[arg(long, conflicts_with_all = ["config", "seed"])]
    replay: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Synthesize a multi-session dataset.
    Gen(GenArgs),
    /// Extract and cache wavelet features for every session.
    Features(FeaturesArgs),
    /// Train one decoder on a session range and test it on another.
    Train(TrainArgs),
    /// Run a dataset-size experiment.
    Experiment(ExperimentArgs),
    /// Fit the saturating power law to experiment results.
    FitCurve(FitCurveArgs),
    /// Estimate intrinsic dimensionality.
    Idim(IdimArgs),
    /// 2-D embedding and left/right separability.
    Embed(EmbedArgs),
    /// Collate output directories into one summary table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long)]
    pub sessions: Option<usize>,
    /// Seconds per session.
    #[arg(long)]
    pub length: Option<f64>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Flat schedule, no drift, no pattern rotation.
    #[arg(long)]
    pub stationary: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FeaturesArgs {
    /// Directory written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Directory written by `features`.
    #[arg(long)]
    pub features: PathBuf,
    /// rewnpls, mlp or cnn_lstm.
    #[arg(long)]
    pub decoder: Option<String>,
    /// Training sessions, 1-based inclusive, e.g. `1-5`.
    #[arg(long)]
    pub train: String,
    /// Test sessions, e.g. `6-8`.
    #[arg(long)]
    pub test: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// fi, bi, ri or translation.
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub decoder: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FitCurveArgs {
    /// `results.csv` written by `experiment`.
    #[arg(long)]
    pub results: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct IdimArgs {
    #[arg(long, value_parser = ["twonn", "ess"])]
    pub method: String,
    /// Point-cloud CSV.
    #[arg(long, conflicts_with = "features")]
    pub points: Option<PathBuf>,
    /// Feature directory; one estimate per session.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// ESS neighbourhood size.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EmbedArgs {
    #[arg(long, conflicts_with = "embedding")]
    pub features: Option<PathBuf>,
    /// Externally computed embedding CSV.
    #[arg(long)]
    pub embedding: Option<PathBuf>,
    /// Fit the SVM in the `embedding` or the `features` space.
    #[arg(long, value_parser = ["embedding", "features"])]
    pub space: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Output directories of earlier runs.
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
}

/// 1 for usage and configuration errors, 2 for data and contract errors.
fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<ecoglc_core::Error>() {
            return if e.is_usage() { 1 } else { 2 };
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::warn!("worker pool already initialised");
        }
    }
    let out = cli.out.ok_or_else(|| UsageError("--out is required".into()))?;
    if let Some(path) = cli.replay {
        if cli.command.is_some() {
            return Err(UsageError("--replay takes no subcommand".into()).into());
        }
        let recorded = output::read_manifest(&path)?;
        let fresh = commands::execute(&recorded.command, &recorded.config, &out)?;
        let diverged: Vec<String> = recorded
            .outputs
            .iter()
            .filter(|f| !fresh.outputs.contains(f))
            .map(|f| f.path.clone())
            .chain(fresh.outputs.iter().filter(|f| !recorded.outputs.contains(f)).map(|f| f.path.clone()))
            .collect();
        if !diverged.is_empty() {
            anyhow::bail!("replay diverged in {} file(s): {}", diverged.len(), diverged.join(", "));
        }
        println!("replay identical: {} output file(s)", fresh.outputs.len());
        return Ok(());
    }
    let command = cli.command.ok_or_else(|| UsageError("a subcommand is required (see --help)".into()))?;
    let mut cfg = config::load(cli.config.as_deref(), std::env::vars())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let cfg = commands::resolve(cfg, &command)?;
    commands::execute(&command, &cfg, &out)?;
    Ok(())
}

fn real_main(args: impl IntoIterator<Item = OsString>) -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn main() {
    std::process::exit(real_main(std::env::args_os()));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_exit_codes() {
        let usage: anyhow::Error = UsageError("x".into()).into();
        assert_eq!(exit_code(&usage), 1);
        let cfg: anyhow::Error = ecoglc_core::Error::Config("x".into()).into();
        assert_eq!(exit_code(&cfg), 1);
        let data: anyhow::Error = ecoglc_core::Error::Data("x".into()).into();
        assert_eq!(exit_code(&data.context("while reading")), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 2);
    }

    #[test]
    fn unknown_flag_is_usage_exit() {
        assert_eq!(real_main(["ecoglc", "gen", "--bogus"].map(OsString::from)), 1);
        assert_eq!(real_main(["ecoglc", "--help"].map(OsString::from)), 0);
    }
}
