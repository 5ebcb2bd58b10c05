//! The `eat` command line: `gen`, `train`, `entropy-sweep`, `eat-search`,
//! `perturb-search` and `report`.
//!
//! Every command writes into one output directory and leaves exactly one
//! `manifest.json` there. Exit codes: 0 success, 1 runtime failure, 2
//! configuration or usage error.

mod commands;
mod manifest;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use commands::{PerturbRunConfig, SweepConfig, TestReport, TrainRunConfig, ModelShape};
pub use manifest::{digest_files, RunManifest, MANIFEST_FILE};
pub use report::{rank_summary, RankRow, ReportRow};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "EAT_OUT_ROOT";
const DEFAULT_OUT_ROOT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "eat", version, about = "Attention temperature scaling for fairer toy transformer classifiers")]
pub struct Cli {
    /// Worker threads; results do not depend on this
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the corpus splits and paired templates
    Gen(GenArgs),
    /// Train a classifier on a generated corpus
    Train(TrainArgs),
    /// Attention entropy, AUC and DP across a temperature grid
    EntropySweep(SweepArgs),
    /// Select the attention temperature on validation, report on test
    EatSearch(SearchArgs),
    /// Random weight-perturbation baseline under the same selection rule
    PerturbSearch(PerturbArgs),
    /// Compare test results of several runs
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config, or a manifest.json from an earlier run
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $EAT_OUT_ROOT/<command>]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory of `gen`
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Weights file, or the output directory of `train`
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated temperatures, e.g. `0,0.5,1,2`
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, value_enum)]
    pub split: Option<Split>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub max_auc_degradation: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Base seed of the noise draws
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directories of `train`, `eat-search` or `perturb-search`
    pub runs: Vec<PathBuf>,
}

/// Failure classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e:#}"),
            Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

pub(crate) trait Classify<T> {
    fn config_err(self) -> Result<T, Failure>;
    fn runtime_err(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn runtime_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

pub(crate) fn config_failure(msg: impl Into<String>) -> Failure {
    Failure::Config(anyhow::anyhow!(msg.into()))
}

pub(crate) fn runtime_failure(msg: impl Into<String>) -> Failure {
    Failure::Runtime(anyhow::anyhow!(msg.into()))
}

/// Output directory: the flag, else `$EAT_OUT_ROOT/<command>`, else
/// `runs/<command>`.
pub fn out_dir(flag: Option<&Path>, command: &str) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| DEFAULT_OUT_ROOT.into());
            root.join(command)
        }
    }
}

/// Reads a TOML config, or the `config` of a manifest when the path ends in
/// `.json`. Returns the manifest too so its inputs can fill missing flags.
pub fn load_config<T: DeserializeOwned + Default>(
    path: Option<&Path>,
) -> Result<(T, Option<RunManifest>), Failure> {
    let Some(path) = path else {
        return Ok((T::default(), None));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_failure(format!("reading {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| config_failure(format!("parsing manifest {}: {e}", path.display())))?;
        let cfg = serde_json::from_value(m.config.clone())
            .map_err(|e| config_failure(format!("manifest {} config: {e}", path.display())))?;
        Ok((cfg, Some(m)))
    } else {
        let cfg = toml::from_str(&text).map_err(|e| config_failure(format!("parsing {}: {e}", path.display())))?;
        Ok((cfg, None))
    }
}

pub fn execute(cli: Cli) -> Result<(), Failure> {
    let run = || match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::EntropySweep(a) => commands::entropy_sweep(a),
        Command::EatSearch(a) => commands::eat_search(a),
        Command::PerturbSearch(a) => commands::perturb_search(a),
        Command::Report(a) => report::report(a),
    };
    match cli.threads {
        Some(0) => Err(config_failure("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().runtime_err()?.install(run),
        None => run(),
    }
}

/// Parses the process arguments, runs, and maps the outcome to an exit code.
pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
