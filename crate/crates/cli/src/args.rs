use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sgks::diag::{DiagConfig, DiagSettings};
use sgks::strategy::StrategyRegistry;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "sgks", version, about = "Spectral diagnostics and kill-switch gate for attention traces")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Laplacian {
    Sym,
    Rw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Aggregation {
    Uniform,
    Mass,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Early layer window, `a:b` or a comma list.
    #[arg(long, global = true)]
    pub window: Option<String>,

    /// High-band cutoff, `mass:<percent>` or `count:<fraction>`.
    #[arg(long, global = true)]
    pub cutoff: Option<String>,

    #[arg(long, global = true, value_enum)]
    pub laplacian: Option<Laplacian>,

    /// Head aggregation scheme.
    #[arg(long = "agg", global = true, value_enum)]
    pub aggregation: Option<Aggregation>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// JSON run configuration; explicit flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for batch commands (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a labelled synthetic dataset (SGKT files plus manifest.json) into `--out`.
    Synth(SynthArgs),
    /// Per-trace early-window summaries, or per-layer diagnostics.
    Diag(DiagArgs),
    /// Fit thresholds from labelled early-window scores.
    Calibrate(CalibrateArgs),
    /// Classify a single trace.
    Verify(VerifyArgs),
    /// Run kill-switch episodes over fixture traces and append an audit log.
    Gate(GateArgs),
    /// Cutoff, window or variant robustness report.
    Sweep(SweepArgs),
    /// Bootstrap CI, permutation p-value and BH-FDR for paired contrasts.
    Stats(StatsArgs),
    /// Latency of the diagnostic path.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 59)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub tokens: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    #[arg(long, default_value_t = 0)]
    pub hidden_dim: usize,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    /// A manifest.json, a directory containing one, or a single .sgkt file.
    pub input: PathBuf,
    /// Emit one row per layer instead of per-trace window means.
    #[arg(long)]
    pub per_layer: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Scores from `diag` (CSV or JSON) with labels.
    pub scores: PathBuf,
    /// Separate holdout scores; otherwise a stratified half split is used.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    #[arg(long, default_value_t = 0.15)]
    pub q: f64,
    #[arg(long, default_value_t = 0.05)]
    pub ece_target: f64,
    #[arg(long, default_value = "unknown")]
    pub model_id: String,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub trace: PathBuf,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChainMode {
    Halt,
    Backtrack,
}

#[derive(Debug, Args)]
pub struct GateArgs {
    /// Fixture manifest with question_id / ctx_id entries.
    pub manifest: PathBuf,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// JSONL audit log to append to.
    #[arg(long)]
    pub audit: PathBuf,
    /// Questions to run, in order; all questions in the manifest by default.
    #[arg(long = "question")]
    pub questions: Vec<String>,
    /// Treat the questions as one multi-step chain.
    #[arg(long, value_enum)]
    pub chain: Option<ChainMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Cutoff,
    Window,
    Variant,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "cutoff")]
    pub axis: Axis,
    /// Mass cutoffs in percent for the cutoff axis.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Windows for the window axis, separated by ';' (e.g. "1:4;2:5;3:6").
    #[arg(long)]
    pub windows: Option<String>,
    #[arg(long, default_value_t = 2000)]
    pub resamples: usize,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// CSV with columns contrast,a,b (one row per pair).
    pub input: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub shuffles: usize,
    #[arg(long, default_value_t = 2000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.05)]
    pub fdr: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
    pub t_grid: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub heads: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 20)]
    pub post_repeats: usize,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub diag: Option<DiagSettings>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub format: Option<Format>,
    pub thresholds: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(sgks::Error::from)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Settings after applying flags over the config file over defaults.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub diag: DiagConfig,
    pub seed: u64,
    pub workers: Option<usize>,
    pub format: Format,
    pub thresholds: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn resolve(common: &CommonArgs) -> Result<Resolved, CliError> {
    let file = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut settings = file.diag.unwrap_or_default();
    if let Some(w) = &common.window {
        settings.window = w.clone();
    }
    if let Some(c) = &common.cutoff {
        settings.cutoff = c.clone();
    }
    if let Some(l) = common.laplacian {
        settings.laplacian = match l {
            Laplacian::Sym => "sym",
            Laplacian::Rw => "rw",
        }
        .into();
    }
    if let Some(a) = common.aggregation {
        settings.aggregation = match a {
            Aggregation::Uniform => "uniform",
            Aggregation::Mass => "mass",
        }
        .into();
    }
    let diag = settings.resolve(&StrategyRegistry::builtin())?;
    Ok(Resolved {
        diag,
        seed: common.seed.or(file.seed).unwrap_or(0),
        workers: common.workers.or(file.workers),
        format: common.format.or(file.format).unwrap_or(Format::Csv),
        thresholds: file.thresholds,
        out: common.out.clone(),
    })
}
