//! `dynfield` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid
//! configuration or input data, 4 missing file or I/O failure.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "DYNFIELD_THREADS";

#[derive(Parser, Debug)]
#[command(name = "dynfield", version, about = "Dynamic radiance fields with mask-guided depth refinement")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: $DYNFIELD_THREADS, else all logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with reference depths.
    Synth(SynthArgs),
    /// Fit a model to a dataset.
    Train(TrainArgs),
    /// Render one frame from a checkpoint.
    Render(RenderArgs),
    /// Refine a dataset's depths against a checkpoint's predictions.
    Refine(RefineArgs),
    /// Score a checkpoint against a dataset's images.
    Eval(EvalArgs),
    /// Back-project a rendered frame to a PLY point cloud.
    ExportCloud(ExportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TimeRuleArg {
    /// t = i / T
    IndexOverCount,
    /// t = (i - 1) / (T - 1)
    Span,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Scene description (JSON); the bundled scene when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Tool boxes (JSON list of {frame, u0, v0, u1, v1}) for frames without masks.
    #[arg(long)]
    pub boxes: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub time_rule: Option<TimeRuleArg>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Training configuration (JSON); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log path (default: <out>.log.tsv).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Write the refined supervision depths to this directory.
    #[arg(long)]
    pub refined_depth: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_rays: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub refine_at: Option<usize>,
    #[arg(long)]
    pub no_refine: bool,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub t: f64,
    /// `.png` writes the image, `.pfm` the depth map.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the depth map (PFM) here.
    #[arg(long)]
    pub depth_out: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    /// Comma-separated frame numbers to score (default: all).
    #[arg(long, value_delimiter = ',')]
    pub frames: Option<Vec<usize>>,
    /// Row label in the report.
    #[arg(long, default_value = "dynfield")]
    pub label: String,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub t: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::config(format!("{THREADS_ENV} must be a thread count, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Synth(a) => commands::synth(a, seed),
        Command::Train(a) => commands::train(a, seed),
        Command::Render(a) => commands::render(a),
        Command::Refine(a) => commands::refine(a),
        Command::Eval(a) => commands::eval(a),
        Command::ExportCloud(a) => commands::export_cloud(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { error::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message.replace('\n', " "));
            ExitCode::from(e.code)
        }
    }
}
