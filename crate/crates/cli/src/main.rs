//! `dpsft`: run private subspace fine-tuning experiments from config files.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dpsft", version, about = "Differentially private subspace fine-tuning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Key-value run config
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set privacy.epsilon=4` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; defaults to `$DPSFT_OUTPUT_ROOT/<command>-<fingerprint>`
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// More log output (repeatable)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Smallest noise multiplier meeting an (epsilon, delta) target
    Calibrate(CalibrateArgs),
    /// Write a synthetic low-rank task as CSV splits
    GenData(GenDataArgs),
    /// Non-private Adam baseline
    Nondp,
    /// Full-space private training (DP-SGD with Adam)
    Dpsgd,
    /// Trajectory recording and subspace extraction only
    Stage1,
    /// Private subspace training from a saved checkpoint and projection
    Stage2,
    /// Both stages, budget split by `privacy.p1`
    Pipeline,
    /// Subspace from a public source task, private training on the target
    Transfer(TransferArgs),
    /// Private trajectory vs public trajectory vs full-space training
    AblateNoisy,
    /// Aggregate summary records across runs into CSV
    Report(ReportArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    /// Sampling rate q
    #[arg(long)]
    q: f64,
    #[arg(long)]
    steps: u64,
    /// `improved` or `classic` RDP conversion
    #[arg(long, default_value = "improved")]
    conversion: String,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 5000)]
    n_train: usize,
    #[arg(long, default_value_t = 1000)]
    n_val: usize,
    #[arg(long, default_value_t = 0)]
    n_public: usize,
    #[arg(long, default_value_t = 512)]
    input_dim: usize,
    #[arg(long, default_value_t = 8)]
    informative_dim: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    #[arg(long, default_value_t = 1.0)]
    signal_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f64,
    /// Seed of the shared informative frame; tasks with equal frame seeds share a subspace
    #[arg(long, default_value_t = 0)]
    frame_seed: u64,
}

/// Each side is either a run config or a CSV dataset. A CSV replaces `data.train` of the
/// `--config` base (for the source, it also becomes the only stage-1 data).
#[derive(Args)]
struct TransferArgs {
    /// Public source task (config or CSV)
    #[arg(long)]
    source: PathBuf,
    /// Private target task (config or CSV)
    #[arg(long)]
    target: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum Aggregate {
    /// Collapse runs differing only in seed to mean ± standard deviation
    Seeds,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories, searched recursively for metrics.jsonl
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    #[arg(long, value_enum)]
    aggregate: Option<Aggregate>,
    /// CSV copy of the table
    #[arg(long, default_value = "report.csv")]
    csv: PathBuf,
}

/// A problem with the invocation or the config rather than with the run itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();

    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if commands::is_usage_error(&e) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
