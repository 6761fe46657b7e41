//! `rlvr`: difficulty filtering, GRPO training and evaluation on multiple-choice data.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "rlvr", version, about = "GRPO with verifiable rewards on multiple-choice tasks", after_help = exit::HELP)]
struct Cli {
    /// Run configuration (JSON). Flags override values from the file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for sampling and selection; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Emit extra JSON event lines on stdout.
    #[arg(long, short, global = true)]
    verbose: bool,

    /// Results subdirectory name; defaults to a timestamp plus a config digest.
    #[arg(long, global = true, value_name = "ID")]
    run_id: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Label a pool Easy/Hard with a filter model and select a training set.
    Filter(FilterArgs),
    /// Train the linear policy with GRPO; streams one JSON object per step.
    Train(TrainArgs),
    /// Evaluate a checkpoint on datasets and write comparison reports.
    Eval(EvalArgs),
    /// Build a comparison report from saved evaluation results.
    Report(ReportArgs),
    /// Write a seeded synthetic multiple-choice dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResponderKind {
    /// Greedy answers from a policy checkpoint (zero policy when none is given).
    Internal,
    /// The chat-completions endpoint from the config.
    Endpoint,
    /// Canned responses from a JSONL file of {"id", "response"}.
    Fixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Markdown,
    Csv,
    Json,
}

impl From<FormatArg> for rlvr_core::eval::ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Markdown => Self::Markdown,
            FormatArg::Csv => Self::Csv,
            FormatArg::Json => Self::Json,
        }
    }
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Candidate pool (MCQ JSONL); defaults to paths.dataset.
    #[arg(long, value_name = "FILE")]
    pub pool: Option<PathBuf>,
    /// Where to write the selected training set; defaults to the run directory.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "internal")]
    pub responder: ResponderKind,
    /// Canned responses for `--responder fixture`.
    #[arg(long, value_name = "FILE")]
    pub responses: Option<PathBuf>,
    /// Policy for `--responder internal`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Concurrent responder requests; defaults to the endpoint's max_parallel, else 4.
    #[arg(long)]
    pub max_parallel: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training set (MCQ JSONL); defaults to paths.dataset.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Number of optimizer steps; overrides grpo.total_steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Checkpoint to write; defaults to paths.checkpoint.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Initial learning rate; overrides grpo.lr_initial.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Start from this checkpoint instead of zero weights.
    #[arg(long, value_name = "FILE")]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Datasets to evaluate on; each file stem names a report column.
    #[arg(long, value_name = "FILE", num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Policy to evaluate; defaults to paths.checkpoint.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Row label for the checkpoint; defaults to its file stem.
    #[arg(long)]
    pub label: Option<String>,
    /// Row the deltas are measured against; defaults to the first row seen.
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: FormatArg,
    /// Earlier results (JSONL of evaluation results) to include in the report.
    #[arg(long, value_name = "FILE", num_args = 1..)]
    pub from_results: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results files (JSONL of evaluation results).
    #[arg(long, value_name = "FILE", num_args = 1.., required = true)]
    pub results: Vec<PathBuf>,
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: FormatArg,
    /// Also write the report to this file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub options: usize,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

/// Settings every command shares.
pub struct Context {
    pub config: RunConfig,
    pub seed: Option<u64>,
    pub verbose: bool,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    config.override_seed(cli.seed);
    config.resolve_run_id(cli.run_id)?;
    let ctx = Context {
        config,
        seed: cli.seed,
        verbose: cli.verbose,
    };
    match cli.command {
        Command::Filter(args) => commands::filter(ctx, args),
        Command::Train(args) => commands::train(ctx, args),
        Command::Eval(args) => commands::eval(ctx, args),
        Command::Report(args) => commands::report(ctx, args),
        Command::Synth(args) => commands::synth(ctx, args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version go to stdout.
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record = serde_json::json!({
                "error": "usage",
                "message": e.to_string().trim_end(),
                "exit_code": exit::USAGE,
            });
            eprintln!("{record}");
            return ExitCode::from(exit::USAGE as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, record) = exit::classify(&err);
            eprintln!("{record}");
            ExitCode::from(code as u8)
        }
    }
}
