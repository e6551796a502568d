//! `smaml` - train and compare few-shot meta-learning methods.
//!
//! Exit codes: 0 success, 2 usage/configuration error, 3 I/O or data error,
//! 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smaml_cli::{compare_methods, render_comparison, run_experiment, RunConfig};
use smaml_core::error::Error;
use smaml_core::meta::Method;

#[derive(Parser)]
#[command(
    name = "smaml",
    version,
    about = "Few-shot meta-learning with orthonormal weight constraints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one method; writes metrics.csv, config.txt, and checkpoint.txt
    Run(RunArgs),
    /// Train several methods on identical task sequences; also writes a
    /// merged comparison.csv
    Compare(CompareArgs),
}

/// Flags mirror config-file keys; a flag wins over the file, which wins over
/// the built-in defaults.
#[derive(Args)]
struct RunArgs {
    /// Config file of `key = value` lines applied before any flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// maml | fomaml | smaml | fo-smaml
    #[arg(long)]
    method: Option<String>,
    /// first | second (defaults to the method's natural order)
    #[arg(long)]
    order: Option<String>,
    /// Classes per episode
    #[arg(long)]
    ways: Option<usize>,
    /// Support examples per class
    #[arg(long)]
    shots: Option<usize>,
    /// Query examples per class
    #[arg(long)]
    query: Option<usize>,
    /// Inner-loop adaptation steps K
    #[arg(long)]
    inner_steps: Option<usize>,
    /// Inner-loop step size
    #[arg(long)]
    alpha: Option<f64>,
    /// Meta step size
    #[arg(long)]
    beta: Option<f64>,
    /// Meta-training iterations
    #[arg(long)]
    episodes: Option<usize>,
    /// Evaluate every this many iterations
    #[arg(long)]
    eval_every: Option<usize>,
    /// Held-out tasks per evaluation
    #[arg(long)]
    eval_tasks: Option<usize>,
    /// Tasks per meta-update
    #[arg(long)]
    task_batch: Option<usize>,
    /// Base seed; derives all task and initialization randomness
    #[arg(long)]
    seed: Option<u64>,
    /// gaussian | gaussian-wide | sinusoid | folder:PATH
    #[arg(long)]
    dataset: Option<String>,
    /// TRAIN:TEST pair of family specs for cross-family evaluation
    #[arg(long)]
    scenario: Option<String>,
    /// Fraction of folder classes used for meta-training
    #[arg(long)]
    split: Option<f64>,
    /// File naming the meta-train classes, one per line
    #[arg(long)]
    split_classes: Option<PathBuf>,
    /// Proximal kernel weight (0 disables the proximal term)
    #[arg(long)]
    kernel_mu: Option<f64>,
    /// Proximal kernel bandwidth
    #[arg(long)]
    kernel_lambda: Option<f64>,
    /// Comma-separated hidden widths, e.g. 32 or 64,32
    #[arg(long)]
    hidden: Option<String>,
    /// tanh | relu
    #[arg(long)]
    activation: Option<String>,
    /// Output directory for run artifacts
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Comma-separated methods to train, e.g. maml,smaml
    #[arg(long, default_value = "maml,smaml")]
    methods: String,
    #[command(flatten)]
    run: RunArgs,
}

fn build_config(args: &RunArgs) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    let flag_pairs: [(&str, Option<String>); 21] = [
        ("method", args.method.clone()),
        ("order", args.order.clone()),
        ("ways", args.ways.map(|v| v.to_string())),
        ("shots", args.shots.map(|v| v.to_string())),
        ("query", args.query.map(|v| v.to_string())),
        ("inner-steps", args.inner_steps.map(|v| v.to_string())),
        ("alpha", args.alpha.map(|v| v.to_string())),
        ("beta", args.beta.map(|v| v.to_string())),
        ("episodes", args.episodes.map(|v| v.to_string())),
        ("eval-every", args.eval_every.map(|v| v.to_string())),
        ("eval-tasks", args.eval_tasks.map(|v| v.to_string())),
        ("task-batch", args.task_batch.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("dataset", args.dataset.clone()),
        ("scenario", args.scenario.clone()),
        ("split", args.split.map(|v| v.to_string())),
        (
            "split-classes",
            args.split_classes
                .as_ref()
                .map(|p| p.display().to_string()),
        ),
        ("kernel-mu", args.kernel_mu.map(|v| v.to_string())),
        ("kernel-lambda", args.kernel_lambda.map(|v| v.to_string())),
        ("hidden", args.hidden.clone()),
        ("activation", args.activation.clone()),
    ];
    for (key, value) in flag_pairs {
        if let Some(value) = value {
            cfg.apply_kv(key, &value)?;
        }
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn parse_methods(spec: &str) -> Result<Vec<Method>, Error> {
    spec.split(',')
        .map(|m| m.trim().parse::<Method>())
        .collect()
}

fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::InvalidConfig(_) => 2,
        Error::Io { .. } | Error::Dataset(_) | Error::Checkpoint(_) => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => build_config(args).and_then(|cfg| {
            let summary = run_experiment(&cfg)?;
            println!(
                "wrote {}, {}, {}",
                summary.config_path.display(),
                summary.csv_path.display(),
                summary.checkpoint_path.display()
            );
            Ok(())
        }),
        Command::Compare(args) => build_config(&args.run).and_then(|cfg| {
            let methods = parse_methods(&args.methods)?;
            let summary = compare_methods(&cfg, &methods)?;
            print!("{}", render_comparison(&summary));
            println!("wrote {}", summary.csv_path.display());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
