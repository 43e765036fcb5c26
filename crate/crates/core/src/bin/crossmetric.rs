use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crossmetric::config::PipelineConfig;
use crossmetric::pipeline;

#[derive(Parser)]
#[command(
    name = "crossmetric",
    about = "Cross-media retrieval: train, evaluate, report"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Pipeline config (TOML). Defaults to the built-in synthetic setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for this run's artifacts.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (feature files, splits, manifest).
    Synth(CommonArgs),
    /// Run the training stages and write checkpoints plus a run manifest.
    Train(CommonArgs),
    /// Score the test split and write MAP / PR reports into <out>/eval.
    Eval(CommonArgs),
    /// Summarize completed runs found under <out> into comparison tables.
    Report(CommonArgs),
}

fn load_config(args: &CommonArgs) -> crossmetric::Result<(PipelineConfig, PathBuf)> {
    let (mut config, base_dir) = match &args.config {
        Some(path) => {
            let base = path
                .parent()
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("."));
            (PipelineConfig::load(path)?, base)
        }
        None => (PipelineConfig::synthetic_default(), PathBuf::from(".")),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok((config, base_dir))
}

fn run(cli: Cli) -> crossmetric::Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let (config, _) = load_config(&args)?;
            pipeline::run_synth(&config, &args.out)?;
            println!("wrote dataset to {}", args.out.display());
        }
        Command::Train(args) => {
            let (config, base_dir) = load_config(&args)?;
            let output = pipeline::run_train(&config, &base_dir, &args.out)?;
            println!(
                "trained: pretrain {} iters, finetune {} iters, metric {} iters",
                output.pretrain_history.len(),
                output.finetune_history.len(),
                output.metric_history.len()
            );
            println!("manifest: {}", output.manifest_path.display());
        }
        Command::Eval(args) => {
            let (config, base_dir) = load_config(&args)?;
            let output = pipeline::run_eval(&config, &base_dir, &args.out)?;
            print!("{}", pipeline::render_map_summary(&output));
        }
        Command::Report(args) => {
            let report = pipeline::run_report(&args.out)?;
            print!("{report}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
