use clap::{Parser, Subcommand};
use stage_audit::{stages, CliError, ExperimentConfig, StageOptions, StageOutcome};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "stage-audit", version, about = "Attribute-sensitivity benchmarks for 3D pose estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Print the planned work without writing anything.
    #[arg(long)]
    dry_run: bool,
    /// Continue a partially written manifest or prediction store.
    #[arg(long)]
    resume: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Select a diverse, label-balanced pose subset from the corpus.
    SamplePoses(Common),
    /// Render depth, semantic and skeleton conditioning for each pose.
    RenderConditions(Common),
    /// Generate and filter base/attribute image pairs.
    Generate(Common),
    /// Run the estimator on every valid image pair.
    Predict(Common),
    /// Score predictions and write reports.
    Evaluate(Common),
    /// Generate single images with per-pose prompt slots.
    Replica(Common),
}

fn run(cli: Cli) -> Result<StageOutcome, CliError> {
    let (common, stage): (&Common, fn(&ExperimentConfig, &StageOptions) -> _) = match &cli.command {
        Command::SamplePoses(c) => (c, stages::sample_poses),
        Command::RenderConditions(c) => (c, stages::render_conditions),
        Command::Generate(c) => (c, stages::generate),
        Command::Predict(c) => (c, stages::predict),
        Command::Evaluate(c) => (c, stages::evaluate),
        Command::Replica(c) => (c, stages::replica),
    };
    let cfg = ExperimentConfig::load(&common.config)?;
    stage(
        &cfg,
        &StageOptions {
            dry_run: common.dry_run,
            resume: common.resume,
            stop_after_cells: None,
        },
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(outcome) => {
            println!("{}", outcome.message());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
