use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpolicy_cli::commands::{cmd_eval, cmd_gen_data, cmd_plot, cmd_train, EvalOptions, TrainOptions};
use dpolicy_cli::config::EVAL_SEED_FLOOR;
use dpolicy_cli::verify::{cmd_verify, VerifyOptions};
use dpolicy_cli::CliResult;

#[derive(Parser)]
#[command(name = "dpolicy", version, about = "Diffusion policies for procedurally generated mazes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the scripted expert and store the demonstrations.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train (or continue training) a policy on a demonstration store.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Trainer checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Closed-loop evaluation on held-out maze seeds.
    Eval {
        /// Policy checkpoint; omit to evaluate the scripted expert.
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long, default_value_t = EVAL_SEED_FLOOR)]
        seed: u64,
        /// Per-episode CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the gradient, invariant and determinism checks.
    Verify,
    /// Render metrics.csv as an SVG chart.
    Plot {
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData { config, out, force } => cmd_gen_data(&config, &out, force).map(drop),
        Command::Train {
            config,
            data,
            out,
            resume,
        } => cmd_train(&TrainOptions {
            config: &config,
            data: &data,
            out: &out,
            resume: resume.as_deref(),
        })
        .map(drop),
        Command::Eval {
            checkpoint,
            config,
            episodes,
            seed,
            out,
        } => cmd_eval(&EvalOptions {
            checkpoint: checkpoint.as_deref(),
            config: &config,
            episodes,
            seed,
            csv: out.as_deref(),
        })
        .map(drop),
        Command::Verify => cmd_verify(VerifyOptions::default()).map(drop),
        Command::Plot { metrics, out } => cmd_plot(&metrics, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
