mod commands;
mod log;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use skvg::config::RunConfig;

#[derive(Parser)]
#[command(name = "skvg", version, about = "Scene-knowledge visual grounding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(short, long, global = true, default_value = "skvg.toml")]
    config: PathBuf,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write a synthetic corpus.
    Generate,
    /// Corpus statistics.
    Stats,
    /// Train one model and save a checkpoint.
    Train,
    /// Evaluate a checkpoint.
    Eval,
    /// Compare analytic and numeric gradients of both models.
    Gradcheck,
    /// Train and evaluate every configured cell.
    Matrix,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Stats => "stats",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Gradcheck => "gradcheck",
            Command::Matrix => "matrix",
        }
    }
}

fn run(cli: &Cli) -> skvg::Result<()> {
    let cfg = RunConfig::load(&cli.config)?.resolve()?;
    if let Some(n) = cfg.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| skvg::Error::Config(e.to_string()))?;
    }
    log::event(
        "start",
        json!({ "command": cli.command.name(), "config": cli.config.display().to_string(), "seed": cfg.seed }),
    );
    match cli.command {
        Command::Generate => commands::generate_cmd(&cfg),
        Command::Stats => commands::stats_cmd(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Eval => commands::eval_cmd(&cfg),
        Command::Gradcheck => commands::gradcheck_cmd(&cfg),
        Command::Matrix => commands::matrix_cmd(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => {
            log::event("done", json!({ "command": cli.command.name() }));
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::event(
                "error",
                json!({ "command": cli.command.name(), "message": e.to_string() }),
            );
            ExitCode::FAILURE
        }
    }
}
