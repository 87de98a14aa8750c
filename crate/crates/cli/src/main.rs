//! `hermes` batch command line.
//!
//! ```text
//! hermes synth     --out DIR             prices.csv, industries.csv, ground_truth.json
//! hermes train     --out DIR             checkpoint, metrics, predictions, training log
//! hermes eval      --out DIR             re-evaluate a checkpoint on the test split
//! hermes gradcheck                       finite-difference check of the full model
//! ```
//!
//! Every command takes `--config PATH`, repeated `--set KEY=VALUE` and
//! `--seed N`. Log verbosity comes from `HERMES_LOG` (env_logger syntax).
//! Exit codes: 0 ok, 1 configuration or I/O error, 2 numeric failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "hermes", version, about = "Hypergraph stock forecaster: synth, train, eval, gradcheck")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "hermes-out")]
    out: PathBuf,
    /// Dotted override, e.g. `train.epochs=20`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Overrides `seed` and `synth.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic market.
    Synth,
    /// Train, select by validation IC, evaluate on the test split.
    Train {
        /// Also write attention mass and fusion affinity to diagnostics.json.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Evaluate a checkpoint; refuses when its config hash differs.
    Eval {
        /// Defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare autodiff gradients with central differences.
    Gradcheck,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let c = &cli.common;
    let cfg = RunConfig::load(c.config.as_deref(), &c.set, c.seed)?;
    match cli.command {
        Command::Synth => commands::synth(&cfg, &c.out),
        Command::Train { diagnostics } => commands::train_run(&cfg, &c.out, diagnostics),
        Command::Eval { checkpoint } => {
            let ckpt = checkpoint.unwrap_or_else(|| c.out.join(commands::CHECKPOINT));
            commands::eval_run(&cfg, &ckpt, &c.out)
        }
        Command::Gradcheck => commands::gradcheck(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HERMES_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[config]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
