use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lerp_cli::{cmd_eval, cmd_explain, cmd_generate, cmd_train, CliResult, Overrides, RunConfig};

/// Label-dependent, event-guided risk prediction from clinical notes.
#[derive(Parser)]
#[command(name = "lerp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with planted trigger words.
    Generate(Overrides),
    /// Train a model and write checkpoint, log and validation metrics.
    Train(Overrides),
    /// Score a dataset with a checkpoint; metrics JSON goes to stdout.
    Eval(Overrides),
    /// Write per-record attention reports (JSON and HTML).
    Explain(Overrides),
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(o) => cmd_generate(&RunConfig::from_overrides(&o)?),
        Command::Train(o) => cmd_train(&RunConfig::from_overrides(&o)?).map(|_| ()),
        Command::Eval(o) => cmd_eval(&RunConfig::from_overrides(&o)?).map(|json| print!("{json}")),
        Command::Explain(o) => cmd_explain(&RunConfig::from_overrides(&o)?).map(|paths| {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
        }),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
