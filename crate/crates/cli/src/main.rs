//! Command-line entry point: data generation, training, evaluation,
//! gradient checking, rendering, and inspection.

mod commands;
mod runconfig;

use clap::{Parser, Subcommand};

/// Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 check failure.
const EXIT_USAGE: i32 = 1;
const EXIT_DATA: i32 = 2;
const EXIT_CHECK: i32 = 3;

#[derive(Parser)]
#[command(name = "canonlift", version, about = "Symmetry-aware multi-view voxel aggregation tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural dataset directory.
    GenData(commands::GenDataArgs),
    /// Train a model on a generated dataset.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(commands::EvalArgs),
    /// Finite-difference check every registered differentiable op.
    Gradcheck(commands::GradcheckArgs),
    /// Render novel views from a checkpoint.
    Render(commands::RenderArgs),
    /// Saliency back-tracing and correspondence overlays.
    Inspect(commands::InspectArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not errors.
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{err}");
                std::process::exit(0);
            }
            eprint!("{err}");
            std::process::exit(EXIT_USAGE);
        }
    };
    let outcome = match cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
        Command::Render(args) => commands::render(args),
        Command::Inspect(args) => commands::inspect(args),
    };
    match outcome {
        Ok(()) => {}
        Err(commands::CliError::CheckFailed(msg)) => {
            eprintln!("{msg}");
            std::process::exit(EXIT_CHECK);
        }
        Err(commands::CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(EXIT_USAGE);
        }
        Err(commands::CliError::Core(err)) => {
            eprintln!("error: {err}");
            let code = match &err {
                canonlift::Error::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
            std::process::exit(code);
        }
    }
}
