//! `sidenoise`: dataset synthesis, training, denoising and evaluation.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime or data
//! error.

mod cli;
mod commands;
mod output;
mod plot;

use std::process::ExitCode;

use clap::Parser;
use silence_denoise::Error;

use cli::{Cli, Command};
use output::UsageError;

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Argument(_)) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Label(a) => commands::label(a),
        Command::Train(a) => commands::train(a),
        Command::Denoise(a) => commands::denoise(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Perturb(a) => commands::perturb(a),
        Command::SidEval(a) => commands::sid_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
