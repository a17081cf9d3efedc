mod analyze;
mod evaluate;
mod opts;
mod output;
mod overlay;
mod rank;
mod synth;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

/// Whole-slide eosinophil counting and peak-field search.
#[derive(Parser, Debug)]
#[command(name = "eoswsi", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analyze one or more slides and write per-slide reports.
    Analyze(analyze::AnalyzeArgs),
    /// Score predictions against ground truth.
    Evaluate(evaluate::EvaluateArgs),
    /// Generate synthetic slides with known ground truth.
    Synth(synth::SynthArgs),
    /// Rank slides from existing reports by peak count.
    Rank(rank::RankArgs),
    /// Render a mask and field overlay for one slide.
    Overlay(overlay::OverlayArgs),
}

/// How a command ended, mapped onto the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Partial,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations; nothing was read or written.
    Usage(String),
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 64,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<eoswsi_core::Error> for CliError {
    fn from(e: eoswsi_core::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

pub type CliResult = Result<Outcome, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ExitCode::SUCCESS,
                _ => ExitCode::from(64),
            };
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => analyze::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Synth(a) => synth::run(a),
        Command::Rank(a) => rank::run(a),
        Command::Overlay(a) => overlay::run(a),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(2),
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("usage error: {m}"),
                CliError::Failed(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(e.code())
        }
    }
}
