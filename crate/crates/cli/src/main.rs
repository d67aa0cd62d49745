//! `langshift`: continual pre-training experiments from one manifest.

mod commands;
mod manifest;
mod pipeline;

use std::process::ExitCode;

use clap::Parser;

use langshift_core::Error as CoreError;
use manifest::ValidationError;

/// Exit status for validation and configuration problems.
const EXIT_INVALID: u8 = 1;
/// Exit status for failures while doing the work.
const EXIT_RUNTIME: u8 = 2;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ValidationError>().is_some() {
            return EXIT_INVALID;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Config(_) | CoreError::Input(_) | CoreError::Parse { .. } | CoreError::Parameter(_) => {
                    EXIT_INVALID
                }
                CoreError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_INVALID,
                _ => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}

fn main() -> ExitCode {
    let cli = match commands::Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INVALID)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
