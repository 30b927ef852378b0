//! `rfek`: solve, differentiate and invert Randers eikonal problems stored as
//! RFEK1 field files.
//!
//! Exit codes: 0 success, 2 usage or I/O error, 3 numerical failure. Standard
//! output carries only `key=value` summary lines.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use rfek_core::Error;

use args::{Cli, Command};

/// A failed command: a one-line diagnostic and its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NotConverged { .. } | Error::InconsistentFixedPoint { .. } | Error::DivergedLoss { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::from(Error::from(e))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Observe(a) => commands::observe(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Invert(a) => commands::invert(a),
        Command::Convergence(a) => commands::convergence(a),
        Command::Scenario(a) => commands::scenario(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("rfek: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
