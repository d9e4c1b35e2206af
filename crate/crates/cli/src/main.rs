// SPDX-License-Identifier: MIT OR Apache-2.0

//! `neuronpath`: every experiment of the laboratory as a subcommand.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, missing or
//! malformed files), 2 on numeric failures and failed verification.

use std::process::ExitCode;

use clap::Parser;

use neuronpath_cli::args::Cli;
use neuronpath_cli::commands::{self, Status};

const EXIT_USAGE: u8 = 1;
const EXIT_FAILURE: u8 = 2;

fn exit_code(err: &anyhow::Error) -> u8 {
    use neuronpath::Error as E;
    match err.chain().find_map(|e| e.downcast_ref::<E>()) {
        Some(E::Numeric(_) | E::OracleFailure(_) | E::Training { .. }) => EXIT_FAILURE,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.common.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match commands::execute(&cli) {
        Ok((Status::Ok, _)) => ExitCode::SUCCESS,
        Ok((Status::Failed, _)) => ExitCode::from(EXIT_FAILURE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
