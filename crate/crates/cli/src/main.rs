//! `bridge-mtl`: dataset tooling, training, evaluation, the variant grid,
//! inference and benchmarks.
//!
//! Exit status is 0 on success, 1 for usage or validation errors and 2 for
//! runtime failures.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err
        .chain()
        .filter_map(|e| e.downcast_ref::<bridge_mtl::Error>())
        .any(bridge_mtl::Error::is_validation);
    if validation {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
