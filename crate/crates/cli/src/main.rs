//! `dxtext` command-line tool.
//!
//! Exit codes: 0 success, 2 invalid configuration or input (including
//! out-of-vocabulary tokens), 3 I/O failure, 4 internal error.

mod args;
mod commands;
mod config;
mod failure;
mod output;

use std::panic;
use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    panic::set_hook(Box::new(|info| eprintln!("dxtext: internal error: {info}")));
    let code = match panic::catch_unwind(|| commands::run(cli)) {
        Ok(Ok(())) => 0,
        Ok(Err(f)) => {
            eprintln!("dxtext: {f}");
            f.code
        }
        Err(_) => failure::EXIT_INTERNAL,
    };
    ExitCode::from(code as u8)
}
