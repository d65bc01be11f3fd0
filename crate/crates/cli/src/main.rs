mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::commands::Failure;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Check(c) => commands::check(c),
        Command::Certify(c) => commands::certify(c),
        Command::Sweep(c) => commands::sweep(c),
        Command::Simulate(c) => commands::simulate(c),
        Command::Compare(c) => commands::compare(c),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code as u8)
        }
    }
}
