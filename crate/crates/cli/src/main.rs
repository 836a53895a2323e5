use std::process::ExitCode;

use clap::Parser;
use rboost::run::{emit, execute};
use rboost::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command.resolve().and_then(execute) {
        Ok(summary) => {
            emit(std::io::stdout(), &summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            emit(std::io::stderr(), &e.record());
            ExitCode::from(e.exit_code())
        }
    }
}
