use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = sensaudit_cli::Cli::parse();
    match sensaudit_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
