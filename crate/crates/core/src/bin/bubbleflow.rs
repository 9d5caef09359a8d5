use std::process::ExitCode;

use bubbleflow::cli::{run, Cli};
use bubbleflow::Error;
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(reports) => {
            for r in &reports {
                eprintln!("{}: {} checks passed", r.suite, r.checks.len());
            }
            ExitCode::SUCCESS
        }
        Err(e @ Error::SuiteFailure { .. }) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
