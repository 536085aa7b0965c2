use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use ftsqa::cli::{run, Cli};
use ftsqa::Error;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.config().and_then(|cfg| run(cli.command, &cfg)) {
        Ok(outcome) => {
            // a closed stdout (e.g. piped into `head`) is not an error
            let _ = writeln!(std::io::stdout().lock(), "{outcome}");
            if outcome.success() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e @ Error::Config { .. }) => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
