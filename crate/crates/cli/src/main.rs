use std::process::ExitCode;

use clap::Parser;
use farmlight_cli::args::{Cli, Command};
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    // clap exits 0 for --help/--version and 2 for usage errors.
    let cli = Cli::parse();
    let default = match (cli.verbose, &cli.command) {
        (0, Command::Run { .. }) | (1, _) => "info",
        (0, _) => "warn",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default)))
        .init();
    match farmlight_cli::execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
