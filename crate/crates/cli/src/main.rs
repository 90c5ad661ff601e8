//! `csa`: demonstrations in, behavior bundles, simulations and live
//! sessions out.

mod args;
mod commands;
mod config;
mod error;
mod inspect;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    let json = cli.json;
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // a failed check has already printed its report
            if json && !matches!(e, error::CliError::Check(_)) {
                let body = serde_json::json!({ "ok": false, "error": e.to_string(), "exit_code": e.exit_code() });
                println!("{body}");
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
