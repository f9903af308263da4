use std::process::ExitCode;

use clap::Parser;
use eca::EcaError;

mod args;
mod bench;
mod commands;
mod run;

use args::Cli;
use run::Context;

/// Nonzero exit status per error class.
fn exit_code(e: &EcaError) -> u8 {
    match e {
        EcaError::Config(_) => 2,
        EcaError::Io { .. } => 3,
        EcaError::Format(_) => 4,
        EcaError::Dimension(_) => 5,
        EcaError::Numerics(_) => 6,
        EcaError::DegenerateData(_) | EcaError::DegenerateVector(_) => 7,
        EcaError::State(_) => 8,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let ctx = Context { strict: cli.strict };
    match run::execute(cli.command, &ctx, cli.manifest) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
