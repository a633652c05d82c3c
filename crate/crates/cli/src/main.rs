mod args;
mod commands;
mod error;
mod summary;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

use args::Cli;
use error::CliError;

/// One JSON line on stderr per failure.
fn report(e: &CliError) {
    eprintln!(
        "{}",
        json!({"error": {"kind": e.kind(), "exit_code": e.exit_code(), "message": e.to_string()}})
    );
}

fn run() -> Result<(), CliError> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                e.exit()
            }
            _ => {
                eprint!("{}", e.render());
                let first = e.to_string().lines().next().unwrap_or_default().to_string();
                return Err(CliError::Usage(first));
            }
        },
    };
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    commands::dispatch(&cli)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = match run() {
        Ok(()) => 0,
        Err(e) => {
            report(&e);
            e.exit_code()
        }
    };
    std::process::exit(code);
}
