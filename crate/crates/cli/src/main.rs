mod args;
mod commands;
mod exit;

use clap::Parser;

use args::{Cli, FileConfig};
use exit::{AppError, Staged};

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<(), AppError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path).step("config")?,
        None => FileConfig::default(),
    };
    let quiet = cli.quiet || file.quiet.unwrap_or(false);
    env_logger::Builder::new()
        .filter_level(if quiet {
            log::LevelFilter::Error
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .init();
    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            return Err(AppError::usage("config", "--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| AppError::usage("config", e.to_string()))?;
    }
    let ctx = commands::Context {
        seed: cli.seed.or(file.seed),
        quiet,
        file,
    };
    commands::dispatch(cli.command, &ctx)
}
