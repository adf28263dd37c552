mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Status;
use config::{resolve, EnvConfig, FileConfig, UsageError};

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NO_LEAK: u8 = 3;

fn run(cli: Cli) -> anyhow::Result<Status> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let env = EnvConfig::from_env()?;
    let threads = cli.threads.or(file.threads).or(env.threads()?);
    if let Some(n) = threads {
        if n == 0 {
            return Err(config::usage("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(resolve(&a, &file, &env, "simulate")?),
        Command::Filter(a) => commands::filter(resolve(&a, &file, &env, "filter")?),
        Command::Attack(a) => commands::attack(resolve(&a, &file, &env, "attack")?),
        Command::Sweep(a) => commands::sweep(resolve(&a, &file, &env, "sweep")?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NoLeak) => ExitCode::from(EXIT_NO_LEAK),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
