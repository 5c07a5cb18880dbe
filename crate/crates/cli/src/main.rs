mod args;
mod commands;
mod config;
mod manifest;

use std::collections::HashSet;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};
use commands::Status;

fn known_flags(sub: &str) -> HashSet<String> {
    Cli::command()
        .find_subcommand(sub)
        .map(|c| c.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect())
        .unwrap_or_default()
}

fn run() -> anyhow::Result<Status> {
    let argv = config::merge_config(std::env::args_os().collect(), known_flags)?;
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Ok(Status::Ok),
                _ => Err(anyhow::anyhow!("invalid usage")),
            };
        }
    };
    let cli = Cli::from_arg_matches(&matches)?;
    if let Some(k) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global()?;
    }
    let jobs = cli.jobs;
    match cli.command {
        Command::Fit(a) => commands::fit(a, jobs),
        Command::Predict(a) => commands::predict(a, jobs),
        Command::Score(a) => commands::score_cmd(a, jobs),
        Command::Cv(a) => commands::cv(a, jobs),
        Command::Compare(a) => commands::compare(a, jobs),
        Command::Simulate(a) => commands::simulate(a, jobs),
    }
}

fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        let io = c
            .downcast_ref::<std::io::Error>()
            .or_else(|| match c.downcast_ref::<csv::Error>().map(|e| e.kind()) {
                Some(csv::ErrorKind::Io(io)) => Some(io),
                _ => None,
            });
        io.is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Warnings) => ExitCode::from(2),
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            if e.to_string() != "invalid usage" {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(1)
        }
    }
}
