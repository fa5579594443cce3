use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;
mod io;

use args::{Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Dissim(a) => commands::dissim(a),
        Command::Fit(a) => commands::fit(a),
        Command::Compare(a) => commands::compare(a),
        Command::Incremental(a) => commands::incremental(a),
        Command::Experiment(a) => commands::experiment(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", commands::describe(&e));
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
