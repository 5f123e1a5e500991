use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use priorcal::cli::{run, Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let what = match &cli.command {
        Command::Fit(_) => "fit",
        Command::Predict(_) => "predict",
        Command::Simulate(_) => "simulate",
        Command::Evaluate(_) => "evaluate",
    };
    match run(&cli).with_context(|| format!("{what} failed")) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<priorcal::Error>().map_or(1, priorcal::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
