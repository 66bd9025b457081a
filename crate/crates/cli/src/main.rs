// SPDX-License-Identifier: MIT OR Apache-2.0

//! `neurofunc` command-line entry point.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::GenModel(a) => commands::gen_model(a),
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::Trace(a) => commands::trace(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sparsity(a) => commands::sparsity(a),
        Command::Localize(a) => commands::localize(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
