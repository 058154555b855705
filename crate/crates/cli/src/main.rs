//! `naln`: synthetic data, preprocessing, training, retrieval scoring,
//! attribution and statistics from the command line.

mod commands;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "naln", version, about = "Align brain-signal encoders to image embeddings and analyse them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset and a manifest describing it.
    Synth(commands::synth::Args),
    /// Turn a continuous recording into epochs.
    Preprocess(commands::preprocess::Args),
    /// Fit encoders against one embedding set.
    Train(commands::train::Args),
    /// Score brain-to-image retrieval of trained encoders.
    Evaluate(commands::evaluate::Args),
    /// Gradient attribution over time, frequency and electrodes.
    Attribute(commands::attribute::Args),
    /// Compare two conditions with t-tests.
    Stats(commands::stats::Args),
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("NALN_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("NALN_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth::run(a),
        Command::Preprocess(a) => commands::preprocess::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Evaluate(a) => commands::evaluate::run(a),
        Command::Attribute(a) => commands::attribute::run(a),
        Command::Stats(a) => commands::stats::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
