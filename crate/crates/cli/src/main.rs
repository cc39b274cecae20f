//! `teso`: simulate stereo sequences, track their calibration, recalibrate
//! single frames and evaluate traces.

mod common;
mod config;
mod dump;
mod error;
mod eval;
mod output;
mod simulate;
mod solve;
mod track;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "teso", version, about = "Online essential-matrix tracking for stereo cameras")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic drifting stereo sequence.
    Simulate(simulate::SimulateArgs),
    /// Track the calibration through a feature file.
    Track(track::TrackArgs),
    /// Recalibrate from a single frame with differential evolution.
    Solve(solve::SolveArgs),
    /// Score a trace against ground truth.
    Eval(eval::EvalArgs),
    /// Print the text form of a binary feature file or checkpoint.
    Dump(dump::DumpArgs),
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    let result = match &cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Track(a) => track::run(a),
        Command::Solve(a) => solve::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Dump(a) => dump::run(a),
    };
    if let Err(e) = result {
        eprintln!("teso: {e}");
        std::process::exit(e.exit_code());
    }
}
