mod args;
mod cmd;
mod run;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use args::UsageError;

#[derive(Parser)]
#[command(name = "ptec", version, about = "Multi-label text classification with prompt tuning and baselines")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and taxonomy.
    Synth(cmd::synth::Args),
    /// Stratified train/val/test split.
    Split(cmd::split::Args),
    /// Train a method (or build its index) for one or more seeds.
    Train(cmd::train::Args),
    /// Select the threshold on validation data and report metrics.
    Eval(cmd::eval::Args),
    /// Stream predictions for a JSON Lines input.
    Infer(cmd::infer::Args),
    /// Hyperparameter search on validation macro F1.
    Tune(cmd::tune::Args),
    /// Print FLOPs ledgers of evaluated runs.
    Flops(cmd::flops::Args),
    /// Comparison table over run directories.
    Report(cmd::report::Args),
}

/// 0 success, 1 usage, 2 data error, 3 infeasible constraint.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    if let Some(e) = err.chain().find_map(|c| c.downcast_ref::<ptec_core::Error>()) {
        return match e {
            ptec_core::Error::InfeasibleSplit(_) => 3,
            ptec_core::Error::Config(_) => 1,
            _ => 2,
        };
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Synth(a) => cmd::synth::run(a),
        Command::Split(a) => cmd::split::run(a),
        Command::Train(a) => cmd::train::run(a),
        Command::Eval(a) => cmd::eval::run(a),
        Command::Infer(a) => cmd::infer::run(a),
        Command::Tune(a) => cmd::tune::run(a),
        Command::Flops(a) => cmd::flops::run(a),
        Command::Report(a) => cmd::report::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
