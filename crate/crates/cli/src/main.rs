//! Command-line front end for the relevance grading pipeline: grade
//! query-passage pairs with an LLM, aggregate criterion grades into
//! relevance labels, score runs, and compare judgment sets.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod report_fmt;

#[derive(Parser)]
#[command(name = "relgrade", version, about = "LLM relevance judgments over decomposed criteria")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grade query-passage pairs on each criterion and fill a grade store
    Grade(commands::grade::GradeArgs),
    /// Turn stored criterion grades into a predicted qrels file
    Aggregate(commands::aggregate::AggregateArgs),
    /// Score run files against a qrels file and print the leaderboard
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Compare predicted judgments against gold judgments
    Compare(commands::compare::CompareArgs),
    /// Like compare, but always writes the full report bundle
    Report(commands::compare::ReportArgs),
    /// Search sum-aggregation thresholds against a dev leaderboard
    Tune(commands::tune::TuneArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Grade(args) => commands::grade::run(args),
        Command::Aggregate(args) => commands::aggregate::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Compare(args) => commands::compare::run_compare(args),
        Command::Report(args) => commands::compare::run_report(args),
        Command::Tune(args) => commands::tune::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .chain()
                .find_map(|cause| cause.downcast_ref::<relgrade::Error>())
                .map(|error| error.exit_code())
                .unwrap_or(1);
            ExitCode::from(code.clamp(1, 255) as u8)
        }
    }
}
