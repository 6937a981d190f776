//! The `tune` subcommand: search the sum-aggregation thresholds that
//! best reproduce a dev leaderboard.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use serde::Serialize;

use relgrade::aggregate::{tune_thresholds, TuneObjective};
use relgrade::grading::GradeStore;

use crate::config::{self, load_criteria, load_qrels_file, load_runs, require, resolve_run_files};

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// JSON config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grade store holding the dev grades
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Dev qrels the tuned leaderboard should agree with
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Run files (system id = file stem)
    #[arg(long, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Objective: kendall or spearman
    #[arg(long)]
    pub objective: Option<String>,
    /// Criteria definition file (JSON); defaults to the built-in four
    #[arg(long)]
    pub criteria: Option<PathBuf>,
    /// Criteria subset spec, e.g. TCF
    #[arg(long)]
    pub criteria_subset: Option<String>,
    /// Which grading model's records to read from the store
    #[arg(long)]
    pub grade_model: Option<String>,
    /// Directory to write tune.json into
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct TuneFile {
    t3: u32,
    t2: u32,
    t1: u32,
    objective: String,
    value: f64,
    candidates_evaluated: usize,
    candidates_skipped: usize,
}

pub fn run(args: TuneArgs) -> Result<()> {
    let config = config::Config::load(args.config.as_deref())?;

    let store_path = require(args.store.or(config.store.clone()), "grade store")?;
    config::check_exists(&store_path, "grade store")?;
    let store = GradeStore::load(&store_path)?;

    let qrels_path = require(args.qrels.or(config.qrels.clone()), "dev qrels file")?;
    let qrels = load_qrels_file(&qrels_path, "dev qrels file")?;

    let files = resolve_run_files(&args.runs, &config)?;
    let runs = load_runs(&files)?;

    let criteria = load_criteria(
        args.criteria.or(config.criteria_file.clone()).as_deref(),
        args.criteria_subset
            .as_deref()
            .or(config.criteria_subset.as_deref()),
    )?;

    let objective_name = args
        .objective
        .or(config.objective.clone())
        .unwrap_or_else(|| "kendall".to_string());
    let objective = match objective_name.to_ascii_lowercase().as_str() {
        "kendall" => TuneObjective::Kendall,
        "spearman" => TuneObjective::Spearman,
        other => bail!("unknown objective {other:?}, expected kendall or spearman"),
    };

    let grade_model = args.grade_model.or(config.model.clone());
    let outcome = tune_thresholds(
        &store,
        &qrels,
        &runs,
        &criteria,
        objective,
        grade_model.as_deref(),
    )?;

    let (t3, t2, t1) = outcome.thresholds.values();
    println!("best thresholds: t3={t3} t2={t2} t1={t1}");
    println!(
        "{} over the dev leaderboard: {:.6}",
        objective_name.to_ascii_lowercase(),
        outcome.objective_value
    );
    println!(
        "candidates evaluated: {} ({} skipped as undefined)",
        outcome.candidates_evaluated, outcome.candidates_skipped
    );

    let out_dir = args.out_dir.or(config.output_dir.clone());
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir)?;
        let file = TuneFile {
            t3,
            t2,
            t1,
            objective: objective_name.to_ascii_lowercase(),
            value: outcome.objective_value,
            candidates_evaluated: outcome.candidates_evaluated,
            candidates_skipped: outcome.candidates_skipped,
        };
        let path = dir.join("tune.json");
        let mut body = serde_json::to_string_pretty(&file)?;
        body.push('\n');
        std::fs::write(&path, body)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
