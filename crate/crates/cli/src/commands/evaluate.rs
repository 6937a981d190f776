//! The `evaluate` subcommand: score runs against a judgment set and
//! print the resulting leaderboard.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;

use relgrade::metrics::{evaluate_system, MetricSpec, SystemScore};

use crate::config::{self, load_qrels_file, load_runs, require, resolve_run_files};
use crate::report_fmt::{annotate, column_best, md_table, write_csv};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSON config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Judgment set to score against
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Run files (system id = file stem)
    #[arg(long, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Metric spec: ndcg_cut.K, map, or recip_rank
    #[arg(long)]
    pub metric: Option<String>,
    /// Relevance cutoff for the binary metrics (map, recip_rank)
    #[arg(long)]
    pub binarize: Option<u8>,
    /// Directory for CSV output
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write per-query scores
    #[arg(long)]
    pub per_query: bool,
}

pub fn resolve_metric(
    flag: Option<&str>,
    config: &config::Config,
    binarize: Option<u8>,
) -> Result<MetricSpec> {
    let text = flag
        .or(config.metric.as_deref())
        .unwrap_or("ndcg_cut.10");
    let mut spec = MetricSpec::parse(text)?;
    if let Some(cutoff) = binarize.or(config.binarize) {
        spec = spec.with_cutoff(cutoff)?;
    }
    Ok(spec)
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    let config = config::Config::load(args.config.as_deref())?;

    let qrels_path = require(args.qrels.or(config.qrels.clone()), "qrels file")?;
    let qrels = load_qrels_file(&qrels_path, "qrels file")?;
    let files = resolve_run_files(&args.runs, &config)?;
    let runs = load_runs(&files)?;
    let spec = resolve_metric(args.metric.as_deref(), &config, args.binarize)?;

    let mut scores: Vec<SystemScore> = Vec::with_capacity(runs.len());
    for run in &runs {
        scores.push(evaluate_system(run, &qrels, &spec)?);
    }
    scores.sort_by(|a, b| {
        b.mean
            .total_cmp(&a.mean)
            .then_with(|| a.system_id.cmp(&b.system_id))
    });

    let best = column_best(scores.iter().map(|s| s.mean));
    let rows: Vec<Vec<String>> = scores
        .iter()
        .enumerate()
        .map(|(index, score)| {
            vec![
                (index + 1).to_string(),
                score.system_id.clone(),
                annotate(score.mean, best),
                score.per_query.len().to_string(),
            ]
        })
        .collect();
    println!("## Leaderboard ({})\n", spec.name());
    print!(
        "{}",
        md_table(&["rank", "system", &spec.name(), "queries"], &rows)
    );

    let out_dir = args.out_dir.or(config.output_dir.clone());
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir)?;
        let csv_rows: Vec<Vec<String>> = scores
            .iter()
            .map(|score| {
                vec![
                    score.system_id.clone(),
                    format!("{:.6}", score.mean),
                    score.per_query.len().to_string(),
                ]
            })
            .collect();
        write_csv(
            &dir.join("evaluate.csv"),
            &["system", &spec.name(), "queries"],
            &csv_rows,
        )?;
        if args.per_query {
            let mut per_query_rows = Vec::new();
            for score in &scores {
                for (query_id, value) in &score.per_query {
                    per_query_rows.push(vec![
                        score.system_id.clone(),
                        query_id.clone(),
                        format!("{value:.6}"),
                    ]);
                }
            }
            write_csv(
                &dir.join("per_query.csv"),
                &["system", "query", &spec.name()],
                &per_query_rows,
            )?;
        }
        println!("\nwrote CSV to {}", dir.display());
    }
    Ok(())
}
