//! The `grade` subcommand: run phase one over a work list of
//! query-passage pairs, committing each criterion grade to the store as
//! it arrives.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;

use relgrade::grading::{
    grade_pairs, load_pairs, GradeOptions, GradeStore, PairSource, DEFAULT_POOL_DEPTH,
    DEFAULT_WORKERS,
};
use relgrade::{Corpus, Error};

use crate::config::{
    self, build_client, check_exists, load_criteria, require, resolve_run_files,
};

#[derive(Debug, Args)]
pub struct GradeArgs {
    /// JSON config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Query texts, one `id<TAB>text` per line
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Passage texts, one `id<TAB>text` per line
    #[arg(long)]
    pub passages: Option<PathBuf>,
    /// Explicit work list, one `query_id<TAB>doc_id` per line
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Run files to pool the work list from (when no pairs file is given)
    #[arg(long, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Pooling depth per query per run
    #[arg(long)]
    pub pool_depth: Option<usize>,
    /// Grade store (JSONL), created if absent
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Criteria definition file (JSON); defaults to the built-in four
    #[arg(long)]
    pub criteria: Option<PathBuf>,
    /// Criteria subset spec, e.g. TCF or exactness,topicality
    #[arg(long)]
    pub criteria_subset: Option<String>,
    /// Model id sent to the backend
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Concurrent backend requests
    #[arg(long)]
    pub workers: Option<usize>,
    /// Mock backend script instead of a live endpoint
    #[arg(long)]
    pub mock: Option<PathBuf>,
    /// Response cache file (JSONL), created if absent
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Continue into an existing non-empty store
    #[arg(long)]
    pub resume: bool,
}

pub fn run(args: GradeArgs) -> Result<()> {
    let config = config::Config::load(args.config.as_deref())?;

    let queries = require(args.queries.or(config.queries.clone()), "queries file")?;
    let passages = require(args.passages.or(config.passages.clone()), "passages file")?;
    check_exists(&queries, "queries file")?;
    check_exists(&passages, "passages file")?;
    let corpus = Corpus::load(&queries, &passages)?;

    let criteria = load_criteria(
        args.criteria.or(config.criteria_file.clone()).as_deref(),
        args.criteria_subset
            .as_deref()
            .or(config.criteria_subset.as_deref()),
    )?;

    let source = match args.pairs.or(config.pairs.clone()) {
        Some(path) => {
            check_exists(&path, "pairs file")?;
            PairSource::PairsFile(path)
        }
        None => {
            let files = resolve_run_files(&args.runs, &config)
                .context("a pairs file or run files are needed to build the work list")?;
            let runs = config::load_runs(&files)?;
            let depth = args
                .pool_depth
                .or(config.pool_depth)
                .unwrap_or(DEFAULT_POOL_DEPTH);
            PairSource::Pooling { runs, depth }
        }
    };

    let store_path = require(args.store.or(config.store.clone()), "store path")?;
    let occupied = std::fs::metadata(&store_path)
        .map(|meta| meta.len() > 0)
        .unwrap_or(false);
    if occupied && !args.resume {
        bail!(
            "store {} already holds records; pass --resume to continue it",
            store_path.display()
        );
    }

    let model = require(args.model.or(config.model.clone()), "grading model")?;
    let client = build_client(&config, args.mock.as_deref(), args.cache.as_deref())?;
    let options = GradeOptions {
        model,
        temperature: args.temperature.or(config.temperature).unwrap_or(0.0),
        max_tokens: args.max_tokens.or(config.max_tokens).unwrap_or(100),
        workers: args.workers.or(config.workers).unwrap_or(DEFAULT_WORKERS),
    };

    let pair_set = load_pairs(&corpus, &source)?;
    if !pair_set.missing_queries.is_empty() {
        eprintln!(
            "warning: dropped {} queries with no text (first: {})",
            pair_set.missing_queries.len(),
            pair_set.missing_queries[0]
        );
    }
    if !pair_set.missing_docs.is_empty() {
        eprintln!(
            "warning: dropped {} passages with no text (first: {})",
            pair_set.missing_docs.len(),
            pair_set.missing_docs[0]
        );
    }
    if pair_set.pairs.is_empty() {
        bail!("the work list resolved to no gradable pairs");
    }

    let mut store = GradeStore::open(&store_path)?;
    let report = grade_pairs(
        &pair_set.pairs,
        &corpus,
        &criteria,
        &client,
        &options,
        &mut store,
    )
    .map_err(|error| match &error {
        Error::Aborted { .. } => anyhow!(error).context(format!(
            "grading stopped early; rerun with --resume to continue into {}",
            store_path.display()
        )),
        _ => anyhow!(error),
    })?;

    println!(
        "graded {} new records ({} already present, {} parse failures)",
        report.graded, report.skipped, report.parse_failed
    );
    println!(
        "store {} now holds {} records over {} pairs",
        store_path.display(),
        store.len(),
        pair_set.pairs.len()
    );
    Ok(())
}
