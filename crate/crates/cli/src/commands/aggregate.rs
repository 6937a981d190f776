//! The `aggregate` subcommand: phase two, turning stored criterion
//! grades into a predicted qrels file.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use relgrade::aggregate::{
    fit_naive_bayes, AggregationSpec, Aggregator, NbModel, ThresholdMap,
};
use relgrade::grading::GradeStore;
use relgrade::trec::write_qrels;
use relgrade::Corpus;

use crate::config::{
    self, build_client, check_exists, load_criteria, load_qrels_file, parse_thresholds, require,
    thresholds_from_config,
};

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// JSON config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grade store to aggregate
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Where to write the predicted qrels
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Aggregation method: sum, prompt, naive-bayes, or single
    #[arg(long)]
    pub method: Option<String>,
    /// Sum thresholds as t3,t2,t1 (default: scaled to the criteria count)
    #[arg(long)]
    pub thresholds: Option<String>,
    /// Fitted naive Bayes model file (JSON)
    #[arg(long)]
    pub nb_model: Option<PathBuf>,
    /// Human qrels to fit the naive Bayes model on
    #[arg(long)]
    pub fit_qrels: Option<PathBuf>,
    /// Additive smoothing for naive Bayes fitting
    #[arg(long)]
    pub nb_alpha: Option<f64>,
    /// Write the fitted naive Bayes model here
    #[arg(long)]
    pub save_model: Option<PathBuf>,
    /// Criterion whose grade passes through (method=single); key or initial
    #[arg(long)]
    pub single: Option<String>,
    /// Criteria definition file (JSON); defaults to the built-in four
    #[arg(long)]
    pub criteria: Option<PathBuf>,
    /// Criteria subset spec, e.g. TCF
    #[arg(long)]
    pub criteria_subset: Option<String>,
    /// Which grading model's records to read from the store
    #[arg(long)]
    pub grade_model: Option<String>,
    /// Model id for prompt aggregation (defaults to the grading model)
    #[arg(long)]
    pub aggregation_model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Mock backend script instead of a live endpoint
    #[arg(long)]
    pub mock: Option<PathBuf>,
    /// Response cache file (JSONL)
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Query texts (needed by prompt aggregation)
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Passage texts (needed by prompt aggregation)
    #[arg(long)]
    pub passages: Option<PathBuf>,
}

pub fn run(args: AggregateArgs) -> Result<()> {
    let config = config::Config::load(args.config.as_deref())?;

    let store_path = require(args.store.or(config.store.clone()), "store path")?;
    check_exists(&store_path, "grade store")?;
    let store = GradeStore::load(&store_path)?;

    let criteria = load_criteria(
        args.criteria.or(config.criteria_file.clone()).as_deref(),
        args.criteria_subset
            .as_deref()
            .or(config.criteria_subset.as_deref()),
    )?;

    let method = args
        .method
        .or(config.method.clone())
        .unwrap_or_else(|| "sum".to_string());
    let grade_model = args.grade_model.or(config.model.clone());

    let mut fitted_note = None;
    let spec = match method.as_str() {
        "sum" => {
            let triple = match &args.thresholds {
                Some(text) => Some(parse_thresholds(text)?),
                None => thresholds_from_config(&config)?,
            };
            let thresholds = match triple {
                Some((t3, t2, t1)) => ThresholdMap::new(t3, t2, t1, criteria.len())?,
                None => ThresholdMap::scaled(criteria.len())?,
            };
            AggregationSpec::sum(criteria, thresholds)?
        }
        "single" => {
            let wanted = require(
                args.single.or(config.single_criterion.clone()),
                "criterion for method=single",
            )?;
            let subset = criteria.parse_subset_spec(&wanted)?;
            if subset.len() != 1 {
                bail!("method=single takes exactly one criterion, got '{wanted}'");
            }
            let key = subset.keys()[0].to_string();
            AggregationSpec::single(subset, &key)?
        }
        "naive-bayes" => {
            let model = match args.nb_model.or(config.nb_model.clone()) {
                Some(path) => {
                    check_exists(&path, "naive Bayes model file")?;
                    let text = std::fs::read_to_string(&path)?;
                    serde_json::from_str::<NbModel>(&text)
                        .with_context(|| format!("parsing model file {}", path.display()))?
                }
                None => {
                    let qrels_path = require(
                        args.fit_qrels,
                        "naive Bayes model file or qrels to fit on (--nb-model / --fit-qrels)",
                    )?;
                    let qrels = load_qrels_file(&qrels_path, "training qrels")?;
                    let alpha = args.nb_alpha.or(config.nb_alpha).unwrap_or(1.0);
                    let model =
                        fit_naive_bayes(&store, &qrels, &criteria, alpha, grade_model.as_deref())?;
                    fitted_note = Some(format!(
                        "fitted naive Bayes on {} examples (alpha {alpha})",
                        model.examples()
                    ));
                    if let Some(path) = &args.save_model {
                        let mut text = serde_json::to_string_pretty(&model)?;
                        text.push('\n');
                        std::fs::write(path, text)
                            .with_context(|| format!("writing {}", path.display()))?;
                        fitted_note = Some(format!(
                            "{} and saved it to {}",
                            fitted_note.unwrap(),
                            path.display()
                        ));
                    }
                    model
                }
            };
            AggregationSpec::naive_bayes(criteria, model)?
        }
        "prompt" => AggregationSpec::prompt(criteria),
        other => bail!("unknown aggregation method '{other}' (sum, prompt, naive-bayes, single)"),
    };

    let needs_client = method == "prompt";
    let client = if needs_client {
        Some(build_client(
            &config,
            args.mock.as_deref(),
            args.cache.as_deref(),
        )?)
    } else {
        None
    };
    let corpus = if needs_client {
        let queries = require(args.queries.or(config.queries.clone()), "queries file")?;
        let passages = require(args.passages.or(config.passages.clone()), "passages file")?;
        check_exists(&queries, "queries file")?;
        check_exists(&passages, "passages file")?;
        Some(Corpus::load(&queries, &passages)?)
    } else {
        None
    };

    let aggregator = match &client {
        Some(client) => {
            let model = require(
                args.aggregation_model
                    .or(config.aggregation_model.clone())
                    .or(config.model.clone()),
                "aggregation model",
            )?;
            Aggregator::with_client(
                spec,
                client,
                &model,
                args.temperature.or(config.temperature).unwrap_or(0.0),
                args.max_tokens.or(config.max_tokens).unwrap_or(100),
            )?
        }
        None => Aggregator::new(spec)?,
    };

    let prediction = aggregator.predict_judgments(&store, corpus.as_ref(), grade_model.as_deref())?;

    let out = require(
        args.out
            .or(config.pred.clone())
            .or(config
                .output_dir
                .as_ref()
                .map(|dir| dir.join("predicted.qrels"))),
        "output path (--out, pred, or output_dir)",
    )?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&out, write_qrels(&prediction.judgments))
        .with_context(|| format!("writing {}", out.display()))?;

    if let Some(note) = fitted_note {
        println!("{note}");
    }
    let mut histogram: BTreeMap<u8, usize> = BTreeMap::new();
    for (_, _, label) in prediction.judgments.entries() {
        *histogram.entry(label).or_default() += 1;
    }
    let spread = (0..=3u8)
        .map(|label| format!("{label}={}", histogram.get(&label).copied().unwrap_or(0)))
        .collect::<Vec<_>>()
        .join(" ");
    println!(
        "aggregated {} pairs with method {method} (labels {spread})",
        prediction.details.len()
    );
    if prediction.parse_failures > 0 {
        println!(
            "warning: {} pairs got label 0 because the reply held no grade",
            prediction.parse_failures
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
