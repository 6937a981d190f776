//! The `compare` and `report` subcommands: meta-evaluate a predicted
//! judgment set against gold judgments. `compare` prints the report;
//! `report` additionally writes the markdown and CSV bundle.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;

use relgrade::criteria::CriteriaSet;
use relgrade::grading::GradeStore;
use relgrade::meta::{
    agreement_stats, build_leaderboard, cohen_kappa, confusion, indicator_correlations,
    kendall_tau, pattern_stats, scatter_export, spearman_rho, AgreementStats, ConfusionMatrix,
    IndicatorCorrelations, Leaderboard, PatternStats, ScatterRow,
};
use relgrade::metrics::MetricSpec;
use relgrade::trec::{JudgmentSet, JudgmentSource};
use relgrade::Error;

use crate::config::{self, load_criteria, load_qrels_file, load_runs, require, resolve_run_files};
use crate::report_fmt::{annotate, column_best, md_table, write_csv};

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// JSON config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Gold (human) qrels
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// Predicted qrels
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Run files (system id = file stem)
    #[arg(long, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Metric spec: ndcg_cut.K, map, or recip_rank
    #[arg(long)]
    pub metric: Option<String>,
    /// Label cutoff for the binarized kappa and the binary metrics
    #[arg(long)]
    pub binarize: Option<u8>,
    /// Grade store, enabling the pattern and grade-correlation sections
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Which grading model's records to read from the store
    #[arg(long)]
    pub grade_model: Option<String>,
    /// Criteria definition file (JSON); defaults to the built-in four
    #[arg(long)]
    pub criteria: Option<PathBuf>,
    /// Criteria subset spec, e.g. TCF
    #[arg(long)]
    pub criteria_subset: Option<String>,
    /// Directory for the report bundle
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub inner: CompareArgs,
}

pub fn run_compare(args: CompareArgs) -> Result<()> {
    execute(args, false)
}

pub fn run_report(args: ReportArgs) -> Result<()> {
    execute(args.inner, true)
}

fn defined_or_none(result: relgrade::Result<f64>) -> Result<Option<f64>> {
    match result {
        Ok(value) => Ok(Some(value)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(other) => Err(other.into()),
    }
}

fn stat_cell(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.4}"),
        None => "undefined".to_string(),
    }
}

struct Analysis {
    metric: MetricSpec,
    auto_board: Leaderboard,
    manual_board: Leaderboard,
    tau: Option<f64>,
    rho: Option<f64>,
    matrix: ConfusionMatrix,
    stats: AgreementStats,
    kappa: Option<f64>,
    kappa_binarized: Option<f64>,
    cutoff: u8,
    scatter: Vec<ScatterRow>,
    grades: Option<GradeAnalysis>,
}

struct GradeAnalysis {
    criteria: CriteriaSet,
    patterns: PatternStats,
    indicators: IndicatorCorrelations,
}

fn execute(args: CompareArgs, full: bool) -> Result<()> {
    let config = config::Config::load(args.config.as_deref())?;

    let gold_path = require(args.qrels.or(config.qrels.clone()), "gold qrels file")?;
    let gold = load_qrels_file(&gold_path, "gold qrels file")?;
    let pred_path = require(args.pred.or(config.pred.clone()), "predicted qrels file")?;
    let mut pred = load_qrels_file(&pred_path, "predicted qrels file")?;
    pred.set_source(JudgmentSource::Predicted);

    let files = resolve_run_files(&args.runs, &config)?;
    let runs = load_runs(&files)?;
    let metric =
        super::evaluate::resolve_metric(args.metric.as_deref(), &config, args.binarize)?;

    let cutoff = args.binarize.or(config.binarize).unwrap_or(1);
    if cutoff < 1 || cutoff > 3 {
        bail!("binarize cutoff must be between 1 and 3, got {cutoff}");
    }

    let auto_board = build_leaderboard(&runs, &pred, &metric)?;
    let manual_board = build_leaderboard(&runs, &gold, &metric)?;
    let tau = defined_or_none(kendall_tau(&auto_board, &manual_board))?;
    let rho = defined_or_none(spearman_rho(&auto_board, &manual_board))?;

    let matrix = confusion(&pred, &gold)?;
    let stats = agreement_stats(&matrix)?;
    let kappa = defined_or_none(cohen_kappa(&matrix, None))?;
    let predicate = |label: u8| label >= cutoff;
    let kappa_binarized = defined_or_none(cohen_kappa(&matrix, Some(&predicate)))?;

    let scatter = scatter_export(&runs, &pred, &gold, &metric)?;

    let grades = match args.store.or(config.store.clone()) {
        Some(store_path) => {
            config::check_exists(&store_path, "grade store")?;
            let store = GradeStore::load(&store_path)?;
            let criteria = load_criteria(
                args.criteria.or(config.criteria_file.clone()).as_deref(),
                args.criteria_subset
                    .as_deref()
                    .or(config.criteria_subset.as_deref()),
            )?;
            let grade_model = args.grade_model.or(config.model.clone());
            let patterns = pattern_stats(&store, &criteria, grade_model.as_deref())?;
            let indicators =
                indicator_correlations(&store, &criteria, &pred, &gold, grade_model.as_deref())?;
            Some(GradeAnalysis {
                criteria,
                patterns,
                indicators,
            })
        }
        None => None,
    };

    let analysis = Analysis {
        metric,
        auto_board,
        manual_board,
        tau,
        rho,
        matrix,
        stats,
        kappa,
        kappa_binarized,
        cutoff,
        scatter,
        grades,
    };

    let report = render_report(&analysis, &gold, &pred, runs.len());
    print!("{report}");

    let out_dir = args.out_dir.or(config.output_dir.clone());
    if full && out_dir.is_none() {
        bail!("report needs an output directory (--out-dir or output_dir in the config)");
    }
    if let Some(dir) = out_dir {
        write_bundle(&dir, &report, &analysis)?;
        println!("\nwrote report bundle to {}", dir.display());
    }
    Ok(())
}

fn render_report(
    analysis: &Analysis,
    gold: &JudgmentSet,
    pred: &JudgmentSet,
    system_count: usize,
) -> String {
    let mut out = String::new();
    let metric_name = analysis.metric.name();
    writeln!(out, "# Judgment comparison\n").unwrap();
    writeln!(
        out,
        "metric: {metric_name}; systems: {system_count}; predicted pairs: {}; gold pairs: {}; shared: {}\n",
        pred.entries().count(),
        gold.entries().count(),
        analysis.matrix.total()
    )
    .unwrap();

    writeln!(out, "## Leaderboards\n").unwrap();
    let auto_best = column_best(analysis.auto_board.rows().iter().map(|(_, s)| *s));
    let manual_best = column_best(analysis.manual_board.rows().iter().map(|(_, s)| *s));
    let rows: Vec<Vec<String>> = analysis
        .manual_board
        .rows()
        .iter()
        .map(|(system_id, manual_score)| {
            let auto_score = analysis.auto_board.score_of(system_id).unwrap();
            vec![
                system_id.clone(),
                annotate(auto_score, auto_best),
                annotate(*manual_score, manual_best),
            ]
        })
        .collect();
    out.push_str(&md_table(&["system", "automatic", "manual"], &rows));
    writeln!(
        out,
        "\nbold: within {} of the column's best; red: at least {} below it\n",
        crate::report_fmt::EQUAL_BAND,
        crate::report_fmt::WORSE_BAND
    )
    .unwrap();

    writeln!(out, "## Rank correlation\n").unwrap();
    writeln!(out, "- Kendall tau-b: {}", stat_cell(analysis.tau)).unwrap();
    writeln!(out, "- Spearman rho: {}", stat_cell(analysis.rho)).unwrap();
    writeln!(out).unwrap();

    writeln!(
        out,
        "## Label agreement ({} shared pairs)\n",
        analysis.matrix.total()
    )
    .unwrap();
    let judged_totals = analysis.matrix.judged_totals();
    let predicted_totals = analysis.matrix.predicted_totals();
    let mut confusion_rows: Vec<Vec<String>> = Vec::new();
    for predicted in 0..=3u8 {
        let mut row = vec![format!("predicted {predicted}")];
        for judged in 0..=3u8 {
            row.push(analysis.matrix.count(predicted, judged).to_string());
        }
        row.push(predicted_totals[predicted as usize].to_string());
        confusion_rows.push(row);
    }
    let mut total_row = vec!["total".to_string()];
    for judged in 0..4 {
        total_row.push(judged_totals[judged].to_string());
    }
    total_row.push(analysis.matrix.total().to_string());
    confusion_rows.push(total_row);
    out.push_str(&md_table(
        &["", "judged 0", "judged 1", "judged 2", "judged 3", "total"],
        &confusion_rows,
    ));
    writeln!(out).unwrap();
    writeln!(
        out,
        "- exact agreement: {:.4}",
        analysis.stats.exact_fraction
    )
    .unwrap();
    writeln!(
        out,
        "- off by one level: {:.4}",
        analysis.stats.off_by_one_fraction
    )
    .unwrap();
    writeln!(
        out,
        "- gross mismatches (two or more levels apart): {}",
        analysis.stats.gross_mismatch_count
    )
    .unwrap();
    match analysis.stats.lenient_fraction_of_gross {
        Some(fraction) => {
            writeln!(out, "- predicted label higher among gross: {fraction:.4}").unwrap()
        }
        None => writeln!(out, "- predicted label higher among gross: not applicable").unwrap(),
    }
    writeln!(out, "- Cohen kappa: {}", stat_cell(analysis.kappa)).unwrap();
    writeln!(
        out,
        "- Cohen kappa binarized at label >= {}: {}",
        analysis.cutoff,
        stat_cell(analysis.kappa_binarized)
    )
    .unwrap();
    writeln!(out).unwrap();

    if let Some(grades) = &analysis.grades {
        writeln!(out, "## Criterion grade patterns\n").unwrap();
        writeln!(out, "- graded pairs: {}", grades.patterns.pair_count).unwrap();
        writeln!(
            out,
            "- all grades high (>= 2): {:.4}",
            grades.patterns.high_only_fraction
        )
        .unwrap();
        writeln!(
            out,
            "- all grades low (<= 1): {:.4}",
            grades.patterns.low_only_fraction
        )
        .unwrap();
        writeln!(out, "- mixed: {:.4}", grades.patterns.mixed_fraction).unwrap();
        writeln!(out).unwrap();
        let initials = grades.criteria.initials().join(",");
        let header = format!("pattern ({initials})");
        let pattern_rows: Vec<Vec<String>> = grades
            .patterns
            .top_patterns
            .iter()
            .take(10)
            .map(|(tuple, count)| {
                vec![
                    tuple
                        .iter()
                        .map(|g| g.to_string())
                        .collect::<Vec<_>>()
                        .join(","),
                    count.to_string(),
                ]
            })
            .collect();
        out.push_str(&md_table(&[&header, "count"], &pattern_rows));
        writeln!(out).unwrap();
        writeln!(
            out,
            "grade-level correlations cover {} pairs; see indicators.csv in the report bundle",
            grades.indicators.pair_count
        )
        .unwrap();
    }
    out
}

fn write_bundle(dir: &Path, report: &str, analysis: &Analysis) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.md"), report)?;

    let leaderboard_rows: Vec<Vec<String>> = analysis
        .manual_board
        .rows()
        .iter()
        .map(|(system_id, manual_score)| {
            vec![
                system_id.clone(),
                format!("{:.6}", analysis.auto_board.score_of(system_id).unwrap()),
                format!("{manual_score:.6}"),
            ]
        })
        .collect();
    write_csv(
        &dir.join("leaderboard.csv"),
        &["system", "auto_score", "manual_score"],
        &leaderboard_rows,
    )?;

    let confusion_rows: Vec<Vec<String>> = (0..=3u8)
        .map(|predicted| {
            let mut row = vec![predicted.to_string()];
            for judged in 0..=3u8 {
                row.push(analysis.matrix.count(predicted, judged).to_string());
            }
            row
        })
        .collect();
    write_csv(
        &dir.join("confusion.csv"),
        &["predicted", "judged_0", "judged_1", "judged_2", "judged_3"],
        &confusion_rows,
    )?;

    let agreement_row = vec![vec![
        analysis.stats.total.to_string(),
        format!("{:.6}", analysis.stats.exact_fraction),
        format!("{:.6}", analysis.stats.off_by_one_fraction),
        analysis.stats.gross_mismatch_count.to_string(),
        analysis
            .stats
            .lenient_fraction_of_gross
            .map(|f| format!("{f:.6}"))
            .unwrap_or_default(),
        analysis.kappa.map(|k| format!("{k:.6}")).unwrap_or_default(),
        analysis
            .kappa_binarized
            .map(|k| format!("{k:.6}"))
            .unwrap_or_default(),
        analysis.cutoff.to_string(),
    ]];
    write_csv(
        &dir.join("agreement.csv"),
        &[
            "shared_pairs",
            "exact_fraction",
            "off_by_one_fraction",
            "gross_mismatch_count",
            "lenient_fraction_of_gross",
            "kappa",
            "kappa_binarized",
            "binarize_cutoff",
        ],
        &agreement_row,
    )?;

    let scatter_rows: Vec<Vec<String>> = analysis
        .scatter
        .iter()
        .map(|row| {
            vec![
                row.system_id.clone(),
                row.query_id.clone().unwrap_or_else(|| "ALL".to_string()),
                format!("{:.6}", row.auto_score),
                format!("{:.6}", row.manual_score),
            ]
        })
        .collect();
    write_csv(
        &dir.join("scatter.csv"),
        &["system", "query", "auto_score", "manual_score"],
        &scatter_rows,
    )?;

    if let Some(grades) = &analysis.grades {
        let total = grades.patterns.pair_count as f64;
        let pattern_rows: Vec<Vec<String>> = grades
            .patterns
            .top_patterns
            .iter()
            .map(|(tuple, count)| {
                vec![
                    tuple
                        .iter()
                        .map(|g| g.to_string())
                        .collect::<Vec<_>>()
                        .join("-"),
                    count.to_string(),
                    format!("{:.6}", *count as f64 / total),
                ]
            })
            .collect();
        write_csv(
            &dir.join("patterns.csv"),
            &["pattern", "count", "fraction"],
            &pattern_rows,
        )?;

        let names: Vec<String> = grades
            .indicators
            .variables
            .iter()
            .map(|(source, level)| format!("{source}{level}"))
            .collect();
        let mut headers: Vec<&str> = vec!["variable"];
        headers.extend(names.iter().map(|name| name.as_str()));
        let indicator_rows: Vec<Vec<String>> = grades
            .indicators
            .matrix
            .iter()
            .enumerate()
            .map(|(index, row)| {
                let mut cells = vec![names[index].clone()];
                cells.extend(row.iter().map(|cell| {
                    cell.map(|value| format!("{value:.6}")).unwrap_or_default()
                }));
                cells
            })
            .collect();
        write_csv(&dir.join("indicators.csv"), &headers, &indicator_rows)?;
    }
    Ok(())
}
