//! Meta-evaluation: comparing leaderboards and judgment sets.
//!
//! A leaderboard built from predicted labels is compared to one built
//! from human labels through rank correlations (Kendall tau-b and
//! Spearman rho with average ranks). Label-level agreement is measured
//! with a 4x4 confusion matrix, Cohen's kappa, exact and off-by-one
//! fractions, and a leniency breakdown of gross mismatches. Grade-level
//! structure comes out of indicator correlations and pattern counts.
//!
//! Correlations that are undefined (zero variance, degenerate marginals)
//! surface as errors or `None` cells, never as a silent 0.

use std::collections::{BTreeMap, BTreeSet};

use crate::criteria::CriteriaSet;
use crate::error::Error;
use crate::grading::{collect_pair_grades, GradeStore};
use crate::metrics::{evaluate_system, MetricSpec};
use crate::trec::{JudgmentSet, SystemRun};
use crate::{Result, MAX_LABEL};

/// System means under one metric, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaderboard {
    metric: String,
    rows: Vec<(String, f64)>,
}

impl Leaderboard {
    /// Builds a leaderboard from (system_id, score) rows, sorting by
    /// descending score with ties broken by ascending system id.
    pub fn new(metric: &str, mut rows: Vec<(String, f64)>) -> Result<Leaderboard> {
        if rows.is_empty() {
            return Err(Error::Validation("empty leaderboard".to_string()));
        }
        let mut seen = BTreeSet::new();
        for (system_id, score) in &rows {
            if !score.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite score for system '{system_id}'"
                )));
            }
            if !seen.insert(system_id.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate system id '{system_id}'"
                )));
            }
        }
        rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Leaderboard {
            metric: metric.to_string(),
            rows,
        })
    }

    pub fn metric(&self) -> &str {
        &self.metric
    }

    pub fn rows(&self) -> &[(String, f64)] {
        &self.rows
    }

    pub fn score_of(&self, system_id: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|(id, _)| id == system_id)
            .map(|(_, score)| *score)
    }

    fn paired_scores(&self, other: &Leaderboard) -> Result<(Vec<f64>, Vec<f64>)> {
        let mine: BTreeSet<&str> = self.rows.iter().map(|(id, _)| id.as_str()).collect();
        let theirs: BTreeSet<&str> = other.rows.iter().map(|(id, _)| id.as_str()).collect();
        if mine != theirs {
            return Err(Error::Evaluation(
                "leaderboards cover different system sets".to_string(),
            ));
        }
        let mut x = Vec::with_capacity(mine.len());
        let mut y = Vec::with_capacity(mine.len());
        for system_id in mine {
            x.push(self.score_of(system_id).unwrap());
            y.push(other.score_of(system_id).unwrap());
        }
        Ok((x, y))
    }
}

/// Scores every run against the judgments and ranks the systems.
pub fn build_leaderboard(
    runs: &[SystemRun],
    qrels: &JudgmentSet,
    spec: &MetricSpec,
) -> Result<Leaderboard> {
    if runs.len() < 2 {
        return Err(Error::Evaluation(format!(
            "leaderboard needs at least 2 systems, got {}",
            runs.len()
        )));
    }
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        let score = evaluate_system(run, qrels, spec)?;
        rows.push((score.system_id, score.mean));
    }
    Leaderboard::new(&spec.name(), rows)
}

/// Kendall tau-b between two leaderboards over the same systems.
///
/// Discordant pairs are counted with a merge sort after ordering by the
/// first score vector, and the tie correction uses the usual
/// `sqrt((n0 - n1) (n0 - n2))` denominator. Every intermediate is an
/// integer, so the result is reproducible to the bit.
pub fn kendall_tau(a: &Leaderboard, b: &Leaderboard) -> Result<f64> {
    let (x, y) = a.paired_scores(b)?;
    tau_b(&x, &y)
}

fn tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]).then(y[i].total_cmp(&y[j])));
    let sorted_y: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    let n0 = pair_count(n);
    let n1 = tie_pairs(&order.iter().map(|&i| x[i]).collect::<Vec<_>>());
    let n2 = {
        let mut ys = y.to_vec();
        ys.sort_by(|a, b| a.total_cmp(b));
        tie_pairs(&ys)
    };
    let n3 = {
        let mut joint: Vec<(u64, u64)> = x
            .iter()
            .zip(y)
            .map(|(a, b)| (a.to_bits(), b.to_bits()))
            .collect();
        joint.sort_unstable();
        let mut total = 0i128;
        let mut run = 1i128;
        for i in 1..joint.len() {
            if joint[i] == joint[i - 1] {
                run += 1;
            } else {
                total += run * (run - 1) / 2;
                run = 1;
            }
        }
        total + run * (run - 1) / 2
    };
    let swaps = merge_count(&sorted_y);
    let d1 = n0 - n1;
    let d2 = n0 - n2;
    if d1 == 0 || d2 == 0 {
        return Err(Error::Undefined(
            "kendall tau is undefined when one side is constant".to_string(),
        ));
    }
    let numerator = n0 - n1 - n2 + n3 - 2 * swaps;
    Ok(numerator as f64 / ((d1 as f64) * (d2 as f64)).sqrt())
}

fn pair_count(n: usize) -> i128 {
    let n = n as i128;
    n * (n - 1) / 2
}

fn tie_pairs(sorted: &[f64]) -> i128 {
    let mut total = 0i128;
    let mut run = 1i128;
    for i in 1..sorted.len() {
        if sorted[i].to_bits() == sorted[i - 1].to_bits() {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    if sorted.is_empty() {
        0
    } else {
        total + run * (run - 1) / 2
    }
}

fn merge_count(values: &[f64]) -> i128 {
    fn go(values: &mut Vec<f64>, scratch: &mut Vec<f64>, lo: usize, hi: usize) -> i128 {
        if hi - lo <= 1 {
            return 0;
        }
        let mid = lo + (hi - lo) / 2;
        let mut swaps = go(values, scratch, lo, mid) + go(values, scratch, mid, hi);
        scratch.clear();
        let (mut i, mut j) = (lo, mid);
        while i < mid && j < hi {
            if values[j].total_cmp(&values[i]).is_lt() {
                swaps += (mid - i) as i128;
                scratch.push(values[j]);
                j += 1;
            } else {
                scratch.push(values[i]);
                i += 1;
            }
        }
        scratch.extend_from_slice(&values[i..mid]);
        scratch.extend_from_slice(&values[j..hi]);
        values[lo..hi].copy_from_slice(scratch);
        swaps
    }
    let mut work = values.to_vec();
    let mut scratch = Vec::with_capacity(values.len());
    go(&mut work, &mut scratch, 0, values.len())
}

/// Spearman rho between two leaderboards over the same systems: Pearson
/// correlation of average (fractional) ranks. Tied scores share the
/// midpoint rank. Ranks are half-integers, so the computation runs on
/// doubled ranks in integer arithmetic and is reproducible to the bit.
pub fn spearman_rho(a: &Leaderboard, b: &Leaderboard) -> Result<f64> {
    let (x, y) = a.paired_scores(b)?;
    spearman(&x, &y)
}

fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    let rx = doubled_ranks(x);
    let ry = doubled_ranks(y);
    let n = x.len() as i128;
    let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for (&a, &b) in rx.iter().zip(&ry) {
        sx += a;
        sy += b;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    let dx = n * sxx - sx * sx;
    let dy = n * syy - sy * sy;
    if dx == 0 || dy == 0 {
        return Err(Error::Undefined(
            "spearman rho is undefined when one side has no rank variance".to_string(),
        ));
    }
    let numerator = n * sxy - sx * sy;
    Ok(numerator as f64 / ((dx as f64) * (dy as f64)).sqrt())
}

fn doubled_ranks(values: &[f64]) -> Vec<i128> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut doubled = vec![0i128; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]].to_bits() == values[order[start]].to_bits() {
            end += 1;
        }
        let rank_twice = (start + 1 + end) as i128;
        for &idx in &order[start..end] {
            doubled[idx] = rank_twice;
        }
        start = end;
    }
    doubled
}

/// Predicted-by-judged label counts. Rows are the predicted label,
/// columns the human one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 4]; 4]) -> ConfusionMatrix {
        ConfusionMatrix { counts }
    }

    pub fn count(&self, predicted: u8, judged: u8) -> u64 {
        self.counts[predicted as usize][judged as usize]
    }

    pub fn counts(&self) -> &[[u64; 4]; 4] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn predicted_totals(&self) -> [u64; 4] {
        let mut out = [0u64; 4];
        for (row, slot) in self.counts.iter().zip(&mut out) {
            *slot = row.iter().sum();
        }
        out
    }

    pub fn judged_totals(&self) -> [u64; 4] {
        let mut out = [0u64; 4];
        for row in &self.counts {
            for (cell, slot) in row.iter().zip(&mut out) {
                *slot += cell;
            }
        }
        out
    }
}

/// Tallies predicted against human labels over the pairs both sets
/// judge.
pub fn confusion(pred: &JudgmentSet, gold: &JudgmentSet) -> Result<ConfusionMatrix> {
    let mut counts = [[0u64; 4]; 4];
    let mut any = false;
    for (query_id, doc_id, predicted) in pred.entries() {
        let Some(judged) = gold.get(query_id, doc_id) else {
            continue;
        };
        counts[predicted as usize][judged as usize] += 1;
        any = true;
    }
    if !any {
        return Err(Error::Evaluation(
            "judgment sets share no labeled pairs".to_string(),
        ));
    }
    Ok(ConfusionMatrix::from_counts(counts))
}

/// Cohen's kappa over the matrix, optionally after collapsing labels to
/// two classes with a predicate (true and false become the classes).
///
/// Kappa reduces to the integer expression
/// `(n * diag - sum(row_k * col_k)) / (n^2 - sum(row_k * col_k))`, which
/// avoids any intermediate rounding.
pub fn cohen_kappa(m: &ConfusionMatrix, binarize: Option<&dyn Fn(u8) -> bool>) -> Result<f64> {
    let (diag, marginal_product, total) = match binarize {
        None => {
            let rows = m.predicted_totals();
            let cols = m.judged_totals();
            let diag: u128 = (0..4).map(|i| m.counts[i][i] as u128).sum();
            let product: u128 = (0..4)
                .map(|i| rows[i] as u128 * cols[i] as u128)
                .sum();
            (diag, product, m.total() as u128)
        }
        Some(predicate) => {
            let mut two = [[0u128; 2]; 2];
            for predicted in 0..4u8 {
                for judged in 0..4u8 {
                    let p = usize::from(predicate(predicted));
                    let j = usize::from(predicate(judged));
                    two[p][j] += m.count(predicted, judged) as u128;
                }
            }
            let rows = [two[0][0] + two[0][1], two[1][0] + two[1][1]];
            let cols = [two[0][0] + two[1][0], two[0][1] + two[1][1]];
            let diag = two[0][0] + two[1][1];
            let product = rows[0] * cols[0] + rows[1] * cols[1];
            (diag, product, m.total() as u128)
        }
    };
    if total == 0 {
        return Err(Error::Evaluation("empty confusion matrix".to_string()));
    }
    let denominator = (total * total) as i128 - marginal_product as i128;
    if denominator == 0 {
        return Err(Error::Undefined(
            "kappa is undefined when expected agreement is 1".to_string(),
        ));
    }
    let numerator = (total * diag) as i128 - marginal_product as i128;
    Ok(numerator as f64 / denominator as f64)
}

/// Exact and near agreement plus a leniency breakdown of the gross
/// mismatches (label difference of two or more). The lenient fraction is
/// the share of gross mismatches where the predicted label is the higher
/// one; it is `None` when there are no gross mismatches.
#[derive(Debug, Clone, PartialEq)]
pub struct AgreementStats {
    pub total: u64,
    pub exact_fraction: f64,
    pub off_by_one_fraction: f64,
    pub gross_mismatch_count: u64,
    pub lenient_fraction_of_gross: Option<f64>,
}

pub fn agreement_stats(m: &ConfusionMatrix) -> Result<AgreementStats> {
    let total = m.total();
    if total == 0 {
        return Err(Error::Evaluation("empty confusion matrix".to_string()));
    }
    let mut exact = 0u64;
    let mut off_by_one = 0u64;
    let mut gross = 0u64;
    let mut lenient = 0u64;
    for predicted in 0..4u8 {
        for judged in 0..4u8 {
            let count = m.count(predicted, judged);
            match predicted.abs_diff(judged) {
                0 => exact += count,
                1 => off_by_one += count,
                _ => {
                    gross += count;
                    if predicted > judged {
                        lenient += count;
                    }
                }
            }
        }
    }
    Ok(AgreementStats {
        total,
        exact_fraction: exact as f64 / total as f64,
        off_by_one_fraction: off_by_one as f64 / total as f64,
        gross_mismatch_count: gross,
        lenient_fraction_of_gross: if gross == 0 {
            None
        } else {
            Some(lenient as f64 / gross as f64)
        },
    })
}

/// Pearson correlations between one-hot indicator variables: one
/// variable per (source, level), where sources are the criteria plus the
/// predicted label (`L`) and the human label (`J`). Cells where either
/// indicator is constant are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorCorrelations {
    pub variables: Vec<(String, u8)>,
    pub matrix: Vec<Vec<Option<f64>>>,
    pub pair_count: usize,
}

/// Builds the indicator correlation matrix over the pairs that have a
/// grade for every criterion plus both a predicted and a human label.
pub fn indicator_correlations(
    store: &GradeStore,
    criteria: &CriteriaSet,
    pred: &JudgmentSet,
    gold: &JudgmentSet,
    model_id: Option<&str>,
) -> Result<IndicatorCorrelations> {
    let pairs = collect_pair_grades(store, criteria, model_id)?;
    let mut sources: Vec<(String, Vec<u8>)> = criteria
        .initials()
        .into_iter()
        .map(|initial| (initial, Vec::new()))
        .collect();
    sources.push(("L".to_string(), Vec::new()));
    sources.push(("J".to_string(), Vec::new()));
    let mut kept = 0usize;
    for pair in &pairs {
        let Some(predicted) = pred.get(&pair.query_id, &pair.doc_id) else {
            continue;
        };
        let Some(judged) = gold.get(&pair.query_id, &pair.doc_id) else {
            continue;
        };
        for (criterion, slot) in criteria.iter().zip(&mut sources) {
            slot.1.push(pair.grades[&criterion.key]);
        }
        let n = sources.len();
        sources[n - 2].1.push(predicted);
        sources[n - 1].1.push(judged);
        kept += 1;
    }
    if kept < 2 {
        return Err(Error::Evaluation(format!(
            "indicator correlations need at least 2 pairs with both labels, got {kept}"
        )));
    }
    let mut variables = Vec::new();
    let mut vectors: Vec<Vec<bool>> = Vec::new();
    for (name, values) in &sources {
        for level in 0..=MAX_LABEL {
            variables.push((name.clone(), level));
            vectors.push(values.iter().map(|v| *v == level).collect());
        }
    }
    let matrix = vectors
        .iter()
        .map(|a| vectors.iter().map(|b| binary_pearson(a, b)).collect())
        .collect();
    Ok(IndicatorCorrelations {
        variables,
        matrix,
        pair_count: kept,
    })
}

fn binary_pearson(a: &[bool], b: &[bool]) -> Option<f64> {
    let n = a.len() as i128;
    let sa = a.iter().filter(|v| **v).count() as i128;
    let sb = b.iter().filter(|v| **v).count() as i128;
    let sab = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as i128;
    let da = n * sa - sa * sa;
    let db = n * sb - sb * sb;
    if da == 0 || db == 0 {
        return None;
    }
    let numerator = n * sab - sa * sb;
    Some(numerator as f64 / ((da as f64) * (db as f64)).sqrt())
}

/// How criterion grades pattern together per pair: the fraction of pairs
/// whose grades are all high (2 or more), all low (1 or less), or mixed,
/// plus every distinct grade tuple ranked by count.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternStats {
    pub pair_count: u64,
    pub high_only_fraction: f64,
    pub low_only_fraction: f64,
    pub mixed_fraction: f64,
    pub top_patterns: Vec<(Vec<u8>, u64)>,
}

pub fn pattern_stats(
    store: &GradeStore,
    criteria: &CriteriaSet,
    model_id: Option<&str>,
) -> Result<PatternStats> {
    let pairs = collect_pair_grades(store, criteria, model_id)?;
    let mut counts: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    let (mut high, mut low, mut mixed) = (0u64, 0u64, 0u64);
    for pair in &pairs {
        let tuple: Vec<u8> = criteria.iter().map(|c| pair.grades[&c.key]).collect();
        if tuple.iter().all(|g| *g >= 2) {
            high += 1;
        } else if tuple.iter().all(|g| *g <= 1) {
            low += 1;
        } else {
            mixed += 1;
        }
        *counts.entry(tuple).or_insert(0) += 1;
    }
    let total = pairs.len() as u64;
    let mut top_patterns: Vec<(Vec<u8>, u64)> = counts.into_iter().collect();
    top_patterns.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(PatternStats {
        pair_count: total,
        high_only_fraction: high as f64 / total as f64,
        low_only_fraction: low as f64 / total as f64,
        mixed_fraction: mixed as f64 / total as f64,
        top_patterns,
    })
}

/// One point of the auto-versus-manual score comparison: either a whole
/// system (`query_id` is `None`) or one of its queries.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterRow {
    pub system_id: String,
    pub query_id: Option<String>,
    pub auto_score: f64,
    pub manual_score: f64,
}

/// Scores every system under both judgment sets and emits one row per
/// system followed by one row per (system, query) shared by both
/// evaluations. Systems come out in ascending id order.
pub fn scatter_export(
    runs: &[SystemRun],
    pred: &JudgmentSet,
    gold: &JudgmentSet,
    spec: &MetricSpec,
) -> Result<Vec<ScatterRow>> {
    if runs.len() < 2 {
        return Err(Error::Evaluation(format!(
            "scatter export needs at least 2 systems, got {}",
            runs.len()
        )));
    }
    let mut order: Vec<&SystemRun> = runs.iter().collect();
    order.sort_by(|a, b| a.system_id().cmp(b.system_id()));
    for window in order.windows(2) {
        if window[0].system_id() == window[1].system_id() {
            return Err(Error::Validation(format!(
                "duplicate system id '{}'",
                window[0].system_id()
            )));
        }
    }
    let mut rows = Vec::new();
    for run in order {
        let auto = evaluate_system(run, pred, spec)?;
        let manual = evaluate_system(run, gold, spec)?;
        rows.push(ScatterRow {
            system_id: run.system_id().to_string(),
            query_id: None,
            auto_score: auto.mean,
            manual_score: manual.mean,
        });
        for (query_id, auto_score) in &auto.per_query {
            let Some(manual_score) = manual.per_query.get(query_id) else {
                continue;
            };
            rows.push(ScatterRow {
                system_id: run.system_id().to_string(),
                query_id: Some(query_id.clone()),
                auto_score: *auto_score,
                manual_score: *manual_score,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::default_criteria;
    use crate::grading::GradeRecord;
    use crate::trec::{JudgmentSource, RunEntry};

    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn board(rows: &[(&str, f64)]) -> Leaderboard {
        Leaderboard::new(
            "ndcg_cut_10",
            rows.iter().map(|(id, s)| (id.to_string(), *s)).collect(),
        )
        .unwrap()
    }

    fn oracle_tau(x: &[f64], y: &[f64]) -> Option<f64> {
        use std::cmp::Ordering;
        let n = x.len();
        let (mut concordant, mut discordant) = (0i128, 0i128);
        let (mut tie_x, mut tie_y) = (0i128, 0i128);
        for i in 0..n {
            for j in i + 1..n {
                let dx = x[i].total_cmp(&x[j]);
                let dy = y[i].total_cmp(&y[j]);
                if dx == Ordering::Equal || dy == Ordering::Equal {
                    if dx == Ordering::Equal {
                        tie_x += 1;
                    }
                    if dy == Ordering::Equal {
                        tie_y += 1;
                    }
                } else if dx == dy {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
        let n0 = pair_count(n);
        let d1 = n0 - tie_x;
        let d2 = n0 - tie_y;
        if d1 == 0 || d2 == 0 {
            return None;
        }
        Some((concordant - discordant) as f64 / ((d1 as f64) * (d2 as f64)).sqrt())
    }

    fn oracle_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
        let rank_twice = |values: &[f64]| -> Vec<i128> {
            values
                .iter()
                .map(|v| {
                    let less = values.iter().filter(|o| o.total_cmp(v).is_lt()).count();
                    let equal = values.iter().filter(|o| o.to_bits() == v.to_bits()).count();
                    (2 * less + equal + 1) as i128
                })
                .collect()
        };
        let rx = rank_twice(x);
        let ry = rank_twice(y);
        let n = x.len() as i128;
        let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0i128, 0i128, 0i128, 0i128, 0i128);
        for (&a, &b) in rx.iter().zip(&ry) {
            sx += a;
            sy += b;
            sxy += a * b;
            sxx += a * a;
            syy += b * b;
        }
        let dx = n * sxx - sx * sx;
        let dy = n * syy - sy * sy;
        if dx == 0 || dy == 0 {
            return None;
        }
        Some((n * sxy - sx * sy) as f64 / ((dx as f64) * (dy as f64)).sqrt())
    }

    #[test]
    fn leaderboard_orders_rows_and_breaks_ties_by_id() {
        let lb = board(&[("b", 0.5), ("a", 0.9), ("c", 0.5), ("d", 0.1)]);
        let ids: Vec<&str> = lb.rows().iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c", "d"]);
        assert!(Leaderboard::new("map", vec![]).is_err());
        assert!(Leaderboard::new(
            "map",
            vec![("a".to_string(), 0.1), ("a".to_string(), 0.2)]
        )
        .is_err());
        assert!(Leaderboard::new("map", vec![("a".to_string(), f64::NAN)]).is_err());
    }

    #[test]
    fn build_leaderboard_ranks_planted_systems() {
        let qrels = {
            let mut set = JudgmentSet::new(JudgmentSource::Human);
            set.insert("q1", "d1", 3).unwrap();
            set.insert("q1", "d2", 0).unwrap();
            set
        };
        let run = |id: &str, first: &str, second: &str| {
            SystemRun::from_entries(
                id,
                vec![
                    RunEntry {
                        query_id: "q1".to_string(),
                        doc_id: first.to_string(),
                        rank: 1,
                        score: 2.0,
                    },
                    RunEntry {
                        query_id: "q1".to_string(),
                        doc_id: second.to_string(),
                        rank: 2,
                        score: 1.0,
                    },
                ],
            )
            .unwrap()
        };
        let good = run("good", "d1", "d2");
        let bad = run("bad", "d2", "d1");
        let spec = MetricSpec::ndcg(10).unwrap();
        let lb = build_leaderboard(&[bad, good], &qrels, &spec).unwrap();
        let ids: Vec<&str> = lb.rows().iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["good", "bad"]);
        assert_eq!(lb.metric(), "ndcg_cut_10");

        let lone = run("solo", "d1", "d2");
        assert!(build_leaderboard(&[lone], &qrels, &spec).is_err());
    }

    #[test]
    fn correlations_hit_the_exact_endpoints() {
        let a = board(&[("s1", 0.9), ("s2", 0.6), ("s3", 0.3)]);
        let same = board(&[("s1", 0.8), ("s2", 0.5), ("s3", 0.2)]);
        let reversed = board(&[("s1", 0.1), ("s2", 0.5), ("s3", 0.9)]);
        assert_eq!(kendall_tau(&a, &same).unwrap(), 1.0);
        assert_eq!(kendall_tau(&a, &reversed).unwrap(), -1.0);
        assert_eq!(spearman_rho(&a, &same).unwrap(), 1.0);
        assert_eq!(spearman_rho(&a, &reversed).unwrap(), -1.0);
        assert_eq!(kendall_tau(&a, &a).unwrap(), 1.0);
        assert_eq!(spearman_rho(&a, &a).unwrap(), 1.0);

        let constant = board(&[("s1", 0.5), ("s2", 0.5), ("s3", 0.5)]);
        assert!(matches!(
            kendall_tau(&a, &constant),
            Err(Error::Undefined(_))
        ));
        assert!(matches!(
            spearman_rho(&constant, &a),
            Err(Error::Undefined(_))
        ));

        let other_systems = board(&[("s1", 0.9), ("s2", 0.6), ("x", 0.3)]);
        assert!(kendall_tau(&a, &other_systems).is_err());
        assert!(spearman_rho(&a, &other_systems).is_err());
    }

    #[test]
    fn correlations_match_pairwise_oracles_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut tested = 0;
        for _ in 0..400 {
            let n = rng.random_range(2..=8usize);
            let x: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..4u8)) / 4.0).collect();
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..4u8)) / 4.0).collect();
            match (tau_b(&x, &y), oracle_tau(&x, &y)) {
                (Ok(mine), Some(reference)) => {
                    assert_eq!(mine.to_bits(), reference.to_bits());
                    tested += 1;
                }
                (Err(Error::Undefined(_)), None) => {}
                (mine, reference) => panic!("tau disagreement: {mine:?} vs {reference:?}"),
            }
            match (spearman(&x, &y), oracle_spearman(&x, &y)) {
                (Ok(mine), Some(reference)) => {
                    assert_eq!(mine.to_bits(), reference.to_bits());
                }
                (Err(Error::Undefined(_)), None) => {}
                (mine, reference) => panic!("rho disagreement: {mine:?} vs {reference:?}"),
            }
        }
        assert!(tested > 100);

        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = 40;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..1000) as f64 / 1000.0).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..1000) as f64 / 1000.0).collect();
        assert_eq!(
            tau_b(&x, &y).unwrap().to_bits(),
            oracle_tau(&x, &y).unwrap().to_bits()
        );
        assert_eq!(
            spearman(&x, &y).unwrap().to_bits(),
            oracle_spearman(&x, &y).unwrap().to_bits()
        );
    }

    #[test]
    fn correlations_are_symmetric_and_rank_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let n = rng.random_range(3..=7usize);
            let rows: Vec<(String, f64)> = (0..n)
                .map(|i| (format!("s{i}"), f64::from(rng.random_range(0..5u8)) / 5.0))
                .collect();
            let other: Vec<(String, f64)> = (0..n)
                .map(|i| (format!("s{i}"), f64::from(rng.random_range(0..5u8)) / 5.0))
                .collect();
            let a = Leaderboard::new("map", rows.clone()).unwrap();
            let b = Leaderboard::new("map", other).unwrap();
            let stretched = Leaderboard::new(
                "map",
                rows.iter()
                    .map(|(id, s)| (id.clone(), s.exp() * 3.0 + 1.0))
                    .collect(),
            )
            .unwrap();
            let tau_ab = kendall_tau(&a, &b);
            let tau_ba = kendall_tau(&b, &a);
            match (tau_ab, tau_ba) {
                (Ok(p), Ok(q)) => {
                    assert_eq!(p.to_bits(), q.to_bits());
                    let tau_sb = kendall_tau(&stretched, &b).unwrap();
                    assert_eq!(p.to_bits(), tau_sb.to_bits());
                }
                (Err(_), Err(_)) => {}
                other => panic!("asymmetric tau outcome: {other:?}"),
            }
            match (spearman_rho(&a, &b), spearman_rho(&b, &a)) {
                (Ok(p), Ok(q)) => {
                    assert_eq!(p.to_bits(), q.to_bits());
                    let rho_sb = spearman_rho(&stretched, &b).unwrap();
                    assert_eq!(p.to_bits(), rho_sb.to_bits());
                }
                (Err(_), Err(_)) => {}
                other => panic!("asymmetric rho outcome: {other:?}"),
            }
        }
    }

    fn table6() -> ConfusionMatrix {
        ConfusionMatrix::from_counts([
            [771, 191, 43, 10],
            [409, 244, 72, 26],
            [692, 682, 596, 243],
            [122, 116, 97, 98],
        ])
    }

    #[test]
    fn confusion_tallies_shared_pairs() {
        let mut pred = JudgmentSet::new(JudgmentSource::Predicted);
        let mut gold = JudgmentSet::new(JudgmentSource::Human);
        for i in 0..10 {
            pred.insert("q1", &format!("d{i}"), 2).unwrap();
            gold.insert("q1", &format!("d{i}"), 2).unwrap();
        }
        pred.insert("q1", "extra_pred", 3).unwrap();
        gold.insert("q1", "extra_gold", 1).unwrap();
        let m = confusion(&pred, &gold).unwrap();
        assert_eq!(m.count(2, 2), 10);
        assert_eq!(m.total(), 10);

        let mut disjoint = JudgmentSet::new(JudgmentSource::Human);
        disjoint.insert("q9", "d9", 1).unwrap();
        assert!(confusion(&pred, &disjoint).is_err());
    }

    #[test]
    fn confusion_matches_brute_force_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..20 {
            let mut pred = JudgmentSet::new(JudgmentSource::Predicted);
            let mut gold = JudgmentSet::new(JudgmentSource::Human);
            let mut expected = [[0u64; 4]; 4];
            for i in 0..rng.random_range(1..60usize) {
                let doc = format!("d{i}");
                let p = rng.random_range(0..=3u8);
                let g = rng.random_range(0..=3u8);
                let in_pred = rng.random_bool(0.8);
                let in_gold = rng.random_bool(0.8);
                if in_pred {
                    pred.insert("q1", &doc, p).unwrap();
                }
                if in_gold {
                    gold.insert("q1", &doc, g).unwrap();
                }
                if in_pred && in_gold {
                    expected[p as usize][g as usize] += 1;
                }
            }
            if expected.iter().flatten().sum::<u64>() == 0 {
                continue;
            }
            let m = confusion(&pred, &gold).unwrap();
            assert_eq!(m.counts(), &expected);
        }
    }

    #[test]
    fn published_agreement_matrix_reproduces_its_statistics() {
        let m = table6();
        assert_eq!(m.total(), 4412);
        assert_eq!(m.predicted_totals(), [1015, 751, 2213, 433]);
        assert_eq!(m.judged_totals(), [1994, 1233, 808, 377]);

        let stats = agreement_stats(&m).unwrap();
        assert_eq!(stats.exact_fraction, 1709.0 / 4412.0);
        assert_eq!(stats.off_by_one_fraction, 1694.0 / 4412.0);
        assert_eq!(stats.gross_mismatch_count, 1009);
        assert_eq!(stats.lenient_fraction_of_gross, Some(930.0 / 1009.0));
        assert!((stats.exact_fraction - 0.387).abs() < 5e-4);
        assert!((stats.off_by_one_fraction - 0.384).abs() < 5e-4);
        assert!((stats.lenient_fraction_of_gross.unwrap() - 0.922).abs() < 5e-4);

        let kappa = cohen_kappa(&m, Some(&|label| label == 0)).unwrap();
        assert!((0.29..=0.31).contains(&kappa));
        assert!((kappa - 2755484.0 / 9227888.0).abs() < 1e-15);
    }

    #[test]
    fn kappa_hits_endpoints_and_degenerate_cases() {
        let mut perfect = [[0u64; 4]; 4];
        for i in 0..4 {
            perfect[i][i] = 25;
        }
        let m = ConfusionMatrix::from_counts(perfect);
        assert_eq!(cohen_kappa(&m, None).unwrap(), 1.0);

        let mut single = [[0u64; 4]; 4];
        single[1][1] = 50;
        let m = ConfusionMatrix::from_counts(single);
        assert!(matches!(
            cohen_kappa(&m, None),
            Err(Error::Undefined(_))
        ));
        assert!(cohen_kappa(&ConfusionMatrix::from_counts([[0; 4]; 4]), None).is_err());
    }

    #[test]
    fn kappa_matches_float_formula_and_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let permutations = [
            [0usize, 1, 2, 3],
            [3, 2, 1, 0],
            [1, 0, 3, 2],
            [2, 3, 0, 1],
        ];
        for _ in 0..40 {
            let mut counts = [[0u64; 4]; 4];
            for row in counts.iter_mut() {
                for cell in row.iter_mut() {
                    *cell = rng.random_range(0..30);
                }
            }
            let m = ConfusionMatrix::from_counts(counts);
            let Ok(kappa) = cohen_kappa(&m, None) else {
                continue;
            };
            let total = m.total() as f64;
            let p_o = (0..4).map(|i| counts[i][i] as f64).sum::<f64>() / total;
            let rows = m.predicted_totals();
            let cols = m.judged_totals();
            let p_e = (0..4)
                .map(|i| rows[i] as f64 * cols[i] as f64 / (total * total))
                .sum::<f64>();
            assert!((kappa - (p_o - p_e) / (1.0 - p_e)).abs() < 1e-12);

            for permutation in &permutations {
                let mut shuffled = [[0u64; 4]; 4];
                for p in 0..4 {
                    for j in 0..4 {
                        shuffled[permutation[p]][permutation[j]] = counts[p][j];
                    }
                }
                let again = cohen_kappa(&ConfusionMatrix::from_counts(shuffled), None).unwrap();
                assert_eq!(kappa.to_bits(), again.to_bits());
            }
        }
    }

    #[test]
    fn agreement_fractions_partition_the_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..40 {
            let mut counts = [[0u64; 4]; 4];
            for row in counts.iter_mut() {
                for cell in row.iter_mut() {
                    *cell = rng.random_range(0..50);
                }
            }
            let m = ConfusionMatrix::from_counts(counts);
            if m.total() == 0 {
                continue;
            }
            let stats = agreement_stats(&m).unwrap();
            let sum = stats.exact_fraction
                + stats.off_by_one_fraction
                + stats.gross_mismatch_count as f64 / stats.total as f64;
            assert!((sum - 1.0).abs() < 1e-12);

            let mut gross = 0u64;
            let mut lenient = 0u64;
            for p in 0..4 {
                for j in 0..4 {
                    if (p as i32 - j as i32).abs() >= 2 {
                        gross += counts[p][j];
                        if p > j {
                            lenient += counts[p][j];
                        }
                    }
                }
            }
            assert_eq!(stats.gross_mismatch_count, gross);
            if gross == 0 {
                assert_eq!(stats.lenient_fraction_of_gross, None);
            } else {
                assert_eq!(
                    stats.lenient_fraction_of_gross,
                    Some(lenient as f64 / gross as f64)
                );
            }
        }
        let identity = {
            let mut counts = [[0u64; 4]; 4];
            for i in 0..4 {
                counts[i][i] = 7;
            }
            ConfusionMatrix::from_counts(counts)
        };
        let stats = agreement_stats(&identity).unwrap();
        assert_eq!(stats.exact_fraction, 1.0);
        assert_eq!(stats.gross_mismatch_count, 0);
        assert_eq!(stats.lenient_fraction_of_gross, None);
    }

    fn store_with(
        rows: &[(&str, &str, [u8; 4])],
        model: &str,
    ) -> GradeStore {
        let keys = ["exactness", "topicality", "coverage", "contextual_fit"];
        let mut store = GradeStore::in_memory();
        for (q, d, grades) in rows {
            for (key, grade) in keys.iter().zip(grades) {
                store
                    .insert(GradeRecord {
                        query_id: q.to_string(),
                        doc_id: d.to_string(),
                        criterion_key: key.to_string(),
                        grade: *grade,
                        parse_failed: false,
                        raw_output: grade.to_string(),
                        model_id: model.to_string(),
                        prompt_digest: "h".to_string(),
                        timestamp: 0,
                    })
                    .unwrap();
            }
        }
        store
    }

    #[test]
    fn indicator_correlations_detect_identical_variables() {
        let mut rows = Vec::new();
        let mut pred = JudgmentSet::new(JudgmentSource::Predicted);
        let mut gold = JudgmentSet::new(JudgmentSource::Human);
        let docs: Vec<String> = (0..8).map(|i| format!("d{i}")).collect();
        for (i, doc) in docs.iter().enumerate() {
            let label = (i % 4) as u8;
            rows.push(("q1", doc.as_str(), [0, label, 1, 2]));
            pred.insert("q1", doc, 1).unwrap();
            gold.insert("q1", doc, label).unwrap();
        }
        let store = store_with(&rows, "m");
        let criteria = default_criteria();
        let out = indicator_correlations(&store, &criteria, &pred, &gold, None).unwrap();
        assert_eq!(out.pair_count, 8);
        assert_eq!(out.variables.len(), 24);
        for level in 0..=3u8 {
            let t = out
                .variables
                .iter()
                .position(|(s, l)| s == "T" && *l == level)
                .unwrap();
            let j = out
                .variables
                .iter()
                .position(|(s, l)| s == "J" && *l == level)
                .unwrap();
            assert_eq!(out.matrix[t][j], Some(1.0));
            assert_eq!(out.matrix[t][t], Some(1.0));
        }
        let l1 = out
            .variables
            .iter()
            .position(|(s, l)| s == "L" && *l == 1)
            .unwrap();
        assert_eq!(out.matrix[l1][l1], None);
    }

    #[test]
    fn indicator_correlations_vanish_on_independent_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let mut rows = Vec::new();
        let mut pred = JudgmentSet::new(JudgmentSource::Predicted);
        let mut gold = JudgmentSet::new(JudgmentSource::Human);
        let docs: Vec<String> = (0..10_000).map(|i| format!("d{i:05}")).collect();
        for doc in &docs {
            let grades = [
                rng.random_range(0..=3u8),
                rng.random_range(0..=3u8),
                rng.random_range(0..=3u8),
                rng.random_range(0..=3u8),
            ];
            rows.push(("q1", doc.as_str(), grades));
            pred.insert("q1", doc, rng.random_range(0..=3u8)).unwrap();
            gold.insert("q1", doc, rng.random_range(0..=3u8)).unwrap();
        }
        let store = store_with(&rows, "m");
        let criteria = default_criteria();
        let out = indicator_correlations(&store, &criteria, &pred, &gold, None).unwrap();
        let sources = 6;
        for a in 0..out.variables.len() {
            for b in 0..out.variables.len() {
                let cell = out.matrix[a][b];
                assert_eq!(cell, out.matrix[b][a]);
                if a == b {
                    assert_eq!(cell, Some(1.0));
                }
                if a / 4 != b / 4 {
                    let value = cell.unwrap();
                    assert!(
                        value.abs() < 0.05,
                        "unexpected correlation {value} between {:?} and {:?}",
                        out.variables[a],
                        out.variables[b]
                    );
                }
            }
        }
        assert_eq!(out.variables.len(), sources * 4);
    }

    #[test]
    fn indicator_correlations_match_phi_by_hand() {
        let rows = [
            ("q1", "d0", [1, 0, 0, 0]),
            ("q1", "d1", [1, 0, 0, 0]),
            ("q1", "d2", [1, 0, 0, 0]),
            ("q1", "d3", [0, 0, 0, 0]),
            ("q1", "d4", [0, 0, 0, 0]),
            ("q1", "d5", [0, 0, 0, 0]),
        ];
        let labels = [1u8, 1, 0, 1, 0, 0];
        let mut pred = JudgmentSet::new(JudgmentSource::Predicted);
        let mut gold = JudgmentSet::new(JudgmentSource::Human);
        for (i, (q, d, _)) in rows.iter().enumerate() {
            pred.insert(q, d, labels[i]).unwrap();
            gold.insert(q, d, 0).unwrap();
        }
        let store = store_with(&rows, "m");
        let criteria = default_criteria();
        let out = indicator_correlations(&store, &criteria, &pred, &gold, None).unwrap();
        let e1 = out
            .variables
            .iter()
            .position(|(s, l)| s == "E" && *l == 1)
            .unwrap();
        let l1 = out
            .variables
            .iter()
            .position(|(s, l)| s == "L" && *l == 1)
            .unwrap();
        let phi = (2.0f64 * 2.0 - 1.0 * 1.0) / ((3.0f64) * 3.0 * 3.0 * 3.0).sqrt();
        assert!((out.matrix[e1][l1].unwrap() - phi).abs() < 1e-15);
    }

    #[test]
    fn indicator_correlations_need_two_covered_pairs() {
        let rows = [("q1", "d0", [1, 0, 0, 0]), ("q1", "d1", [1, 2, 0, 0])];
        let store = store_with(&rows, "m");
        let criteria = default_criteria();
        let mut pred = JudgmentSet::new(JudgmentSource::Predicted);
        let mut gold = JudgmentSet::new(JudgmentSource::Human);
        pred.insert("q1", "d0", 1).unwrap();
        gold.insert("q1", "d0", 1).unwrap();
        assert!(matches!(
            indicator_correlations(&store, &criteria, &pred, &gold, None),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn pattern_stats_split_high_low_and_mixed() {
        let criteria = default_criteria();
        let all_zero = store_with(
            &[("q1", "d0", [0, 0, 0, 0]), ("q1", "d1", [0, 0, 0, 0])],
            "m",
        );
        let stats = pattern_stats(&all_zero, &criteria, None).unwrap();
        assert_eq!(stats.low_only_fraction, 1.0);
        assert_eq!(stats.high_only_fraction, 0.0);
        assert_eq!(stats.top_patterns[0], (vec![0, 0, 0, 0], 2));

        let high = store_with(&[("q1", "d0", [2, 2, 2, 3])], "m");
        let stats = pattern_stats(&high, &criteria, None).unwrap();
        assert_eq!(stats.high_only_fraction, 1.0);

        assert!(pattern_stats(&GradeStore::in_memory(), &criteria, None).is_err());
    }

    #[test]
    fn pattern_stats_match_brute_force_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let mut rows = Vec::new();
        let docs: Vec<String> = (0..300).map(|i| format!("d{i:03}")).collect();
        for doc in &docs {
            rows.push((
                "q1",
                doc.as_str(),
                [
                    rng.random_range(0..=3u8),
                    rng.random_range(0..=3u8),
                    rng.random_range(0..=3u8),
                    rng.random_range(0..=3u8),
                ],
            ));
        }
        let store = store_with(&rows, "m");
        let criteria = default_criteria();
        let stats = pattern_stats(&store, &criteria, None).unwrap();

        let mut expected: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
        let (mut high, mut low) = (0u64, 0u64);
        for (_, _, grades) in &rows {
            *expected.entry(grades.to_vec()).or_insert(0) += 1;
            if grades.iter().all(|g| *g >= 2) {
                high += 1;
            } else if grades.iter().all(|g| *g <= 1) {
                low += 1;
            }
        }
        let total = rows.len() as f64;
        assert_eq!(stats.high_only_fraction, high as f64 / total);
        assert_eq!(stats.low_only_fraction, low as f64 / total);
        assert!(
            (stats.high_only_fraction + stats.low_only_fraction + stats.mixed_fraction - 1.0)
                .abs()
                < 1e-12
        );
        for (pattern, count) in &stats.top_patterns {
            assert_eq!(expected.get(pattern), Some(count));
        }
        assert_eq!(stats.top_patterns.len(), expected.len());
        for window in stats.top_patterns.windows(2) {
            assert!(
                window[0].1 > window[1].1
                    || (window[0].1 == window[1].1 && window[0].0 < window[1].0)
            );
        }
    }

    fn scatter_fixture() -> (Vec<SystemRun>, JudgmentSet) {
        let mut gold = JudgmentSet::new(JudgmentSource::Human);
        let labels = [3u8, 2, 2, 1, 0, 0];
        for q in ["q1", "q2"] {
            for (i, label) in labels.iter().enumerate() {
                gold.insert(q, &format!("d{i}"), *label).unwrap();
            }
        }
        let order_for = |shift: usize| -> Vec<usize> {
            (0..6).map(|i| (i + shift) % 6).collect()
        };
        let mut runs = Vec::new();
        for (idx, id) in ["alpha", "beta", "gamma"].iter().enumerate() {
            let mut entries = Vec::new();
            for q in ["q1", "q2"] {
                for (pos, doc_index) in order_for(idx).iter().enumerate() {
                    entries.push(RunEntry {
                        query_id: q.to_string(),
                        doc_id: format!("d{doc_index}"),
                        rank: pos as u32 + 1,
                        score: (6 - pos) as f64,
                    });
                }
            }
            runs.push(SystemRun::from_entries(id, entries).unwrap());
        }
        (runs, gold)
    }

    #[test]
    fn scatter_export_emits_system_then_query_rows() {
        let (runs, gold) = scatter_fixture();
        let spec = MetricSpec::ndcg(10).unwrap();
        let rows = scatter_export(&runs, &gold, &gold, &spec).unwrap();
        assert_eq!(rows.len(), 3 + 6);
        assert_eq!(rows[0].system_id, "alpha");
        assert_eq!(rows[0].query_id, None);
        assert_eq!(rows[1].query_id.as_deref(), Some("q1"));
        assert_eq!(rows[2].query_id.as_deref(), Some("q2"));
        assert_eq!(rows[3].system_id, "beta");
        for row in &rows {
            assert_eq!(row.auto_score.to_bits(), row.manual_score.to_bits());
        }
        assert!(scatter_export(&runs[..1], &gold, &gold, &spec).is_err());
    }

    #[test]
    fn lenient_labels_flatter_every_system_here() {
        let (runs, gold) = scatter_fixture();
        let mut pred = JudgmentSet::new(JudgmentSource::Predicted);
        for (q, d, label) in gold.entries() {
            pred.insert(q, d, (label + 1).min(3)).unwrap();
        }
        let spec = MetricSpec::ndcg(10).unwrap();
        let rows = scatter_export(&runs, &pred, &gold, &spec).unwrap();
        for row in rows.iter().filter(|r| r.query_id.is_none()) {
            assert!(
                row.auto_score >= row.manual_score - 1e-12,
                "system {} scored {} auto vs {} manual",
                row.system_id,
                row.auto_score,
                row.manual_score
            );
        }
    }
}
