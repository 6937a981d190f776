//! Turning per-criterion grades into a single 0-3 relevance label.
//!
//! Four strategies are supported: asking the model to weigh the grades
//! (prompt), thresholding the grade sum, a smoothed categorical naive
//! Bayes fit on a training split, and passing a single criterion's grade
//! through unchanged. The sum thresholds can also be tuned against a dev
//! leaderboard by exhaustive search.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::criteria::{render_aggregation_prompt, CriteriaSet};
use crate::error::Error;
use crate::grading::{collect_pair_grades, Corpus, GradeStore};
use crate::llm::{extract_grade, ChatRequest, LlmClient};
use crate::meta::{build_leaderboard, kendall_tau, spearman_rho, Leaderboard};
use crate::metrics::MetricSpec;
use crate::trec::{JudgmentSet, JudgmentSource, SystemRun};
use crate::{Result, MAX_LABEL};

/// Sum-to-label bins: a grade sum of `t3` or more maps to 3, `t2` to 2,
/// `t1` to 1, anything lower to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdMap {
    t3: u32,
    t2: u32,
    t1: u32,
    arity: usize,
}

impl ThresholdMap {
    pub fn new(t3: u32, t2: u32, t1: u32, arity: usize) -> Result<ThresholdMap> {
        if arity == 0 {
            return Err(Error::Validation(
                "thresholds need at least one criterion".to_string(),
            ));
        }
        let max_sum = 3 * arity as u32;
        if t3 > max_sum {
            return Err(Error::Validation(format!(
                "threshold {t3} exceeds the maximum grade sum {max_sum}"
            )));
        }
        if !(t3 > t2 && t2 > t1) {
            return Err(Error::Validation(format!(
                "thresholds must strictly decrease, got ({t3}, {t2}, {t1})"
            )));
        }
        Ok(ThresholdMap { t3, t2, t1, arity })
    }

    /// The published default bins for the four standard criteria:
    /// 10-12 maps to 3, 7-9 to 2, 5-6 to 1, 0-4 to 0.
    pub fn standard() -> ThresholdMap {
        ThresholdMap {
            t3: 10,
            t2: 7,
            t1: 5,
            arity: 4,
        }
    }

    /// Scales the standard bins proportionally to a different criterion
    /// count, rounding each threshold to the nearest integer.
    pub fn scaled(arity: usize) -> Result<ThresholdMap> {
        if arity == 0 {
            return Err(Error::Validation(
                "thresholds need at least one criterion".to_string(),
            ));
        }
        let max_sum = 3.0 * arity as f64;
        let scale = |t: f64| (t / 12.0 * max_sum).round() as u32;
        ThresholdMap::new(scale(10.0), scale(7.0), scale(5.0), arity)
    }

    pub fn label_for(&self, sum: u32) -> u8 {
        if sum >= self.t3 {
            3
        } else if sum >= self.t2 {
            2
        } else if sum >= self.t1 {
            1
        } else {
            0
        }
    }

    pub fn values(&self) -> (u32, u32, u32) {
        (self.t3, self.t2, self.t1)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }
}

fn checked_grades(grades: &BTreeMap<String, u8>, criteria: &CriteriaSet) -> Result<Vec<u8>> {
    for key in grades.keys() {
        if criteria.get(key).is_none() {
            return Err(Error::Validation(format!(
                "grade for unknown criterion '{key}'"
            )));
        }
    }
    let mut out = Vec::with_capacity(criteria.len());
    for criterion in criteria.iter() {
        let Some(grade) = grades.get(&criterion.key) else {
            return Err(Error::Validation(format!(
                "missing grade for criterion '{}'",
                criterion.key
            )));
        };
        if *grade > MAX_LABEL {
            return Err(Error::Validation(format!(
                "grade {grade} for '{}' is out of range",
                criterion.key
            )));
        }
        out.push(*grade);
    }
    Ok(out)
}

/// Sums the grades and bins the sum.
pub fn aggregate_sum(
    grades: &BTreeMap<String, u8>,
    criteria: &CriteriaSet,
    thresholds: &ThresholdMap,
) -> Result<u8> {
    if thresholds.arity() != criteria.len() {
        return Err(Error::Validation(format!(
            "thresholds are for {} criteria but the set has {}",
            thresholds.arity(),
            criteria.len()
        )));
    }
    let checked = checked_grades(grades, criteria)?;
    let sum: u32 = checked.iter().map(|g| u32::from(*g)).sum();
    Ok(thresholds.label_for(sum))
}

/// Uses one criterion's grade as the label.
pub fn aggregate_single(
    grades: &BTreeMap<String, u8>,
    criteria: &CriteriaSet,
    key: &str,
) -> Result<u8> {
    let checked = checked_grades(grades, criteria)?;
    criteria
        .iter()
        .position(|criterion| criterion.key == key)
        .map(|index| checked[index])
        .ok_or_else(|| Error::Validation(format!("criterion '{key}' is not in the set")))
}

/// A categorical naive Bayes model over criterion grades with additive
/// smoothing. Probabilities are stored directly so a fitted model can be
/// inspected or serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbModel {
    criteria: Vec<String>,
    alpha: f64,
    priors: [f64; 4],
    conditionals: Vec<[[f64; 4]; 4]>,
    examples: u64,
}

impl NbModel {
    pub fn criteria(&self) -> &[String] {
        &self.criteria
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn priors(&self) -> &[f64; 4] {
        &self.priors
    }

    /// Grade distributions for one criterion, indexed `[label][grade]`.
    pub fn conditionals(&self, key: &str) -> Option<&[[f64; 4]; 4]> {
        let index = self.criteria.iter().position(|k| k == key)?;
        Some(&self.conditionals[index])
    }

    pub fn examples(&self) -> u64 {
        self.examples
    }
}

/// Fits the naive Bayes aggregator on a graded store plus human labels.
/// Every graded pair must carry a human judgment.
pub fn fit_naive_bayes(
    store: &GradeStore,
    qrels: &JudgmentSet,
    criteria: &CriteriaSet,
    alpha: f64,
    model_id: Option<&str>,
) -> Result<NbModel> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Validation(format!(
            "smoothing alpha must be positive and finite, got {alpha}"
        )));
    }
    let pairs = collect_pair_grades(store, criteria, model_id)?;
    let mut label_counts = [0u64; 4];
    let mut grade_counts = vec![[[0u64; 4]; 4]; criteria.len()];
    for pair in &pairs {
        let Some(label) = qrels.get(&pair.query_id, &pair.doc_id) else {
            return Err(Error::Validation(format!(
                "training pair ({}, {}) has no human label",
                pair.query_id, pair.doc_id
            )));
        };
        label_counts[label as usize] += 1;
        for (index, criterion) in criteria.iter().enumerate() {
            let grade = pair.grades[&criterion.key];
            grade_counts[index][label as usize][grade as usize] += 1;
        }
    }
    let examples = pairs.len() as u64;
    let mut priors = [0.0f64; 4];
    for label in 0..4 {
        priors[label] = (label_counts[label] as f64 + alpha) / (examples as f64 + 4.0 * alpha);
    }
    let mut conditionals = vec![[[0.0f64; 4]; 4]; criteria.len()];
    for (index, per_label) in grade_counts.iter().enumerate() {
        for label in 0..4 {
            for grade in 0..4 {
                conditionals[index][label][grade] = (per_label[label][grade] as f64 + alpha)
                    / (label_counts[label] as f64 + 4.0 * alpha);
            }
        }
    }
    Ok(NbModel {
        criteria: criteria.keys().iter().map(|k| k.to_string()).collect(),
        alpha,
        priors,
        conditionals,
        examples,
    })
}

/// Picks the label with the highest log posterior under the model,
/// preferring the lower label on an exact tie.
pub fn aggregate_naive_bayes(grades: &BTreeMap<String, u8>, model: &NbModel) -> Result<u8> {
    for key in grades.keys() {
        if !model.criteria.iter().any(|k| k == key) {
            return Err(Error::Validation(format!(
                "grade for criterion '{key}' the model was not fitted on"
            )));
        }
    }
    let mut indexed = Vec::with_capacity(model.criteria.len());
    for (index, key) in model.criteria.iter().enumerate() {
        let Some(grade) = grades.get(key) else {
            return Err(Error::Validation(format!(
                "missing grade for criterion '{key}'"
            )));
        };
        if *grade > MAX_LABEL {
            return Err(Error::Validation(format!(
                "grade {grade} for '{key}' is out of range"
            )));
        }
        indexed.push((index, *grade as usize));
    }
    let mut best_label = 0u8;
    let mut best_score = f64::NEG_INFINITY;
    for label in 0..4usize {
        let mut score = model.priors[label].ln();
        for (index, grade) in &indexed {
            score += model.conditionals[*index][label][*grade].ln();
        }
        if score > best_score {
            best_score = score;
            best_label = label as u8;
        }
    }
    Ok(best_label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationMethod {
    Prompt,
    Sum,
    NaiveBayes,
    Single,
}

/// A validated aggregation configuration: the method, the criteria it
/// reads, and the method's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationSpec {
    method: AggregationMethod,
    criteria: CriteriaSet,
    thresholds: Option<ThresholdMap>,
    nb_model: Option<NbModel>,
    single_key: Option<String>,
}

impl AggregationSpec {
    pub fn prompt(criteria: CriteriaSet) -> AggregationSpec {
        AggregationSpec {
            method: AggregationMethod::Prompt,
            criteria,
            thresholds: None,
            nb_model: None,
            single_key: None,
        }
    }

    pub fn sum(criteria: CriteriaSet, thresholds: ThresholdMap) -> Result<AggregationSpec> {
        if thresholds.arity() != criteria.len() {
            return Err(Error::Validation(format!(
                "thresholds are for {} criteria but the set has {}",
                thresholds.arity(),
                criteria.len()
            )));
        }
        Ok(AggregationSpec {
            method: AggregationMethod::Sum,
            criteria,
            thresholds: Some(thresholds),
            nb_model: None,
            single_key: None,
        })
    }

    pub fn naive_bayes(criteria: CriteriaSet, model: NbModel) -> Result<AggregationSpec> {
        let keys: Vec<String> = criteria.keys().iter().map(|k| k.to_string()).collect();
        if model.criteria() != keys.as_slice() {
            return Err(Error::Validation(
                "model was fitted on a different criteria set".to_string(),
            ));
        }
        Ok(AggregationSpec {
            method: AggregationMethod::NaiveBayes,
            criteria,
            thresholds: None,
            nb_model: Some(model),
            single_key: None,
        })
    }

    pub fn single(criteria: CriteriaSet, key: &str) -> Result<AggregationSpec> {
        if criteria.get(key).is_none() {
            return Err(Error::Validation(format!(
                "criterion '{key}' is not in the set"
            )));
        }
        Ok(AggregationSpec {
            method: AggregationMethod::Single,
            criteria,
            thresholds: None,
            nb_model: None,
            single_key: Some(key.to_string()),
        })
    }

    pub fn method(&self) -> AggregationMethod {
        self.method
    }

    pub fn criteria(&self) -> &CriteriaSet {
        &self.criteria
    }

    pub fn thresholds(&self) -> Option<&ThresholdMap> {
        self.thresholds.as_ref()
    }

    pub fn nb_model(&self) -> Option<&NbModel> {
        self.nb_model.as_ref()
    }

    pub fn single_key(&self) -> Option<&str> {
        self.single_key.as_deref()
    }
}

/// One aggregated label, with the raw model output when the label came
/// from a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateOutcome {
    pub label: u8,
    pub parse_failed: bool,
    pub raw_output: Option<String>,
    pub prompt_digest: Option<String>,
}

/// Runs an aggregation spec over pairs. Prompt aggregation additionally
/// needs a chat client and a model id.
pub struct Aggregator<'a> {
    spec: AggregationSpec,
    client: Option<&'a LlmClient>,
    model: String,
    temperature: f64,
    max_tokens: u32,
}

impl<'a> Aggregator<'a> {
    pub fn new(spec: AggregationSpec) -> Result<Aggregator<'a>> {
        if spec.method() == AggregationMethod::Prompt {
            return Err(Error::Validation(
                "prompt aggregation needs a chat client and model".to_string(),
            ));
        }
        Ok(Aggregator {
            spec,
            client: None,
            model: String::new(),
            temperature: 0.0,
            max_tokens: 100,
        })
    }

    pub fn with_client(
        spec: AggregationSpec,
        client: &'a LlmClient,
        model: &str,
        temperature: f64,
        max_tokens: u32,
    ) -> Result<Aggregator<'a>> {
        if model.is_empty() {
            return Err(Error::Validation("empty aggregation model id".to_string()));
        }
        Ok(Aggregator {
            spec,
            client: Some(client),
            model: model.to_string(),
            temperature,
            max_tokens,
        })
    }

    pub fn spec(&self) -> &AggregationSpec {
        &self.spec
    }

    /// Aggregates one pair's grades. The query and passage texts are
    /// only read by prompt aggregation.
    pub fn aggregate_pair(
        &self,
        query: &str,
        passage: &str,
        grades: &BTreeMap<String, u8>,
    ) -> Result<AggregateOutcome> {
        let plain = |label: u8| AggregateOutcome {
            label,
            parse_failed: false,
            raw_output: None,
            prompt_digest: None,
        };
        match self.spec.method() {
            AggregationMethod::Sum => {
                let label =
                    aggregate_sum(grades, &self.spec.criteria, self.spec.thresholds().unwrap())?;
                Ok(plain(label))
            }
            AggregationMethod::Single => {
                let label =
                    aggregate_single(grades, &self.spec.criteria, self.spec.single_key().unwrap())?;
                Ok(plain(label))
            }
            AggregationMethod::NaiveBayes => {
                checked_grades(grades, &self.spec.criteria)?;
                let label = aggregate_naive_bayes(grades, self.spec.nb_model().unwrap())?;
                Ok(plain(label))
            }
            AggregationMethod::Prompt => {
                let Some(client) = self.client else {
                    return Err(Error::Validation(
                        "prompt aggregation needs a chat client and model".to_string(),
                    ));
                };
                let prompt =
                    render_aggregation_prompt(&self.spec.criteria, query, passage, grades)?;
                let mut request =
                    ChatRequest::new(&self.model, &prompt.system_message, &prompt.user_message);
                request.temperature = self.temperature;
                request.max_tokens = self.max_tokens;
                let digest = request.digest();
                let response = client.complete(&request)?;
                let parsed = extract_grade(&response.raw_text, MAX_LABEL);
                Ok(AggregateOutcome {
                    label: parsed.unwrap_or(0),
                    parse_failed: parsed.is_none(),
                    raw_output: Some(response.raw_text),
                    prompt_digest: Some(digest),
                })
            }
        }
    }

    /// Aggregates every pair in the store into a predicted judgment set.
    /// The corpus is required for prompt aggregation, which re-reads the
    /// query and passage texts.
    pub fn predict_judgments(
        &self,
        store: &GradeStore,
        corpus: Option<&Corpus>,
        grade_model: Option<&str>,
    ) -> Result<Prediction> {
        let pairs = collect_pair_grades(store, &self.spec.criteria, grade_model)?;
        let needs_corpus = self.spec.method() == AggregationMethod::Prompt;
        if needs_corpus && corpus.is_none() {
            return Err(Error::Validation(
                "prompt aggregation needs the query and passage texts".to_string(),
            ));
        }
        let mut judgments = JudgmentSet::new(JudgmentSource::Predicted);
        let mut details = Vec::with_capacity(pairs.len());
        let mut parse_failures = 0u64;
        for pair in &pairs {
            let (query, passage) = if needs_corpus {
                let corpus = corpus.unwrap();
                let Some(query) = corpus.queries.get(&pair.query_id) else {
                    return Err(Error::Validation(format!(
                        "query '{}' has no text in the corpus",
                        pair.query_id
                    )));
                };
                let Some(passage) = corpus.passages.get(&pair.doc_id) else {
                    return Err(Error::Validation(format!(
                        "passage '{}' has no text in the corpus",
                        pair.doc_id
                    )));
                };
                (query.as_str(), passage.as_str())
            } else {
                ("", "")
            };
            let outcome = self.aggregate_pair(query, passage, &pair.grades)?;
            if outcome.parse_failed {
                parse_failures += 1;
            }
            judgments.insert(&pair.query_id, &pair.doc_id, outcome.label)?;
            details.push((pair.query_id.clone(), pair.doc_id.clone(), outcome));
        }
        Ok(Prediction {
            judgments,
            details,
            parse_failures,
        })
    }
}

/// Predicted labels for every graded pair plus per-pair audit details.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub judgments: JudgmentSet,
    pub details: Vec<(String, String, AggregateOutcome)>,
    pub parse_failures: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneObjective {
    Kendall,
    Spearman,
}

impl TuneObjective {
    fn correlate(&self, a: &Leaderboard, b: &Leaderboard) -> Result<f64> {
        match self {
            TuneObjective::Kendall => kendall_tau(a, b),
            TuneObjective::Spearman => spearman_rho(a, b),
        }
    }
}

/// The winning thresholds from a tuning sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub thresholds: ThresholdMap,
    pub objective_value: f64,
    pub candidates_evaluated: usize,
    pub candidates_skipped: usize,
}

/// Exhaustively searches every strictly decreasing threshold triple for
/// the one whose sum-aggregated leaderboard best correlates with the
/// leaderboard under the dev judgments, measured by NDCG@10.
///
/// Candidates whose predicted leaderboard has an undefined correlation
/// (for instance when every pair lands on the same label) are skipped.
/// Ties prefer the lexicographically largest (t3, t2, t1).
pub fn tune_thresholds(
    store: &GradeStore,
    qrels: &JudgmentSet,
    runs: &[SystemRun],
    criteria: &CriteriaSet,
    objective: TuneObjective,
    model_id: Option<&str>,
) -> Result<TuneOutcome> {
    let mut labels = qrels.entries().map(|(_, _, label)| label);
    let first = labels
        .next()
        .ok_or_else(|| Error::Tuning("dev judgment set is empty".to_string()))?;
    if labels.all(|label| label == first) {
        return Err(Error::Tuning(
            "dev judgments all carry the same label; nothing to rank against".to_string(),
        ));
    }
    let pairs = collect_pair_grades(store, criteria, model_id)?;
    let sums: Vec<(&str, &str, u32)> = pairs
        .iter()
        .map(|pair| {
            let sum = pair.grades.values().map(|g| u32::from(*g)).sum();
            (pair.query_id.as_str(), pair.doc_id.as_str(), sum)
        })
        .collect();
    let spec = MetricSpec::ndcg(10)?;
    let gold = build_leaderboard(runs, qrels, &spec)?;

    let max_sum = 3 * criteria.len() as u32;
    let mut best: Option<(ThresholdMap, f64)> = None;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for t3 in (2..=max_sum).rev() {
        for t2 in (1..t3).rev() {
            for t1 in (0..t2).rev() {
                let thresholds = ThresholdMap::new(t3, t2, t1, criteria.len())?;
                evaluated += 1;
                let mut predicted = JudgmentSet::new(JudgmentSource::Predicted);
                for (query_id, doc_id, sum) in &sums {
                    predicted.insert(query_id, doc_id, thresholds.label_for(*sum))?;
                }
                let board = build_leaderboard(runs, &predicted, &spec)?;
                let value = match objective.correlate(&board, &gold) {
                    Ok(value) => value,
                    Err(Error::Undefined(_)) => {
                        skipped += 1;
                        continue;
                    }
                    Err(error) => return Err(error),
                };
                if best.as_ref().is_none_or(|(_, b)| value > *b) {
                    best = Some((thresholds, value));
                }
            }
        }
    }
    match best {
        Some((thresholds, objective_value)) => Ok(TuneOutcome {
            thresholds,
            objective_value,
            candidates_evaluated: evaluated,
            candidates_skipped: skipped,
        }),
        None => Err(Error::Tuning(
            "every threshold candidate produced an undefined correlation".to_string(),
        )),
    }
}
