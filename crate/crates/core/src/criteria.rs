//! Grading criteria and prompt rendering.
//!
//! Phase one asks the model to grade one criterion at a time; phase two
//! hands the criterion grades back and asks for a single relevance label.
//! Prompt text is fixed: rendering substitutes inputs verbatim (braces and
//! all) and guarantees the templates' block layout, with single blank
//! lines between blocks and no trailing newline after the final "Score:".

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::{Result, MAX_LABEL};

/// One grading criterion: a stable key, a display name used in prompts,
/// and the question the criterion asks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub key: String,
    pub display_name: String,
    pub description: String,
}

/// Ordered, non-empty set of criteria with unique keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CriteriaSet {
    criteria: Vec<Criterion>,
}

/// System and user message of a rendered chat prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPair {
    pub system_message: String,
    pub user_message: String,
}

pub const CRITERION_SYSTEM_MESSAGE: &str = concat!(
    "Please assess how well the provided passage meets specific criteria in relation to ",
    "the query. Use the following scoring scale (0-3) for evaluation:\n",
    "\n",
    "0: Not relevant at all / No information provided.\n",
    "\n",
    "1: Marginally relevant / Partially addresses the criterion.\n",
    "\n",
    "2: Fairly relevant / Adequately addresses the criterion.\n",
    "\n",
    "3: Highly relevant / Fully satisfies the criterion.",
);

pub const AGGREGATION_SYSTEM_MESSAGE: &str = concat!(
    "You are a search quality rater evaluating the relevance of passages. Given a query ",
    "and passage, you must provide a score on an integer scale of 0 to 3 with the ",
    "following meanings:\n",
    "\n",
    "3 = Perfectly relevant: The passage is dedicated to the query and contains the ",
    "exact answer.\n",
    "\n",
    "2 = Highly relevant: The passage has some answer for the query, but the answer ",
    "may be a bit unclear, or hidden amongst extraneous information.\n",
    "\n",
    "1 = Related: The passage seems related to the query but does not answer it.\n",
    "\n",
    "0 = Irrelevant: The passage has nothing to do with the query.\n",
    "\n",
    "Assume that you are writing an answer to the query. If the passage seems to be ",
    "related to the query but does not include any answer to the query, mark it 1. If ",
    "you would use any of the information contained in the passage in such an answer, ",
    "mark it 2. If the passage is primarily about the query, or contains vital ",
    "information about the topic, mark it 3. Otherwise, mark it 0.",
);

impl CriteriaSet {
    /// Builds a set, requiring at least one criterion, unique keys, and
    /// non-empty fields throughout.
    pub fn new(criteria: Vec<Criterion>) -> Result<Self> {
        if criteria.is_empty() {
            return Err(Error::Validation("criteria set is empty".to_string()));
        }
        let mut keys: Vec<&str> = Vec::new();
        for c in &criteria {
            if c.key.is_empty() || c.display_name.is_empty() || c.description.is_empty() {
                return Err(Error::Validation(format!(
                    "criterion '{}' has an empty field",
                    c.key
                )));
            }
            if keys.contains(&c.key.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate criterion key '{}'",
                    c.key
                )));
            }
            keys.push(&c.key);
        }
        Ok(CriteriaSet { criteria })
    }

    /// Loads a `{"criteria": [...]}` config document.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: CriteriaConfig = serde_json::from_str(text)?;
        CriteriaSet::new(config.criteria)
    }

    pub fn to_json(&self) -> String {
        let config = CriteriaConfig {
            criteria: self.criteria.clone(),
        };
        serde_json::to_string_pretty(&config).unwrap()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Criterion> {
        self.criteria.iter()
    }

    pub fn get(&self, key: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.key == key)
    }

    pub fn keys(&self) -> Vec<&str> {
        self.criteria.iter().map(|c| c.key.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.criteria.len()
    }

    pub fn is_empty(&self) -> bool {
        self.criteria.is_empty()
    }

    /// Restricts to the given keys, keeping this set's order regardless of
    /// the order the keys are listed in.
    pub fn subset(&self, keys: &[&str]) -> Result<CriteriaSet> {
        for key in keys {
            if self.get(key).is_none() {
                return Err(Error::Validation(format!("unknown criterion key '{key}'")));
            }
        }
        let picked: Vec<Criterion> = self
            .criteria
            .iter()
            .filter(|c| keys.contains(&c.key.as_str()))
            .cloned()
            .collect();
        CriteriaSet::new(picked)
    }

    /// Resolves a subset spec like "TCF", "E,T,C,F", or
    /// "topicality,coverage". Single letters match criterion initials,
    /// anything longer matches a key.
    pub fn parse_subset_spec(&self, spec: &str) -> Result<CriteriaSet> {
        let spec = spec.trim();
        if spec.is_empty() {
            return Err(Error::Validation("empty criteria subset".to_string()));
        }
        let tokens: Vec<String> = if spec.contains(',') {
            spec.split(',').map(|t| t.trim().to_string()).collect()
        } else if self.get(spec).is_some() {
            vec![spec.to_string()]
        } else {
            spec.chars().map(|c| c.to_string()).collect()
        };
        let mut keys: Vec<&str> = Vec::new();
        for token in &tokens {
            let key = if token.chars().count() == 1 {
                self.key_for_initial(token)?
            } else {
                match self.get(token) {
                    Some(c) => c.key.as_str(),
                    None => {
                        return Err(Error::Validation(format!(
                            "unknown criterion '{token}' in subset spec"
                        )))
                    }
                }
            };
            if keys.contains(&key) {
                return Err(Error::Validation(format!(
                    "criterion '{key}' listed twice in subset spec"
                )));
            }
            keys.push(key);
        }
        self.subset(&keys)
    }

    /// Unique one-letter labels for the criteria, in set order. Each
    /// criterion claims the first free letter among the initials of its
    /// display-name words, then the letters of its key, falling back to
    /// the whole key uppercased. The defaults come out as E, T, C, F.
    pub fn initials(&self) -> Vec<String> {
        let mut taken: Vec<String> = Vec::new();
        for criterion in &self.criteria {
            let mut candidates: Vec<String> = criterion
                .display_name
                .split_whitespace()
                .filter_map(|word| word.chars().next())
                .map(|ch| ch.to_uppercase().to_string())
                .collect();
            candidates.extend(
                criterion
                    .key
                    .chars()
                    .filter(|ch| ch.is_ascii_alphanumeric())
                    .map(|ch| ch.to_uppercase().to_string()),
            );
            let label = candidates
                .into_iter()
                .find(|candidate| !taken.contains(candidate))
                .unwrap_or_else(|| criterion.key.to_uppercase());
            taken.push(label);
        }
        taken
    }

    fn key_for_initial(&self, token: &str) -> Result<&str> {
        let wanted = token.to_uppercase();
        for (criterion, initial) in self.criteria.iter().zip(self.initials()) {
            if initial == wanted {
                return Ok(&criterion.key);
            }
        }
        Err(Error::Validation(format!(
            "no criterion with initial '{token}'"
        )))
    }
}

#[derive(Serialize, Deserialize)]
struct CriteriaConfig {
    criteria: Vec<Criterion>,
}

fn criterion(key: &str, display_name: &str, description: &str) -> Criterion {
    Criterion {
        key: key.to_string(),
        display_name: display_name.to_string(),
        description: description.to_string(),
    }
}

/// The four built-in criteria, in the order their grades are listed in
/// aggregation prompts.
pub fn default_criteria() -> CriteriaSet {
    CriteriaSet::new(vec![
        criterion(
            "exactness",
            "Exactness",
            "How precisely does the passage answer the query?",
        ),
        criterion(
            "topicality",
            "Topicality",
            "Is the passage about the same subject as the whole query (not only a single word of it)?",
        ),
        criterion(
            "coverage",
            "Coverage",
            "How much of the passage is dedicated to discussing the query and its related topics?",
        ),
        criterion(
            "contextual_fit",
            "Contextual Fit",
            "Does the passage provide relevant background or context?",
        ),
    ])
    .unwrap()
}

/// Rewrites a criterion's question for use after "indicating": drops the
/// trailing question mark and lowercases the first letter.
fn indicating_clause(description: &str) -> String {
    let trimmed = description.strip_suffix('?').unwrap_or(description);
    let mut chars = trimmed.chars();
    match chars.next() {
        Some(first) => first.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Phase-one prompt: grade one criterion for a query-passage pair.
pub fn render_criterion_prompt(criterion: &Criterion, query: &str, passage: &str) -> PromptPair {
    let user_message = format!(
        "Please rate how well the given passage meets the {} criterion in relation to the \
         query. The output should be a single score (0-3) indicating {}.\n\
         \n\
         Query: {}\n\
         \n\
         Passage: {}\n\
         \n\
         Score:",
        criterion.display_name,
        indicating_clause(&criterion.description),
        query,
        passage
    );
    PromptPair {
        system_message: CRITERION_SYSTEM_MESSAGE.to_string(),
        user_message,
    }
}

/// Phase-two prompt: combine criterion grades into one relevance label.
///
/// `grades` must cover exactly the criteria in `set`; grade lines appear
/// in set order.
pub fn render_aggregation_prompt(
    set: &CriteriaSet,
    query: &str,
    passage: &str,
    grades: &BTreeMap<String, u8>,
) -> Result<PromptPair> {
    if grades.is_empty() {
        return Err(Error::Validation("no grades to aggregate".to_string()));
    }
    for key in grades.keys() {
        if set.get(key).is_none() {
            return Err(Error::Validation(format!(
                "grade for '{key}' does not match any active criterion"
            )));
        }
    }
    let missing: Vec<&str> = set
        .iter()
        .filter(|c| !grades.contains_key(&c.key))
        .map(|c| c.key.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "missing grades for criteria: {}",
            missing.join(", ")
        )));
    }
    let mut grade_lines = String::new();
    for c in set.iter() {
        let grade = grades[&c.key];
        if grade > MAX_LABEL {
            return Err(Error::Validation(format!(
                "grade {grade} for '{}' outside the 0..3 scale",
                c.key
            )));
        }
        write!(grade_lines, "{}: {}\n\n", c.display_name, grade).unwrap();
    }
    let user_message = format!(
        "Query: {}\n\
         \n\
         Passage: {}\n\
         \n\
         {}Please rate how the given passage is relevant to the query based on the given \
         scores. The output must be only a score (0-3) that indicates how relevant they are.\n\
         \n\
         Score:",
        query, passage, grade_lines
    );
    Ok(PromptPair {
        system_message: AGGREGATION_SYSTEM_MESSAGE.to_string(),
        user_message,
    })
}

/// Single-prompt baseline: ask for the relevance label directly, without
/// criterion grades.
pub fn render_direct_prompt(query: &str, passage: &str) -> PromptPair {
    let user_message = format!(
        "Query: {}\n\
         \n\
         Passage: {}\n\
         \n\
         Please rate how the given passage is relevant to the query. The output must be \
         only a score (0-3) that indicates how relevant they are.\n\
         \n\
         Score:",
        query, passage
    );
    PromptPair {
        system_message: AGGREGATION_SYSTEM_MESSAGE.to_string(),
        user_message,
    }
}
