//! Scriptable offline backend for tests and dry runs.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest};
use crate::error::Error;
use crate::trec::JudgmentSet;
use crate::Result;

/// Declarative mock behavior, loadable from a JSON file.
///
/// Rules are tried in order: exact request digests, echoing one
/// criterion's grade out of an aggregation prompt, planted labels looked
/// up from a qrels file, then a constant reply. A request no rule covers
/// gets the default text, or an error when `error_on_miss` is set (or no
/// default exists). `fail_after_requests` makes the backend fail with a
/// transport error once that many requests have been served, which is how
/// crash-recovery tests inject interruptions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub digests: BTreeMap<String, String>,
    #[serde(default)]
    pub echo_criterion: Option<String>,
    #[serde(default)]
    pub planted: Option<PlantedRule>,
    #[serde(default)]
    pub constant: Option<String>,
    #[serde(default, rename = "default")]
    pub default_text: Option<String>,
    #[serde(default)]
    pub error_on_miss: bool,
    #[serde(default)]
    pub fail_after_requests: Option<u64>,
}

/// Answers every prompt with the gold label of the (query, passage) pair
/// it mentions. Texts in the referenced files must be unique, since the
/// mock maps prompt text back to ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedRule {
    pub qrels: String,
    pub queries: String,
    pub passages: String,
}

struct PlantedLookup {
    query_ids: HashMap<String, String>,
    doc_ids: HashMap<String, String>,
    qrels: JudgmentSet,
}

/// Deterministic [`ChatBackend`] driven by a [`MockScript`].
pub struct MockBackend {
    script: MockScript,
    planted: Option<PlantedLookup>,
    calls: AtomicU64,
}

impl MockBackend {
    /// Builds a backend from a script. Relative paths in a planted rule
    /// resolve against `base_dir`.
    pub fn from_script(script: MockScript, base_dir: Option<&Path>) -> Result<Self> {
        if script.error_on_miss && script.default_text.is_some() {
            return Err(Error::Validation(
                "mock script sets both a default reply and error_on_miss".to_string(),
            ));
        }
        let planted = match &script.planted {
            Some(rule) => Some(load_planted(rule, base_dir)?),
            None => None,
        };
        Ok(MockBackend {
            script,
            planted,
            calls: AtomicU64::new(0),
        })
    }

    /// Loads a JSON script file; relative planted paths resolve against
    /// the script's directory.
    pub fn from_script_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let script: MockScript = serde_json::from_str(&text)?;
        MockBackend::from_script(script, path.parent())
    }

    /// Backend that answers every request with the same text.
    pub fn constant(text: &str) -> Self {
        MockBackend::from_script(
            MockScript {
                constant: Some(text.to_string()),
                ..MockScript::default()
            },
            None,
        )
        .unwrap()
    }

    /// Number of requests served so far, including failed ones.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

fn resolve(path: &str, base_dir: Option<&Path>) -> std::path::PathBuf {
    let p = Path::new(path);
    match base_dir {
        Some(base) if p.is_relative() => base.join(p),
        _ => p.to_path_buf(),
    }
}

fn invert(map: BTreeMap<String, String>, what: &str) -> Result<HashMap<String, String>> {
    let mut out = HashMap::with_capacity(map.len());
    for (id, text) in map {
        if out.insert(text, id).is_some() {
            return Err(Error::Validation(format!(
                "planted mock needs unique {what} texts"
            )));
        }
    }
    Ok(out)
}

fn load_planted(rule: &PlantedRule, base_dir: Option<&Path>) -> Result<PlantedLookup> {
    let queries = crate::grading::load_id_text_file(&resolve(&rule.queries, base_dir))?;
    let passages = crate::grading::load_id_text_file(&resolve(&rule.passages, base_dir))?;
    let qrels_text = std::fs::read_to_string(resolve(&rule.qrels, base_dir))?;
    Ok(PlantedLookup {
        query_ids: invert(queries, "query")?,
        doc_ids: invert(passages, "passage")?,
        qrels: crate::trec::parse_qrels(&qrels_text)?,
    })
}

/// Recovers the query and passage text from a rendered prompt.
fn parse_query_passage(user_message: &str) -> Option<(&str, &str)> {
    let q_start = user_message.find("Query: ")? + "Query: ".len();
    let rest = &user_message[q_start..];
    let q_end = rest.find("\n\nPassage: ")?;
    let after = &rest[q_end + "\n\nPassage: ".len()..];
    let p_end = after.find("\n\n").unwrap_or(after.len());
    Some((&rest[..q_end], &after[..p_end]))
}

/// Finds the grade listed for one criterion in an aggregation prompt.
fn find_grade_line(user_message: &str, display_name: &str) -> Option<String> {
    let prefix = format!("{display_name}: ");
    user_message
        .lines()
        .find_map(|line| line.strip_prefix(&prefix))
        .filter(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
        .map(|rest| rest.to_string())
}

impl ChatBackend for MockBackend {
    fn send(&self, request: &ChatRequest) -> Result<String> {
        let served = self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(limit) = self.script.fail_after_requests {
            if served >= limit {
                return Err(Error::Transport(format!(
                    "mock backend scripted to fail after {limit} requests"
                )));
            }
        }
        if let Some(text) = self.script.digests.get(&request.digest()) {
            return Ok(text.clone());
        }
        if let Some(name) = &self.script.echo_criterion {
            if let Some(grade) = find_grade_line(&request.user_message, name) {
                return Ok(grade);
            }
        }
        if let Some(lookup) = &self.planted {
            if let Some((query, passage)) = parse_query_passage(&request.user_message) {
                if let (Some(qid), Some(did)) =
                    (lookup.query_ids.get(query), lookup.doc_ids.get(passage))
                {
                    return Ok(lookup.qrels.label_or_zero(qid, did).to_string());
                }
            }
        }
        if let Some(text) = &self.script.constant {
            return Ok(text.clone());
        }
        if !self.script.error_on_miss {
            if let Some(text) = &self.script.default_text {
                return Ok(text.clone());
            }
        }
        let head: String = request.user_message.chars().take(60).collect();
        Err(Error::ScriptMiss(format!(
            "model={} user_message={head:?}...",
            request.model
        )))
    }
}
