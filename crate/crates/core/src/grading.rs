//! Phase-one grading engine: grade (query, passage) pairs against each
//! criterion through a chat backend, persisting every grade as one JSON
//! line so interrupted runs can resume where they stopped.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::criteria::{render_criterion_prompt, CriteriaSet};
use crate::error::Error;
use crate::jsonl;
use crate::llm::{extract_grade, ChatRequest, LlmClient};
use crate::trec::SystemRun;
use crate::{Result, MAX_LABEL};

pub const DEFAULT_POOL_DEPTH: usize = 10;
pub const DEFAULT_WORKERS: usize = 4;

/// One criterion grade for one (query, passage) pair, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeRecord {
    pub query_id: String,
    pub doc_id: String,
    #[serde(rename = "criterion")]
    pub criterion_key: String,
    pub grade: u8,
    #[serde(default)]
    pub parse_failed: bool,
    pub raw_output: String,
    pub model_id: String,
    #[serde(rename = "prompt_hash")]
    pub prompt_digest: String,
    pub timestamp: u64,
}

impl GradeRecord {
    fn key(&self) -> (String, String, String, String) {
        (
            self.query_id.clone(),
            self.doc_id.clone(),
            self.criterion_key.clone(),
            self.model_id.clone(),
        )
    }
}

/// Set of grade records keyed by (query, doc, criterion, model), with an
/// optional append-only backing file.
pub struct GradeStore {
    records: BTreeMap<(String, String, String, String), GradeRecord>,
    writer: Option<File>,
    path: Option<PathBuf>,
}

impl GradeStore {
    pub fn in_memory() -> Self {
        GradeStore {
            records: BTreeMap::new(),
            writer: None,
            path: None,
        }
    }

    /// Opens a store for grading: loads what is already there (the file
    /// may not exist yet) and appends new records as they arrive.
    pub fn open(path: &Path) -> Result<Self> {
        let records = if path.exists() {
            Self::read_records(path)?
        } else {
            BTreeMap::new()
        };
        let writer = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(GradeStore {
            records,
            writer: Some(writer),
            path: Some(path.to_path_buf()),
        })
    }

    /// Loads an existing store without opening it for writing.
    pub fn load(path: &Path) -> Result<Self> {
        Ok(GradeStore {
            records: Self::read_records(path)?,
            writer: None,
            path: Some(path.to_path_buf()),
        })
    }

    fn read_records(path: &Path) -> Result<BTreeMap<(String, String, String, String), GradeRecord>> {
        let text = std::fs::read_to_string(path)?;
        let mut records = BTreeMap::new();
        for record in jsonl::read_jsonl::<GradeRecord>(&text)? {
            if record.grade > MAX_LABEL {
                return Err(Error::Validation(format!(
                    "store record for ({}, {}, {}) has grade {} outside the 0..3 scale",
                    record.query_id, record.doc_id, record.criterion_key, record.grade
                )));
            }
            records.insert(record.key(), record);
        }
        Ok(records)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn contains(&self, query_id: &str, doc_id: &str, criterion_key: &str, model_id: &str) -> bool {
        self.records.contains_key(&(
            query_id.to_string(),
            doc_id.to_string(),
            criterion_key.to_string(),
            model_id.to_string(),
        ))
    }

    /// Adds a record unless its key is already present (set semantics).
    pub fn insert(&mut self, record: GradeRecord) -> Result<bool> {
        let key = record.key();
        if self.records.contains_key(&key) {
            return Ok(false);
        }
        if let Some(writer) = &mut self.writer {
            writer.write_all(jsonl::to_json_line(&record).as_bytes())?;
            writer.flush()?;
        }
        self.records.insert(key, record);
        Ok(true)
    }

    /// Records in (query, doc, criterion, model) order.
    pub fn records(&self) -> impl Iterator<Item = &GradeRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct model ids present in the store.
    pub fn models(&self) -> BTreeSet<&str> {
        self.records.values().map(|r| r.model_id.as_str()).collect()
    }

    /// Distinct (query_id, doc_id) pairs, in order.
    pub fn pairs(&self) -> Vec<(&str, &str)> {
        let mut out: Vec<(&str, &str)> = Vec::new();
        for record in self.records.values() {
            let pair = (record.query_id.as_str(), record.doc_id.as_str());
            if out.last() != Some(&pair) {
                out.push(pair);
            }
        }
        out.dedup();
        out
    }

    /// Grades one model produced for one pair, keyed by criterion.
    pub fn grades_for_pair(
        &self,
        query_id: &str,
        doc_id: &str,
        model_id: &str,
    ) -> BTreeMap<String, u8> {
        self.records
            .values()
            .filter(|r| r.query_id == query_id && r.doc_id == doc_id && r.model_id == model_id)
            .map(|r| (r.criterion_key.clone(), r.grade))
            .collect()
    }

    /// Lists (query, doc, criterion) tuples still missing for the given
    /// pairs and criteria under one model.
    pub fn missing(
        &self,
        pairs: &[(String, String)],
        criteria: &CriteriaSet,
        model_id: &str,
    ) -> Vec<(String, String, String)> {
        let mut out = Vec::new();
        for (qid, did) in pairs {
            for criterion in criteria.iter() {
                if !self.contains(qid, did, &criterion.key, model_id) {
                    out.push((qid.clone(), did.clone(), criterion.key.clone()));
                }
            }
        }
        out
    }
}

/// One pair's criterion grades, pulled out of a store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairGrades {
    pub query_id: String,
    pub doc_id: String,
    pub grades: BTreeMap<String, u8>,
}

/// Extracts per-pair grade maps for the given criteria, requiring the
/// store to be complete for them.
///
/// `model_id` picks which model's records to read; `None` works when the
/// store holds exactly one model. Records for criteria outside `criteria`
/// are ignored, which is what ablation subsets rely on.
pub fn collect_pair_grades(
    store: &GradeStore,
    criteria: &CriteriaSet,
    model_id: Option<&str>,
) -> Result<Vec<PairGrades>> {
    let models = store.models();
    let model = match model_id {
        Some(m) => {
            if !models.contains(m) {
                return Err(Error::Validation(format!(
                    "store has no records for model '{m}'"
                )));
            }
            m.to_string()
        }
        None => {
            if models.len() != 1 {
                return Err(Error::Validation(format!(
                    "store holds grades from {} models ({}); pick one",
                    models.len(),
                    models.into_iter().collect::<Vec<_>>().join(", ")
                )));
            }
            models.into_iter().next().unwrap().to_string()
        }
    };
    let mut by_pair: BTreeMap<(String, String), BTreeMap<String, u8>> = BTreeMap::new();
    for record in store.records() {
        if record.model_id != model {
            continue;
        }
        by_pair
            .entry((record.query_id.clone(), record.doc_id.clone()))
            .or_default()
            .insert(record.criterion_key.clone(), record.grade);
    }
    if by_pair.is_empty() {
        return Err(Error::Validation("grade store is empty".to_string()));
    }
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(by_pair.len());
    for ((query_id, doc_id), mut grades) in by_pair {
        for criterion in criteria.iter() {
            if !grades.contains_key(&criterion.key) {
                missing.push((query_id.clone(), doc_id.clone(), criterion.key.clone()));
            }
        }
        grades.retain(|key, _| criteria.get(key).is_some());
        out.push(PairGrades {
            query_id,
            doc_id,
            grades,
        });
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteStore { missing });
    }
    Ok(out)
}

/// Reads an `id<TAB>text` file into an ordered map. Ids must be unique
/// and free of whitespace; text runs to the end of the line.
pub(crate) fn load_id_text_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let content = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (idx, raw) in content.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: line_no,
            message: "expected id<TAB>text".to_string(),
        })?;
        if id.is_empty() || id.chars().any(|c| c.is_whitespace()) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("bad id '{id}'"),
            });
        }
        if text.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("no text for id '{id}'"),
            });
        }
        if out.insert(id.to_string(), text.to_string()).is_some() {
            return Err(Error::Duplicate {
                line: line_no,
                key: id.to_string(),
            });
        }
    }
    Ok(out)
}

/// Query and passage texts the engine grades against.
pub struct Corpus {
    pub queries: BTreeMap<String, String>,
    pub passages: BTreeMap<String, String>,
}

impl Corpus {
    pub fn load(queries_path: &Path, passages_path: &Path) -> Result<Self> {
        Ok(Corpus {
            queries: load_id_text_file(queries_path)?,
            passages: load_id_text_file(passages_path)?,
        })
    }
}

/// Where the (query, passage) work list comes from: an explicit pairs
/// file (`query_id<TAB>doc_id` lines) or pooling the top `depth` documents
/// of each query across runs.
pub enum PairSource {
    PairsFile(PathBuf),
    Pooling { runs: Vec<SystemRun>, depth: usize },
}

/// Work list plus what had to be dropped for missing texts.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct PairSet {
    /// (query_id, doc_id), sorted, deduplicated, fully resolvable in the
    /// corpus.
    pub pairs: Vec<(String, String)>,
    /// Doc ids that appeared in the source but have no passage text.
    pub missing_docs: Vec<String>,
    /// Query ids that appeared in the source but have no query text.
    pub missing_queries: Vec<String>,
}

/// Resolves the work list against the corpus, reporting ids whose texts
/// are missing instead of failing.
pub fn load_pairs(corpus: &Corpus, source: &PairSource) -> Result<PairSet> {
    let mut candidates: BTreeSet<(String, String)> = BTreeSet::new();
    match source {
        PairSource::PairsFile(path) => {
            let content = std::fs::read_to_string(path)?;
            for (idx, raw) in content.lines().enumerate() {
                let line = raw.trim_end_matches('\r');
                if line.trim().is_empty() {
                    continue;
                }
                let (qid, did) = line.split_once('\t').ok_or_else(|| Error::Parse {
                    line: idx + 1,
                    message: "expected query_id<TAB>doc_id".to_string(),
                })?;
                if qid.is_empty() || did.is_empty() {
                    return Err(Error::Parse {
                        line: idx + 1,
                        message: "empty id".to_string(),
                    });
                }
                candidates.insert((qid.to_string(), did.to_string()));
            }
        }
        PairSource::Pooling { runs, depth } => {
            if *depth == 0 {
                return Err(Error::Validation("pool depth must be at least 1".to_string()));
            }
            for run in runs {
                for query_id in run.queries() {
                    for entry in run.ranking(query_id).iter().take(*depth) {
                        candidates.insert((query_id.to_string(), entry.doc_id.clone()));
                    }
                }
            }
        }
    }
    let mut set = PairSet::default();
    let mut missing_docs: BTreeSet<String> = BTreeSet::new();
    let mut missing_queries: BTreeSet<String> = BTreeSet::new();
    for (qid, did) in candidates {
        let query_known = corpus.queries.contains_key(&qid);
        let doc_known = corpus.passages.contains_key(&did);
        if !query_known {
            missing_queries.insert(qid.clone());
        }
        if !doc_known {
            missing_docs.insert(did.clone());
        }
        if query_known && doc_known {
            set.pairs.push((qid, did));
        }
    }
    set.missing_docs = missing_docs.into_iter().collect();
    set.missing_queries = missing_queries.into_iter().collect();
    Ok(set)
}

/// Knobs for a grading run.
#[derive(Debug, Clone)]
pub struct GradeOptions {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub workers: usize,
}

impl GradeOptions {
    pub fn new(model: &str) -> Self {
        GradeOptions {
            model: model.to_string(),
            temperature: 0.0,
            max_tokens: 100,
            workers: DEFAULT_WORKERS,
        }
    }
}

/// Outcome counts for one grading run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GradeReport {
    /// Records newly graded in this run.
    pub graded: usize,
    /// (pair, criterion) tasks skipped because the store already had them.
    pub skipped: usize,
    /// Newly graded records whose raw output held no usable grade.
    pub parse_failed: usize,
}

struct Task<'a> {
    query_id: &'a str,
    doc_id: &'a str,
    criterion_key: &'a str,
}

/// Grades every (pair, criterion) combination not yet in the store, with
/// a bounded worker pool. A backend failure aborts the run but keeps all
/// records committed so far, so a rerun resumes from the store.
pub fn grade_pairs(
    pairs: &[(String, String)],
    corpus: &Corpus,
    criteria: &CriteriaSet,
    client: &LlmClient,
    options: &GradeOptions,
    store: &mut GradeStore,
) -> Result<GradeReport> {
    for (qid, did) in pairs {
        if !corpus.queries.contains_key(qid) {
            return Err(Error::Validation(format!("no query text for '{qid}'")));
        }
        if !corpus.passages.contains_key(did) {
            return Err(Error::Validation(format!("no passage text for '{did}'")));
        }
    }
    let mut report = GradeReport::default();
    let mut tasks: Vec<Task> = Vec::new();
    let mut queued: BTreeSet<(&str, &str, &str)> = BTreeSet::new();
    for (qid, did) in pairs {
        for criterion in criteria.iter() {
            if !queued.insert((qid, did, &criterion.key)) {
                continue;
            }
            if store.contains(qid, did, &criterion.key, &options.model) {
                report.skipped += 1;
            } else {
                tasks.push(Task {
                    query_id: qid,
                    doc_id: did,
                    criterion_key: &criterion.key,
                });
            }
        }
    }
    if tasks.is_empty() {
        return Ok(report);
    }

    let next = AtomicUsize::new(0);
    let poisoned = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<Result<GradeRecord>>();
    let workers = options.workers.max(1).min(tasks.len());
    let mut first_error: Option<Error> = None;

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let tasks = &tasks;
            let next = &next;
            let poisoned = &poisoned;
            scope.spawn(move || loop {
                if poisoned.load(Ordering::SeqCst) {
                    break;
                }
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= tasks.len() {
                    break;
                }
                let task = &tasks[index];
                let outcome = run_task(task, corpus, criteria, client, options);
                if outcome.is_err() {
                    poisoned.store(true, Ordering::SeqCst);
                }
                if tx.send(outcome).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for outcome in rx {
            match outcome {
                Ok(record) => {
                    let failed = record.parse_failed;
                    match store.insert(record) {
                        Ok(true) => {
                            report.graded += 1;
                            if failed {
                                report.parse_failed += 1;
                            }
                        }
                        Ok(false) => report.skipped += 1,
                        Err(e) => {
                            poisoned.store(true, Ordering::SeqCst);
                            first_error.get_or_insert(e);
                        }
                    }
                }
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
    });

    match first_error {
        None => Ok(report),
        Some(cause) => Err(Error::Aborted {
            graded: report.graded,
            skipped: report.skipped,
            cause: Box::new(cause),
        }),
    }
}

fn run_task(
    task: &Task,
    corpus: &Corpus,
    criteria: &CriteriaSet,
    client: &LlmClient,
    options: &GradeOptions,
) -> Result<GradeRecord> {
    let query_text = &corpus.queries[task.query_id];
    let passage_text = &corpus.passages[task.doc_id];
    let criterion = criteria
        .get(task.criterion_key)
        .expect("tasks are built from the criteria set");
    let prompt = render_criterion_prompt(criterion, query_text, passage_text);
    let mut request = ChatRequest::new(&options.model, &prompt.system_message, &prompt.user_message);
    request.temperature = options.temperature;
    request.max_tokens = options.max_tokens;
    let response = client.complete(&request)?;
    let grade = extract_grade(&response.raw_text, MAX_LABEL);
    Ok(GradeRecord {
        query_id: task.query_id.to_string(),
        doc_id: task.doc_id.to_string(),
        criterion_key: task.criterion_key.to_string(),
        grade: grade.unwrap_or(0),
        parse_failed: grade.is_none(),
        raw_output: response.raw_text,
        model_id: options.model.clone(),
        prompt_digest: request.digest(),
        timestamp: jsonl::unix_now(),
    })
}
