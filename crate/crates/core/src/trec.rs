//! TREC qrels and run file parsing and serialization.
//!
//! Qrels lines are `query_id iteration doc_id label`; the iteration column
//! is ignored. Run lines are `query_id Q0 doc_id rank score tag`. Both
//! formats are whitespace-separated, one record per line, blank lines
//! skipped. Stored ranks are informational; rankings are always rebuilt
//! from scores (descending, ties broken by ascending doc id).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use crate::error::Error;
use crate::{Result, MAX_LABEL};

/// Where a judgment set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JudgmentSource {
    Human,
    Predicted,
}

/// Relevance labels for (query, document) pairs on the 0-3 scale.
///
/// Equality compares the labeled pairs only; `source` is provenance
/// metadata and does not participate.
#[derive(Debug, Clone)]
pub struct JudgmentSet {
    source: JudgmentSource,
    entries: BTreeMap<(String, String), u8>,
}

impl PartialEq for JudgmentSet {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl JudgmentSet {
    pub fn new(source: JudgmentSource) -> Self {
        JudgmentSet {
            source,
            entries: BTreeMap::new(),
        }
    }

    pub fn source(&self) -> JudgmentSource {
        self.source
    }

    pub fn set_source(&mut self, source: JudgmentSource) {
        self.source = source;
    }

    /// Adds a labeled pair. Rejects labels above 3 and duplicate pairs.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, label: u8) -> Result<()> {
        if label > MAX_LABEL {
            return Err(Error::LabelRange {
                line: 0,
                value: label as i64,
            });
        }
        let key = (query_id.to_string(), doc_id.to_string());
        if self.entries.contains_key(&key) {
            return Err(Error::Duplicate {
                line: 0,
                key: format!("{query_id} {doc_id}"),
            });
        }
        self.entries.insert(key, label);
        Ok(())
    }

    pub fn get(&self, query_id: &str, doc_id: &str) -> Option<u8> {
        self.entries
            .get(&(query_id.to_string(), doc_id.to_string()))
            .copied()
    }

    /// Label for the pair, treating unjudged documents as 0.
    pub fn label_or_zero(&self, query_id: &str, doc_id: &str) -> u8 {
        self.get(query_id, doc_id).unwrap_or(0)
    }

    /// Judged documents and labels for one query, in doc-id order.
    pub fn for_query<'a>(&'a self, query_id: &'a str) -> impl Iterator<Item = (&'a str, u8)> + 'a {
        self.entries
            .range((query_id.to_string(), String::new())..)
            .take_while(move |((q, _), _)| q == query_id)
            .map(|((_, d), label)| (d.as_str(), *label))
    }

    /// Query ids present in the set, deduplicated, in order.
    pub fn queries(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for (q, _) in self.entries.keys() {
            if out.last() != Some(&q.as_str()) {
                out.push(q);
            }
        }
        out
    }

    /// All labeled pairs in (query_id, doc_id) order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str, u8)> {
        self.entries
            .iter()
            .map(|((q, d), label)| (q.as_str(), d.as_str(), *label))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Parses qrels text into a judgment set marked as human-sourced.
pub fn parse_qrels(text: &str) -> Result<JudgmentSet> {
    let mut set = JudgmentSet::new(JudgmentSource::Human);
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let label: i64 = fields[3].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("label '{}' is not an integer", fields[3]),
        })?;
        if !(0..=MAX_LABEL as i64).contains(&label) {
            return Err(Error::LabelRange {
                line: line_no,
                value: label,
            });
        }
        set.insert(fields[0], fields[2], label as u8)
            .map_err(|e| match e {
                Error::Duplicate { key, .. } => Error::Duplicate { line: line_no, key },
                other => other,
            })?;
    }
    Ok(set)
}

/// Serializes a judgment set as qrels text, sorted by (query_id, doc_id).
pub fn write_qrels(set: &JudgmentSet) -> String {
    let mut out = String::new();
    for (q, d, label) in set.entries() {
        writeln!(out, "{q} 0 {d} {label}").unwrap();
    }
    out
}

/// One retrieved document in a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub query_id: String,
    pub doc_id: String,
    pub rank: u32,
    pub score: f64,
}

/// One system's retrieval output across queries.
///
/// Entries are held sorted by (query_id, score descending, doc_id), so a
/// query's ranking is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemRun {
    system_id: String,
    entries: Vec<RunEntry>,
    index: BTreeMap<String, Range<usize>>,
}

impl SystemRun {
    /// Builds a run from entries, validating scores and per-query uniqueness.
    pub fn from_entries(system_id: &str, mut entries: Vec<RunEntry>) -> Result<Self> {
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite score for {} {}",
                    e.query_id, e.doc_id
                )));
            }
            if e.rank == 0 {
                return Err(Error::Validation(format!(
                    "rank must be positive for {} {}",
                    e.query_id, e.doc_id
                )));
            }
        }
        entries.sort_by(|a, b| {
            a.query_id
                .cmp(&b.query_id)
                .then(b.score.total_cmp(&a.score))
                .then(a.doc_id.cmp(&b.doc_id))
        });
        let mut index: BTreeMap<String, Range<usize>> = BTreeMap::new();
        let mut start = 0;
        for i in 0..entries.len() {
            if i > 0 && entries[i].query_id != entries[i - 1].query_id {
                index.insert(entries[start].query_id.clone(), start..i);
                start = i;
            }
        }
        if !entries.is_empty() {
            index.insert(entries[start].query_id.clone(), start..entries.len());
        }
        for range in index.values() {
            let slice = &entries[range.clone()];
            let mut seen: Vec<&str> = slice.iter().map(|e| e.doc_id.as_str()).collect();
            seen.sort_unstable();
            for w in seen.windows(2) {
                if w[0] == w[1] {
                    return Err(Error::Duplicate {
                        line: 0,
                        key: format!("{} {}", slice[0].query_id, w[0]),
                    });
                }
            }
        }
        Ok(SystemRun {
            system_id: system_id.to_string(),
            entries,
            index,
        })
    }

    pub fn system_id(&self) -> &str {
        &self.system_id
    }

    /// Entries for one query, best score first, ties by ascending doc id.
    pub fn ranking(&self, query_id: &str) -> &[RunEntry] {
        match self.index.get(query_id) {
            Some(range) => &self.entries[range.clone()],
            None => &[],
        }
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(|q| q.as_str())
    }

    pub fn entries(&self) -> &[RunEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Parses run text. The tag column is ignored in favor of `system_id`.
pub fn parse_run(text: &str, system_id: &str) -> Result<SystemRun> {
    let mut entries = Vec::new();
    let mut seen: std::collections::HashSet<(String, String)> = std::collections::HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let rank: u32 = fields[3].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("rank '{}' is not a positive integer", fields[3]),
        })?;
        if rank == 0 {
            return Err(Error::Parse {
                line: line_no,
                message: "rank must be positive".to_string(),
            });
        }
        let score: f64 = fields[4].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("score '{}' is not a number", fields[4]),
        })?;
        if !score.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("score '{}' is not finite", fields[4]),
            });
        }
        if !seen.insert((fields[0].to_string(), fields[2].to_string())) {
            return Err(Error::Duplicate {
                line: line_no,
                key: format!("{} {}", fields[0], fields[2]),
            });
        }
        entries.push(RunEntry {
            query_id: fields[0].to_string(),
            doc_id: fields[2].to_string(),
            rank,
            score,
        });
    }
    SystemRun::from_entries(system_id, entries)
}

/// Serializes a run in ranking order, using the system id as the tag.
pub fn write_run(run: &SystemRun) -> String {
    let mut out = String::new();
    for e in run.entries() {
        writeln!(
            out,
            "{} Q0 {} {} {} {}",
            e.query_id,
            e.doc_id,
            e.rank,
            e.score,
            run.system_id()
        )
        .unwrap();
    }
    out
}
