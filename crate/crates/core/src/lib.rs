//! Decomposed relevance grading for IR test collections.
//!
//! The pipeline grades each query-passage pair against a small set of
//! quality criteria with an LLM (one prompt per criterion), then combines
//! the criterion grades into a single 0-3 relevance label. The resulting
//! judgment sets can be evaluated like any qrels file: rank systems,
//! correlate leaderboards against human judgments, and break down where
//! the two disagree.

pub mod aggregate;
pub mod criteria;
pub mod error;
pub mod grading;
mod jsonl;
pub mod llm;
pub mod meta;
pub mod metrics;
pub mod trec;

pub use aggregate::{
    AggregateOutcome, AggregationMethod, AggregationSpec, Aggregator, NbModel, Prediction,
    ThresholdMap, TuneObjective, TuneOutcome,
};
pub use criteria::{CriteriaSet, Criterion, PromptPair};
pub use error::Error;
pub use grading::{Corpus, GradeRecord, GradeReport, GradeStore, PairSource};
pub use llm::{ChatBackend, ChatRequest, ChatResponse, LlmClient, MockBackend, RetryPolicy};
pub use meta::{AgreementStats, ConfusionMatrix, IndicatorCorrelations, Leaderboard, PatternStats};
pub use metrics::{MetricSpec, SystemScore};
pub use trec::{JudgmentSet, JudgmentSource, RunEntry, SystemRun};

pub type Result<T> = std::result::Result<T, Error>;

/// Highest relevance label / criterion grade on the fixed 0-3 scale.
pub const MAX_LABEL: u8 = 3;
