//! Experiment harness for near-domain transfer in automated short-answer
//! grading.
//!
//! The crate covers the whole pipeline: a labelled response corpus (loaded
//! from JSONL or generated synthetically), student-level splits with nested
//! stratified training subsets, a backend-agnostic classifier with early
//! stopping, fraction sweeps and sequential fine-tuning chains, the top-k /
//! one-standard-deviation model selection rule, data/accuracy advantage
//! analytics, error taxonomies, an LLM prompting harness and rank-frequency
//! analysis.

pub mod classifier;
pub mod corpus;
pub mod curriculum;
pub mod erroranalysis;
pub mod llmharness;
pub mod metrics;
pub mod partitioning;
pub mod report;
pub mod selection;
pub mod text;
pub mod zipf;

pub use corpus::{Corpus, Label, QuestionId, ResponseRecord};
