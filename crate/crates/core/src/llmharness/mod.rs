//! Grading with chat-completion models: prompt construction, completion
//! parsing, batched execution with caching and retries, temperature
//! aggregation and fine-tuning dataset export.

pub mod batch;
pub mod client;
pub mod finetune;
pub mod parse;
pub mod prompt;

use thiserror::Error;

pub use batch::{
    aggregate_temperature_runs, cache_key, run_batch, score_grades, BatchResult, CostLedger,
    CostTotals, GradeOutcome, LedgerEntry, RetryPolicy, RunConfig, TemperatureSummary,
    UnparseablePolicy, DEFAULT_TEMPERATURES,
};
pub use client::{
    ChatClient, ChatMessage, ChatRequest, ChatResponse, ClientError, MockClient, MockRule,
    MockScript,
};
pub use finetune::{
    export_finetune_dataset, finetune_example, import_finetune_dataset, FinetuneExample,
};
pub use parse::{parse_grade, Grade, GradeParse};
pub use prompt::{
    build_prompt, option_line, prompt_for_record, PromptBundle, Samples, ROOT_PROMPT,
};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("unknown question type {0:?}")]
    UnknownQuestionType(String),
    #[error("sample answers must all be nonempty")]
    EmptySamples,
    #[error("student answer is empty")]
    EmptyAnswer,
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("no request succeeded and nothing was cached: {0}")]
    ClientUnavailable(String),
    #[error("{truth} human labels vs {grades} grades")]
    LengthMismatch { truth: usize, grades: usize },
    #[error("nothing to score")]
    NothingToScore,
    #[error("fine-tune dataset line {line}: {reason}")]
    MalformedDataset { line: usize, reason: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
