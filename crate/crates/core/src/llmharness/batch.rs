use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::client::{ChatClient, ChatMessage, ChatRequest, ChatResponse, ClientError};
use super::parse::{parse_grade, Grade, GradeParse};
use super::prompt::PromptBundle;
use super::LlmError;
use crate::corpus::Label;
use crate::metrics::{macro_metrics, mean_sd, ConfusionMatrix, MetricsReport};
use crate::text::sha256_hex;

/// Temperatures used for the published comparison.
pub const DEFAULT_TEMPERATURES: [f64; 3] = [0.0, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts per request, the first one included.
    pub max_attempts: usize,
    /// Delay before retry `k` (1-based) is `backoff_ms * 2^(k-1)`.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: String,
    pub temperature: f64,
    pub max_concurrency: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(model: &str, temperature: f64) -> RunConfig {
        RunConfig {
            model: model.to_string(),
            temperature,
            max_concurrency: 4,
            retry: RetryPolicy::default(),
            cache_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidConfig("temperature must be >= 0".into()));
        }
        if self.max_concurrency == 0 {
            return Err(LlmError::InvalidConfig(
                "max_concurrency must be >= 1".into(),
            ));
        }
        if self.retry.max_attempts == 0 {
            return Err(LlmError::InvalidConfig("max_attempts must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn chat_request(bundle: &PromptBundle, config: &RunConfig) -> ChatRequest {
    ChatRequest {
        model: config.model.clone(),
        messages: vec![
            ChatMessage::new("system", bundle.system.clone()),
            ChatMessage::new("user", bundle.user.clone()),
        ],
        temperature: config.temperature,
    }
}

/// Content address of a request: sha256 over model, temperature and messages.
pub fn cache_key(request: &ChatRequest) -> String {
    let canonical = serde_json::to_string(&(
        &request.model,
        format!("{}", request.temperature),
        &request.messages,
    ))
    .expect("request serializes");
    sha256_hex(canonical.as_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    model: String,
    temperature: f64,
    response: ChatResponse,
}

fn cache_read(dir: &Path, key: &str) -> Option<ChatResponse> {
    let text = fs::read_to_string(dir.join(format!("{key}.json"))).ok()?;
    serde_json::from_str::<CacheEntry>(&text)
        .ok()
        .map(|e| e.response)
}

/// Write-then-rename so concurrent readers never see a partial file.
fn cache_write(dir: &Path, key: &str, entry: &CacheEntry) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(
        serde_json::to_string(entry)
            .expect("entry serializes")
            .as_bytes(),
    )?;
    tmp.persist(dir.join(format!("{key}.json")))
        .map_err(|e| e.error)?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cached: bool,
    /// Client calls made for this request, failed ones included.
    pub attempts: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTotals {
    pub requests: usize,
    pub cache_hits: usize,
    pub client_calls: usize,
    pub retries: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub entries: Vec<LedgerEntry>,
}

impl CostLedger {
    pub fn totals(&self) -> CostTotals {
        let mut t = CostTotals {
            requests: self.entries.len(),
            ..Default::default()
        };
        for e in &self.entries {
            t.cache_hits += e.cached as usize;
            t.client_calls += e.attempts;
            t.retries += e.attempts.saturating_sub(1);
            t.prompt_tokens += e.prompt_tokens;
            t.completion_tokens += e.completion_tokens;
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeOutcome {
    pub grade: GradeParse,
    /// Last client error when every attempt failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub config: RunConfig,
    pub outcomes: Vec<GradeOutcome>,
    pub ledger: CostLedger,
}

impl BatchResult {
    pub fn grades(&self) -> Vec<Grade> {
        self.outcomes.iter().map(|o| o.grade.parsed).collect()
    }

    /// Indices whose completion needs a human to map it to a label.
    pub fn needs_mapping(&self) -> Vec<usize> {
        self.outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| o.grade.parsed == Grade::Unparseable)
            .map(|(i, _)| i)
            .collect()
    }
}

fn run_one(
    client: &dyn ChatClient,
    bundle: &PromptBundle,
    config: &RunConfig,
) -> (GradeOutcome, LedgerEntry, bool) {
    let request = chat_request(bundle, config);
    let key = cache_key(&request);
    if let Some(dir) = &config.cache_dir {
        if let Some(resp) = cache_read(dir, &key) {
            let entry = LedgerEntry {
                prompt_tokens: resp.prompt_tokens,
                completion_tokens: resp.completion_tokens,
                cached: true,
                attempts: 0,
            };
            let outcome = GradeOutcome {
                grade: parse_grade(&resp.text),
                error: None,
            };
            return (outcome, entry, true);
        }
    }
    let mut last_err = None;
    for attempt in 1..=config.retry.max_attempts {
        if attempt > 1 && config.retry.backoff_ms > 0 {
            thread::sleep(Duration::from_millis(
                config.retry.backoff_ms << (attempt - 2).min(16),
            ));
        }
        match client.complete(&request) {
            Ok(resp) => {
                if let Some(dir) = &config.cache_dir {
                    let entry = CacheEntry {
                        model: config.model.clone(),
                        temperature: config.temperature,
                        response: resp.clone(),
                    };
                    if let Err(e) = cache_write(dir, &key, &entry) {
                        log::warn!("could not write cache entry {key}: {e}");
                    }
                }
                let entry = LedgerEntry {
                    prompt_tokens: resp.prompt_tokens,
                    completion_tokens: resp.completion_tokens,
                    cached: false,
                    attempts: attempt,
                };
                let outcome = GradeOutcome {
                    grade: parse_grade(&resp.text),
                    error: None,
                };
                return (outcome, entry, true);
            }
            Err(e @ ClientError::Fatal(_)) => {
                last_err = Some(e);
                let entry = LedgerEntry {
                    attempts: attempt,
                    ..Default::default()
                };
                return (failed(last_err), entry, false);
            }
            Err(e) => last_err = Some(e),
        }
    }
    let entry = LedgerEntry {
        attempts: config.retry.max_attempts,
        ..Default::default()
    };
    (failed(last_err), entry, false)
}

fn failed(err: Option<ClientError>) -> GradeOutcome {
    GradeOutcome {
        grade: GradeParse {
            raw: String::new(),
            parsed: Grade::Unparseable,
        },
        error: err.map(|e| e.to_string()),
    }
}

/// Grades every bundle, reusing cached completions. Results are aligned
/// with `bundles` regardless of completion order.
pub fn run_batch(
    client: &dyn ChatClient,
    bundles: &[PromptBundle],
    config: &RunConfig,
) -> Result<BatchResult, LlmError> {
    config.validate()?;
    if config.temperature > 1.0 {
        log::warn!(
            "temperature {} is above 1; completions at high temperature are often unusable",
            config.temperature
        );
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_concurrency)
        .build()
        .map_err(|e| LlmError::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<(GradeOutcome, LedgerEntry, bool)> = pool.install(|| {
        bundles
            .par_iter()
            .map(|b| run_one(client, b, config))
            .collect()
    });
    if !bundles.is_empty() && results.iter().all(|(_, _, ok)| !ok) {
        let reason = results
            .iter()
            .find_map(|(o, _, _)| o.error.clone())
            .unwrap_or_default();
        return Err(LlmError::ClientUnavailable(reason));
    }
    let (outcomes, entries): (Vec<_>, Vec<_>) = results.into_iter().map(|(o, e, _)| (o, e)).unzip();
    Ok(BatchResult {
        config: config.clone(),
        outcomes,
        ledger: CostLedger { entries },
    })
}

/// What to do with unparseable completions when scoring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnparseablePolicy {
    /// Count as a miss against the human label.
    #[default]
    Abstain,
    /// Drop from the denominator.
    Exclude,
}

pub fn score_grades(
    truth: &[Label],
    grades: &[Grade],
    policy: UnparseablePolicy,
) -> Result<MetricsReport, LlmError> {
    if truth.len() != grades.len() {
        return Err(LlmError::LengthMismatch {
            truth: truth.len(),
            grades: grades.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, g) in truth.iter().zip(grades) {
        match (g.label(), policy) {
            (Some(p), _) => cm.add(t, p),
            (None, UnparseablePolicy::Abstain) => cm.add_abstention(t),
            (None, UnparseablePolicy::Exclude) => {}
        }
    }
    macro_metrics(&cm).map_err(|_| LlmError::NothingToScore)
}

/// Mean and sample SD of each metric across temperature runs, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSummary {
    pub runs: usize,
    pub accuracy: (f64, f64),
    pub precision: (f64, f64),
    pub recall: (f64, f64),
    pub f1: (f64, f64),
}

pub fn aggregate_temperature_runs(
    reports: &[MetricsReport],
) -> Result<TemperatureSummary, LlmError> {
    if reports.is_empty() {
        return Err(LlmError::NothingToScore);
    }
    let col = |f: fn(&MetricsReport) -> f64| {
        let v: Vec<f64> = reports.iter().map(|r| 100.0 * f(r)).collect();
        mean_sd(&v).expect("nonempty")
    };
    Ok(TemperatureSummary {
        runs: reports.len(),
        accuracy: col(|r| r.accuracy),
        precision: col(|r| r.macro_precision),
        recall: col(|r| r.macro_recall),
        f1: col(|r| r.macro_f1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llmharness::client::{MockClient, MockScript};
    use crate::llmharness::prompt::{build_prompt, Samples};

    fn bundles(n: usize) -> Vec<PromptBundle> {
        let s = Samples::published("transcription").unwrap();
        (0..n)
            .map(|i| build_prompt("transcription", &s, &format!("answer number {i}")).unwrap())
            .collect()
    }

    fn config() -> RunConfig {
        RunConfig {
            retry: RetryPolicy {
                max_attempts: 3,
                backoff_ms: 0,
            },
            ..RunConfig::new("mock-model", 0.0)
        }
    }

    #[test]
    fn echo_grades_all_correct() {
        let client = MockClient::echo("A");
        let r = run_batch(&client, &bundles(5), &config()).unwrap();
        assert!(r.grades().iter().all(|g| *g == Grade::Correct));
        assert_eq!(r.ledger.totals().retries, 0);
        assert_eq!(client.calls(), 5);
    }

    #[test]
    fn second_run_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            cache_dir: Some(dir.path().to_path_buf()),
            ..config()
        };
        let client = MockClient::echo("C. Incomplete");
        let first = run_batch(&client, &bundles(4), &cfg).unwrap();
        assert_eq!(client.calls(), 4);
        let second = run_batch(&client, &bundles(4), &cfg).unwrap();
        assert_eq!(client.calls(), 4);
        assert_eq!(second.ledger.totals().cache_hits, 4);
        assert_eq!(first.grades(), second.grades());
        // A different temperature is a different key.
        let warm = RunConfig {
            temperature: 0.5,
            ..cfg
        };
        run_batch(&client, &bundles(1), &warm).unwrap();
        assert_eq!(client.calls(), 5);
    }

    #[test]
    fn retries_then_succeeds() {
        let client = MockClient::new(MockScript {
            default_reply: "B".into(),
            fail_first: 2,
            ..Default::default()
        });
        let r = run_batch(&client, &bundles(1), &config()).unwrap();
        assert_eq!(r.grades(), vec![Grade::Incorrect]);
        assert_eq!(r.ledger.entries[0].attempts, 3);
        assert_eq!(r.ledger.totals().retries, 2);
    }

    #[test]
    fn exhausted_retries() {
        let client = MockClient::new(MockScript {
            default_reply: "B".into(),
            fail_first: 5,
            ..Default::default()
        });
        assert!(matches!(
            run_batch(&client, &bundles(2), &config()),
            Err(LlmError::ClientUnavailable(_))
        ));
    }

    #[test]
    fn order_follows_input() {
        let client = MockClient::new(MockScript {
            default_reply: "A".into(),
            rules: vec![super::super::client::MockRule {
                contains: "number 3".into(),
                reply: "C".into(),
            }],
            fail_first: 0,
        });
        let cfg = RunConfig {
            max_concurrency: 4,
            ..config()
        };
        let g = run_batch(&client, &bundles(8), &cfg).unwrap().grades();
        for (i, grade) in g.iter().enumerate() {
            assert_eq!(
                *grade,
                if i == 3 {
                    Grade::Incomplete
                } else {
                    Grade::Correct
                }
            );
        }
    }

    #[test]
    fn unparseable_policies() {
        let truth = [Label::Correct, Label::Incorrect];
        let grades = [Grade::Correct, Grade::Unparseable];
        let a = score_grades(&truth, &grades, UnparseablePolicy::Abstain).unwrap();
        assert_eq!(a.accuracy, 0.5);
        let e = score_grades(&truth, &grades, UnparseablePolicy::Exclude).unwrap();
        assert_eq!(e.accuracy, 1.0);
    }
}
