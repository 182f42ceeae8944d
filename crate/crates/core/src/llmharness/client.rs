use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClientError {
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("request rejected: {0}")]
    Fatal(String),
}

/// A chat-completion endpoint.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError>;
}

/// Rough token count used by the mock: whitespace-separated words.
pub fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Scripted replies for [`MockClient`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    /// Reply when no rule matches.
    #[serde(default)]
    pub default_reply: String,
    /// First rule whose `contains` occurs in the user message wins.
    #[serde(default)]
    pub rules: Vec<MockRule>,
    /// Each distinct request fails this many times before succeeding.
    #[serde(default)]
    pub fail_first: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    pub reply: String,
}

pub struct MockClient {
    script: MockScript,
    calls: AtomicUsize,
    failures: Mutex<HashMap<String, usize>>,
}

impl MockClient {
    pub fn new(script: MockScript) -> MockClient {
        MockClient {
            script,
            calls: AtomicUsize::new(0),
            failures: Mutex::new(HashMap::new()),
        }
    }

    /// Always replies `reply`.
    pub fn echo(reply: &str) -> MockClient {
        MockClient::new(MockScript {
            default_reply: reply.to_string(),
            ..Default::default()
        })
    }

    pub fn from_fixture(path: &Path) -> std::io::Result<MockClient> {
        let text = std::fs::read_to_string(path)?;
        let script = serde_json::from_str(&text).map_err(std::io::Error::other)?;
        Ok(MockClient::new(script))
    }

    /// Number of `complete` calls so far, failed ones included.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatClient for MockClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let user = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map_or("", |m| m.content.as_str());
        if self.script.fail_first > 0 {
            let mut f = self.failures.lock().expect("mock lock");
            let n = f.entry(user.to_string()).or_insert(0);
            if *n < self.script.fail_first {
                *n += 1;
                return Err(ClientError::Transient(format!("scripted failure {}", *n)));
            }
        }
        let text = self
            .script
            .rules
            .iter()
            .find(|r| user.contains(&r.contains))
            .map_or(self.script.default_reply.clone(), |r| r.reply.clone());
        let prompt_tokens = request
            .messages
            .iter()
            .map(|m| approx_tokens(&m.content))
            .sum();
        Ok(ChatResponse {
            completion_tokens: approx_tokens(&text),
            prompt_tokens,
            text,
        })
    }
}

#[cfg(feature = "openai")]
pub use http::OpenAiClient;

#[cfg(feature = "openai")]
mod http {
    use super::*;

    /// Environment variable holding the API key. The key is never logged.
    pub const API_KEY_VAR: &str = "OPENAI_API_KEY";
    const ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

    pub struct OpenAiClient {
        http: reqwest::blocking::Client,
        key: String,
    }

    impl OpenAiClient {
        pub fn from_env() -> Result<OpenAiClient, ClientError> {
            let key = std::env::var(API_KEY_VAR)
                .map_err(|_| ClientError::Fatal(format!("{API_KEY_VAR} is not set")))?;
            Ok(OpenAiClient {
                http: reqwest::blocking::Client::new(),
                key,
            })
        }
    }

    #[derive(Deserialize)]
    struct Completion {
        choices: Vec<Choice>,
        usage: Option<Usage>,
    }
    #[derive(Deserialize)]
    struct Choice {
        message: ChatMessage,
    }
    #[derive(Deserialize)]
    struct Usage {
        prompt_tokens: u64,
        completion_tokens: u64,
    }

    impl ChatClient for OpenAiClient {
        fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError> {
            let resp = self
                .http
                .post(ENDPOINT)
                .bearer_auth(&self.key)
                .json(request)
                .send()
                .map_err(|e| ClientError::Transient(e.without_url().to_string()))?;
            let status = resp.status();
            if status.as_u16() == 429 || status.is_server_error() {
                return Err(ClientError::Transient(format!("HTTP {status}")));
            }
            if !status.is_success() {
                return Err(ClientError::Fatal(format!("HTTP {status}")));
            }
            let body: Completion = resp
                .json()
                .map_err(|e| ClientError::Transient(e.to_string()))?;
            let text = body
                .choices
                .into_iter()
                .next()
                .map(|c| c.message.content)
                .ok_or_else(|| ClientError::Fatal("no choices in response".into()))?;
            let (p, c) = body
                .usage
                .map_or((0, 0), |u| (u.prompt_tokens, u.completion_tokens));
            Ok(ChatResponse {
                text,
                prompt_tokens: p,
                completion_tokens: c,
            })
        }
    }
}
