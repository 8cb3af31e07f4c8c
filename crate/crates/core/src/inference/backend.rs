//! Generation backends: an HTTP chat-completion client and a scriptable mock.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::GenerationConfig;
use crate::prompt::SynthesizedPrompt;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("malformed response: {0}")]
    Response(String),
    #[error("scripted failure: {0}")]
    Scripted(String),
}

/// One backend call. Latency is reported by the backend itself so scripted mocks
/// stay bit-reproducible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attempt {
    pub result: Result<String, BackendError>,
    pub latency: Duration,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, prompt: &SynthesizedPrompt, cfg: &GenerationConfig) -> Attempt;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
}

#[derive(Debug, Error)]
pub enum BackendConfigError {
    #[error("cannot read backend config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("backend config does not parse: {0}")]
    Parse(String),
    #[error("backend {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("unknown backend id {0:?}")]
    UnknownBackend(String),
}

/// Declarative backend description. API keys are only ever read from the
/// environment variable named by `api_key_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend_id: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<MockScript>,
}

impl BackendConfig {
    pub fn mock(backend_id: impl Into<String>, script: MockScript) -> Self {
        BackendConfig {
            backend_id: backend_id.into(),
            kind: BackendKind::Mock,
            base_url: None,
            api_key_env: None,
            model_name: None,
            script: Some(script),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Backend>, BackendConfigError> {
        let invalid = |reason: &str| BackendConfigError::Invalid {
            id: self.backend_id.clone(),
            reason: reason.to_string(),
        };
        match self.kind {
            BackendKind::Mock => {
                let script = self.script.clone().ok_or_else(|| invalid("mock backend needs a script"))?;
                Ok(Arc::new(MockBackend::new(self.backend_id.clone(), script)))
            }
            BackendKind::Http => {
                let base_url = self.base_url.clone().ok_or_else(|| invalid("http backend needs base_url"))?;
                let api_key = match &self.api_key_env {
                    Some(var) => Some(
                        std::env::var(var).map_err(|_| BackendConfigError::MissingApiKey(var.clone()))?,
                    ),
                    None => None,
                };
                Ok(Arc::new(HttpBackend {
                    id: self.backend_id.clone(),
                    endpoint: chat_endpoint(&base_url),
                    model: self.model_name.clone().unwrap_or_else(|| self.backend_id.clone()),
                    api_key,
                }))
            }
        }
    }
}

/// Loads one backend config object or an array of them.
pub fn load_backend_configs(path: &Path) -> Result<Vec<BackendConfig>, BackendConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| BackendConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_backend_configs(&text)
}

pub fn parse_backend_configs(text: &str) -> Result<Vec<BackendConfig>, BackendConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| BackendConfigError::Parse(e.to_string()))?;
    let configs = match value {
        Value::Array(_) => serde_json::from_value(value),
        other => serde_json::from_value(other).map(|c| vec![c]),
    }
    .map_err(|e| BackendConfigError::Parse(e.to_string()))?;
    Ok(configs)
}

fn chat_endpoint(base_url: &str) -> String {
    let trimmed = base_url.trim_end_matches('/');
    if trimmed.ends_with("/chat/completions") {
        trimmed.to_string()
    } else {
        format!("{trimmed}/chat/completions")
    }
}

/// Chat-completion client speaking the common `/chat/completions` JSON dialect.
pub struct HttpBackend {
    id: String,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn request_body(&self, prompt: &SynthesizedPrompt, cfg: &GenerationConfig) -> Value {
        json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": prompt.rendered_text }],
            "temperature": cfg.temperature,
            "top_k": cfg.top_k,
            "top_p": cfg.top_p,
            "max_tokens": cfg.max_new_tokens,
        })
    }

    fn call(&self, prompt: &SynthesizedPrompt, cfg: &GenerationConfig) -> Result<String, BackendError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.request_timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(self.request_body(prompt, cfg)).map_err(map_ureq_error)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(map_ureq_error)?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { status, body });
        }
        let value: Value =
            serde_json::from_str(&body).map_err(|e| BackendError::Response(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| BackendError::Response("missing choices[0].message.content".into()))
    }
}

fn map_ureq_error(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, prompt: &SynthesizedPrompt, cfg: &GenerationConfig) -> Attempt {
        let start = Instant::now();
        let result = self.call(prompt, cfg);
        Attempt {
            result,
            latency: start.elapsed(),
        }
    }
}

fn default_repeat_token() -> String {
    "结节".to_string()
}

fn default_repeat_count() -> usize {
    5
}

/// Deterministic reply script for [`MockBackend`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MockScript {
    /// Returns the prompt's inserted finding verbatim.
    Echo,
    /// Returns an empty string.
    Null,
    /// Returns `token` repeated `count` times, space separated.
    Repeat {
        #[serde(default = "default_repeat_token")]
        token: String,
        #[serde(default = "default_repeat_count")]
        count: usize,
    },
    Fixed { text: String },
    /// Per-record replies; records not listed fall back to `fallback` (null by default).
    Lookup {
        responses: BTreeMap<String, String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fallback: Option<Box<MockScript>>,
    },
    Error { message: String },
    /// Reports `latency_ms` for the wrapped reply, without sleeping.
    Slow { latency_ms: u64, then: Box<MockScript> },
    /// The k-th call for a record uses `steps[k]`, repeating the last step afterwards.
    Sequence { steps: Vec<MockScript> },
}

impl MockScript {
    fn reply(&self, prompt: &SynthesizedPrompt, attempt: usize) -> Attempt {
        let ok = |s: String| Attempt {
            result: Ok(s),
            latency: Duration::ZERO,
        };
        match self {
            MockScript::Echo => ok(prompt.input.clone()),
            MockScript::Null => ok(String::new()),
            MockScript::Repeat { token, count } => ok(vec![token.as_str(); *count].join(" ")),
            MockScript::Fixed { text } => ok(text.clone()),
            MockScript::Lookup { responses, fallback } => match responses.get(&prompt.record_id) {
                Some(text) => ok(text.clone()),
                None => fallback
                    .as_deref()
                    .map_or_else(|| ok(String::new()), |f| f.reply(prompt, attempt)),
            },
            MockScript::Error { message } => Attempt {
                result: Err(BackendError::Scripted(message.clone())),
                latency: Duration::ZERO,
            },
            MockScript::Slow { latency_ms, then } => Attempt {
                latency: Duration::from_millis(*latency_ms),
                ..then.reply(prompt, attempt)
            },
            MockScript::Sequence { steps } => match steps.get(attempt).or(steps.last()) {
                Some(step) => step.reply(prompt, attempt),
                None => ok(String::new()),
            },
        }
    }
}

/// Scripted backend for tests and offline runs. Calls are counted per record so
/// sequences replay identically regardless of scheduling.
pub struct MockBackend {
    id: String,
    script: MockScript,
    calls: Mutex<HashMap<String, usize>>,
}

impl MockBackend {
    pub fn new(id: impl Into<String>, script: MockScript) -> Self {
        MockBackend {
            id: id.into(),
            script,
            calls: Mutex::new(HashMap::new()),
        }
    }

    pub fn calls_for(&self, record_id: &str) -> usize {
        self.calls.lock().expect("mock call counter").get(record_id).copied().unwrap_or(0)
    }

    pub fn total_calls(&self) -> usize {
        self.calls.lock().expect("mock call counter").values().sum()
    }
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, prompt: &SynthesizedPrompt, _cfg: &GenerationConfig) -> Attempt {
        let attempt = {
            let mut calls = self.calls.lock().expect("mock call counter");
            let n = calls.entry(prompt.record_id.clone()).or_default();
            *n += 1;
            *n - 1
        };
        self.script.reply(prompt, attempt)
    }
}
