//! Guarded generation: drives a backend until its output passes the null,
//! timeout and repetition checks or the retry budget is spent.

mod backend;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    load_backend_configs, parse_backend_configs, Attempt, Backend, BackendConfig,
    BackendConfigError, BackendError, BackendKind, HttpBackend, MockBackend, MockScript,
};

use crate::prompt::SynthesizedPrompt;
use crate::provenance::{self, Provenance};
use crate::segment::segment_text;

pub const DEFAULT_MAX_NEW_TOKENS: u32 = 512;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_TOP_K: u32 = 50;
pub const DEFAULT_TOP_P: f64 = 1.0;
pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_MAX_RETRIES: u32 = 3;
pub const DEFAULT_REPETITION_LIMIT: usize = 4;
/// Longest n-gram order inspected by the repetition guard.
pub const MAX_REPEAT_NGRAM: usize = 3;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// Sampling parameters are passed through to the backend untouched; the timeout,
/// retry budget and repetition limit drive the local guard loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    #[serde(rename = "request_timeout_secs", with = "duration_secs")]
    pub request_timeout: Duration,
    pub max_retries: u32,
    pub repetition_limit: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            top_k: DEFAULT_TOP_K,
            top_p: DEFAULT_TOP_P,
            request_timeout: DEFAULT_REQUEST_TIMEOUT,
            max_retries: DEFAULT_MAX_RETRIES,
            repetition_limit: DEFAULT_REPETITION_LIMIT,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |m: &str| Err(InferenceError::InvalidConfig(m.to_string()));
        if self.max_new_tokens < 1 {
            return bad("max_new_tokens must be at least 1");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be a non-negative number");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must lie in (0, 1]");
        }
        if self.request_timeout.is_zero() {
            return bad("request_timeout_secs must be positive");
        }
        if self.repetition_limit < 2 {
            return bad("repetition_limit must be at least 2");
        }
        Ok(())
    }

    /// Parses a TOML or JSON document; missing keys take their defaults.
    pub fn parse(text: &str) -> Result<Self, InferenceError> {
        let cfg: GenerationConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| InferenceError::InvalidConfig(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| InferenceError::InvalidConfig(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, InferenceError> {
        let text = std::fs::read_to_string(path).map_err(|source| InferenceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    NullOutput,
    Repetition,
    Timeout,
    BackendError,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::NullOutput => "null_output",
            FailureKind::Repetition => "repetition",
            FailureKind::Timeout => "timeout",
            FailureKind::BackendError => "backend_error",
        }
    }
}

impl std::fmt::Display for FailureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Result of the guarded loop for one record. `failure` is `None` exactly when
/// `impression_text` is non-empty and passed every guard; on failure the text of
/// the last attempt is kept for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub record_id: String,
    pub backend_id: String,
    #[serde(rename = "impression")]
    pub impression_text: String,
    pub attempts: u32,
    /// Sum over all attempts.
    pub latency_ms: f64,
    pub attempt_latency_ms: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureKind>,
}

impl GenerationOutcome {
    pub fn is_success(&self) -> bool {
        self.failure.is_none()
    }
}

/// Largest `k` such that some 1..=`max_n`-gram occurs `k` times back to back.
///
/// For a period `n`, a stretch where `tokens[j] == tokens[j + n]` holds for `r`
/// consecutive `j` contains `r / n + 1` consecutive copies of an `n`-gram.
pub fn max_consecutive_repeats(tokens: &[String], max_n: usize) -> usize {
    if tokens.is_empty() {
        return 0;
    }
    let mut best = 1;
    for n in 1..=max_n.min(tokens.len() / 2) {
        let mut run = 0;
        for j in 0..tokens.len() - n {
            if tokens[j] == tokens[j + n] {
                run += 1;
                best = best.max(run / n + 1);
            } else {
                run = 0;
            }
        }
    }
    best
}

/// Pure check of one raw attempt. The checks run in the order null output,
/// timeout, repetition and the first failing one is reported.
pub fn quality_check(text: &str, latency: Duration, cfg: &GenerationConfig) -> Result<(), FailureKind> {
    if text.trim().is_empty() {
        return Err(FailureKind::NullOutput);
    }
    if latency > cfg.request_timeout {
        return Err(FailureKind::Timeout);
    }
    let tokens = segment_text(text);
    if max_consecutive_repeats(tokens.tokens(), MAX_REPEAT_NGRAM) >= cfg.repetition_limit {
        return Err(FailureKind::Repetition);
    }
    Ok(())
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// Calls the backend until an attempt passes [`quality_check`], making at most
/// `max_retries + 1` calls. Failures are returned as data.
pub fn generate_checked(
    backend: &dyn Backend,
    prompt: &SynthesizedPrompt,
    cfg: &GenerationConfig,
) -> GenerationOutcome {
    let mut attempt_latency_ms = Vec::new();
    let mut last_text = String::new();
    let mut failure = None;
    for _ in 0..=cfg.max_retries {
        let Attempt { result, latency } = backend.generate(prompt, cfg);
        attempt_latency_ms.push(ms(latency));
        let verdict = match result {
            Ok(text) => {
                let v = quality_check(&text, latency, cfg);
                last_text = text;
                v
            }
            Err(BackendError::Timeout) => Err(FailureKind::Timeout),
            Err(e) => {
                log::warn!("backend {} failed on {}: {e}", backend.id(), prompt.record_id);
                Err(FailureKind::BackendError)
            }
        };
        match verdict {
            Ok(()) => {
                failure = None;
                break;
            }
            Err(kind) => failure = Some(kind),
        }
    }
    GenerationOutcome {
        record_id: prompt.record_id.clone(),
        backend_id: backend.id().to_string(),
        impression_text: last_text,
        attempts: attempt_latency_ms.len() as u32,
        latency_ms: attempt_latency_ms.iter().sum(),
        attempt_latency_ms,
        failure,
    }
}

/// Runs [`generate_checked`] over a batch with at most `parallel` requests in
/// flight. Outcomes are returned sorted by record id.
pub fn infer_batch(
    backend: &dyn Backend,
    prompts: &[SynthesizedPrompt],
    cfg: &GenerationConfig,
    parallel: usize,
) -> Vec<GenerationOutcome> {
    let workers = parallel.max(1).min(prompts.len().max(1));
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(prompts.len()));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(p) = prompts.get(i) else { break };
                let outcome = generate_checked(backend, p, cfg);
                results.lock().expect("outcome collector").push(outcome);
            });
        }
    });
    let mut outcomes = results.into_inner().expect("outcome collector");
    outcomes.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    outcomes
}

pub fn write_outcomes(
    path: &Path,
    outcomes: &[GenerationOutcome],
    prov: Option<&Provenance>,
) -> std::io::Result<()> {
    provenance::write_jsonl(path, prov, outcomes)
}

pub fn read_outcomes(path: &Path) -> Result<Vec<GenerationOutcome>, InferenceError> {
    let text = std::fs::read_to_string(path).map_err(|source| InferenceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    provenance::parse_jsonl(&text).map_err(|(line, reason)| InferenceError::Malformed { line, reason })
}

pub fn read_prompts(path: &Path) -> Result<Vec<SynthesizedPrompt>, InferenceError> {
    let text = std::fs::read_to_string(path).map_err(|source| InferenceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    provenance::parse_jsonl(&text).map_err(|(line, reason)| InferenceError::Malformed { line, reason })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn prompt(id: &str, input: &str) -> SynthesizedPrompt {
        SynthesizedPrompt {
            template_id: 1,
            record_id: id.into(),
            rendered_text: input.into(),
            input: input.into(),
            label: None,
        }
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    /// Independent scan: for every start and every n, count copies directly.
    fn brute_repeats(t: &[String], max_n: usize) -> usize {
        let mut best = usize::from(!t.is_empty());
        for n in 1..=max_n {
            for start in 0..t.len() {
                let mut k = 1;
                while start + (k + 1) * n <= t.len()
                    && t[start..start + n] == t[start + k * n..start + (k + 1) * n]
                {
                    k += 1;
                }
                if start + n <= t.len() {
                    best = best.max(k);
                }
            }
        }
        best
    }

    #[test]
    fn defaults_match_reference_configuration() {
        let g = GenerationConfig::default();
        assert_eq!(g.max_new_tokens, 512);
        assert_eq!((g.temperature, g.top_k, g.top_p), (1.0, 50, 1.0));
        assert_eq!(g.request_timeout, Duration::from_secs(120));
        assert_eq!(g.max_retries, 3);
        assert_eq!(g.repetition_limit, 4);
        g.validate().unwrap();
    }

    #[test]
    fn config_parses_toml_and_json_and_rejects_bad_values() {
        let g = GenerationConfig::parse("max_retries = 1\nrequest_timeout_secs = 2.5\n").unwrap();
        assert_eq!(g.max_retries, 1);
        assert_eq!(g.request_timeout, Duration::from_millis(2500));
        assert_eq!(GenerationConfig::parse(r#"{"top_k": 5}"#).unwrap().top_k, 5);
        assert!(GenerationConfig::parse("top_p = 0.0").is_err());
        assert!(GenerationConfig::parse("max_new_tokens = 0").is_err());
        assert!(GenerationConfig::parse("temperature = -1.0").is_err());
        assert!(GenerationConfig::parse("bogus = 1").is_err());
    }

    #[test]
    fn quality_check_cases() {
        let g = GenerationConfig::default();
        let ok = Duration::from_secs(1);
        assert_eq!(quality_check("", ok, &g), Err(FailureKind::NullOutput));
        assert_eq!(quality_check("  \n", ok, &g), Err(FailureKind::NullOutput));
        assert_eq!(quality_check("a a a a a a", ok, &g), Err(FailureKind::Repetition));
        assert_eq!(quality_check("结节 结节 结节 结节 结节", ok, &g), Err(FailureKind::Repetition));
        assert_eq!(
            quality_check("右肺上叶小结节，建议随访。肝脏未见明显异常。", ok, &g),
            Ok(())
        );
        assert_eq!(
            quality_check("right lung nodule", Duration::from_secs(121), &g),
            Err(FailureKind::Timeout)
        );
        assert_eq!(quality_check("a a a b", ok, &g), Ok(()));
    }

    #[test]
    fn repeat_counter_matches_sliding_window_oracle_on_examples() {
        for s in ["a a a a a a", "a b a b a b a b", "a b c a b c a b c a b c", "a b c d", "x"] {
            let t = toks(s);
            assert_eq!(max_consecutive_repeats(&t, 3), brute_repeats(&t, 3), "{s}");
        }
        assert_eq!(max_consecutive_repeats(&toks("a a a a a a"), 3), 6);
        assert_eq!(max_consecutive_repeats(&toks("a b a b a b a b"), 3), 4);
    }

    #[test]
    fn fail_twice_then_pass() {
        let m = MockBackend::new(
            "m",
            MockScript::Sequence {
                steps: vec![MockScript::Null, MockScript::Repeat { token: "结节".into(), count: 5 }, MockScript::Echo],
            },
        );
        let out = generate_checked(&m, &prompt("r", "右肺结节"), &GenerationConfig::default());
        assert_eq!(out.attempts, 3);
        assert!(out.is_success());
        assert_eq!(out.impression_text, "右肺结节");
    }

    #[test]
    fn exhaustion_is_recorded_as_failure() {
        let g = GenerationConfig { max_retries: 2, ..Default::default() };
        let m = MockBackend::new("m", MockScript::Null);
        let out = generate_checked(&m, &prompt("r", "x"), &g);
        assert_eq!(out.attempts, 3);
        assert_eq!(out.failure, Some(FailureKind::NullOutput));
        assert_eq!(m.calls_for("r"), 3);
    }

    #[test]
    fn first_try_success_and_slow_mock_timeout() {
        let g = GenerationConfig::default();
        let out = generate_checked(&MockBackend::new("m", MockScript::Echo), &prompt("r", "x"), &g);
        assert_eq!(out.attempts, 1);
        let slow = MockScript::Slow { latency_ms: 130_000, then: Box::new(MockScript::Echo) };
        let out = generate_checked(&MockBackend::new("m", slow), &prompt("r", "x"), &g);
        assert_eq!(out.failure, Some(FailureKind::Timeout));
        assert_eq!(out.attempts, 4);
        assert_eq!(out.latency_ms, 4.0 * 130_000.0);
    }

    #[test]
    fn backend_errors_become_failure_data() {
        let m = MockBackend::new("m", MockScript::Error { message: "boom".into() });
        let g = GenerationConfig { max_retries: 0, ..Default::default() };
        let out = generate_checked(&m, &prompt("r", "x"), &g);
        assert_eq!(out.failure, Some(FailureKind::BackendError));
        assert_eq!(out.attempts, 1);
    }

    #[test]
    fn batch_is_sorted_and_reproducible() {
        let prompts: Vec<_> = (0..25).rev().map(|i| prompt(&format!("r{i:02}"), &format!("finding {i}"))).collect();
        let run = |par| {
            let m = MockBackend::new(
                "m",
                MockScript::Sequence { steps: vec![MockScript::Null, MockScript::Echo] },
            );
            infer_batch(&m, &prompts, &GenerationConfig::default(), par)
        };
        let a = run(1);
        let b = run(8);
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].record_id < w[1].record_id));
        assert!(a.iter().all(|o| o.attempts == 2 && o.is_success()));
    }

    #[test]
    fn outcome_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.jsonl");
        let m = MockBackend::new("m", MockScript::Null);
        let g = GenerationConfig { max_retries: 0, ..Default::default() };
        let outs = vec![generate_checked(&m, &prompt("r", "x"), &g)];
        write_outcomes(&path, &outs, Some(&Provenance::new("infer", "h", None))).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().contains(r#""failure":"null_output""#));
        assert_eq!(read_outcomes(&path).unwrap(), outs);
    }

    proptest! {
        #[test]
        fn repeat_counter_agrees_with_brute_force(t in proptest::collection::vec("[abc]", 0..16)) {
            prop_assert_eq!(max_consecutive_repeats(&t, 3), brute_repeats(&t, 3));
        }

        #[test]
        fn passing_outputs_have_no_long_repeats(t in proptest::collection::vec("[ab肺]", 1..16)) {
            let text = t.join(" ");
            let g = GenerationConfig::default();
            if quality_check(&text, Duration::ZERO, &g).is_ok() {
                prop_assert!(brute_repeats(segment_text(&text).tokens(), 3) < g.repetition_limit);
            }
        }

        #[test]
        fn backend_calls_are_bounded(retries in 0u32..6, fails in 0usize..10) {
            let mut steps = vec![MockScript::Null; fails];
            steps.push(MockScript::Echo);
            let m = MockBackend::new("m", MockScript::Sequence { steps });
            let g = GenerationConfig { max_retries: retries, ..Default::default() };
            let out = generate_checked(&m, &prompt("r", "ok"), &g);
            prop_assert!(m.total_calls() <= retries as usize + 1);
            prop_assert_eq!(out.attempts as usize, m.total_calls());
            prop_assert_eq!(out.is_success(), fails <= retries as usize);
        }
    }
}
