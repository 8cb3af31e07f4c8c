//! Out-of-process trainer handles. A trainer accepts a job spec and answers with
//! the adapter it produced and a backend config serving the tuned model.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TrainingJobSpec;
use crate::inference::BackendConfig;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("trainer unreachable: {0}")]
    Unreachable(String),
    #[error("job {job_id} failed: {reason}")]
    JobFailed { job_id: String, reason: String },
    #[error("trainer reply is malformed: {0}")]
    BadReply(String),
    #[error("cannot read trainer config {path}: {reason}")]
    Config { path: String, reason: String },
}

/// What a trainer hands back for a finished job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub adapter_ref: String,
    pub backend: BackendConfig,
}

pub trait Trainer: Send + Sync {
    fn submit(&self, spec: &TrainingJobSpec) -> Result<TrainedModel, TrainerError>;
}

/// Desk-scale trainer: returns a preconfigured backend per template id without
/// training anything. Templates with no entry fail their job.
#[derive(Debug, Clone, Default)]
pub struct StubTrainer {
    backends: BTreeMap<u8, BackendConfig>,
}

impl StubTrainer {
    pub fn new(backends: BTreeMap<u8, BackendConfig>) -> Self {
        StubTrainer { backends }
    }

    /// Reads a JSON object mapping template ids to backend configs.
    pub fn load(path: &Path) -> Result<Self, TrainerError> {
        let err = |reason: String| TrainerError::Config {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let raw: BTreeMap<String, BackendConfig> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let backends = raw
            .into_iter()
            .map(|(k, v)| k.parse::<u8>().map(|id| (id, v)).map_err(|_| err(format!("bad template id {k:?}"))))
            .collect::<Result<_, _>>()?;
        Ok(StubTrainer { backends })
    }
}

impl Trainer for StubTrainer {
    fn submit(&self, spec: &TrainingJobSpec) -> Result<TrainedModel, TrainerError> {
        let backend = spec
            .template_id
            .and_then(|t| self.backends.get(&t))
            .cloned()
            .ok_or_else(|| TrainerError::JobFailed {
                job_id: spec.job_id.clone(),
                reason: format!("stub has no backend for template {:?}", spec.template_id),
            })?;
        Ok(TrainedModel {
            adapter_ref: spec.output_adapter_ref.clone(),
            backend,
        })
    }
}

/// Runs `program args... <spec.json>` and reads a [`TrainedModel`] from stdout.
#[derive(Debug, Clone)]
pub struct CommandTrainer {
    pub program: String,
    pub args: Vec<String>,
    pub spec_dir: PathBuf,
}

impl Trainer for CommandTrainer {
    fn submit(&self, spec: &TrainingJobSpec) -> Result<TrainedModel, TrainerError> {
        let spec_path = self.spec_dir.join(format!("{}.json", spec.job_id));
        spec.write(&spec_path)
            .map_err(|e| TrainerError::Unreachable(format!("cannot write job spec: {e}")))?;
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(&spec_path)
            .output()
            .map_err(|e| TrainerError::Unreachable(format!("{}: {e}", self.program)))?;
        if !out.status.success() {
            return Err(TrainerError::JobFailed {
                job_id: spec.job_id.clone(),
                reason: format!("{}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim()),
            });
        }
        serde_json::from_slice(&out.stdout).map_err(|e| TrainerError::BadReply(e.to_string()))
    }
}

/// POSTs the job spec as JSON and reads a [`TrainedModel`] from the response body.
#[derive(Debug, Clone)]
pub struct HttpTrainer {
    pub url: String,
    pub timeout: Duration,
}

impl Trainer for HttpTrainer {
    fn submit(&self, spec: &TrainingJobSpec) -> Result<TrainedModel, TrainerError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = agent
            .post(&self.url)
            .send_json(spec)
            .map_err(|e| TrainerError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TrainerError::Unreachable(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TrainerError::JobFailed {
                job_id: spec.job_id.clone(),
                reason: format!("HTTP {status}: {body}"),
            });
        }
        serde_json::from_str(&body).map_err(|e| TrainerError::BadReply(e.to_string()))
    }
}

/// Builds a trainer from a command-line handle: `stub:<backends.json>`, an
/// `http://` or `https://` URL, or a whitespace-separated command line.
pub fn trainer_from_handle(handle: &str, spec_dir: &Path) -> Result<Box<dyn Trainer>, TrainerError> {
    if let Some(path) = handle.strip_prefix("stub:") {
        return Ok(Box::new(StubTrainer::load(Path::new(path))?));
    }
    if handle.starts_with("http://") || handle.starts_with("https://") {
        return Ok(Box::new(HttpTrainer {
            url: handle.to_string(),
            timeout: Duration::from_secs(3600),
        }));
    }
    let mut parts = handle.split_whitespace().map(str::to_owned);
    let program = parts
        .next()
        .ok_or_else(|| TrainerError::Unreachable("empty trainer command".into()))?;
    Ok(Box::new(CommandTrainer {
        program,
        args: parts.collect(),
        spec_dir: spec_dir.to_path_buf(),
    }))
}
