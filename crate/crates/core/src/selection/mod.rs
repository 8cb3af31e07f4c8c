//! Prompt selection by small-epoch sweep, and declarative fine-tune job specs
//! for an external trainer.

mod schema;
mod trainer;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use schema::{check as schema_check, job_spec_schema, JOB_SCHEMA_VERSION};
pub use trainer::{
    trainer_from_handle, CommandTrainer, HttpTrainer, StubTrainer, TrainedModel, Trainer, TrainerError,
};

use crate::corpus::Corpus;
use crate::inference::{infer_batch, GenerationConfig};
use crate::prompt::{synthesize_batch, PromptTemplate};
use crate::provenance::{self, sha256_hex, Provenance};
use crate::rouge::{score_pairs, RecordScore};

pub const DEFAULT_SMALL_EPOCHS: u32 = 1;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("prompt set {0} is missing or empty")]
    EmptyPromptSet(String),
    #[error("job spec violates its schema: {0:?}")]
    Schema(Vec<String>),
    #[error("no scored templates to select from")]
    NoCandidates,
    #[error("every sweep job failed: {0:?}")]
    AllJobsFailed(BTreeMap<u8, String>),
    #[error("no small-epoch adapter recorded for template {0}")]
    MissingAdapter(u8),
    #[error("unknown selection key {0:?}")]
    UnknownKey(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(context: impl fmt::Display) -> impl FnOnce(std::io::Error) -> SelectionError {
    let context = context.to_string();
    move |source| SelectionError::Io { context, source }
}

/// Quantization, adapter and optimizer settings handed to the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub quantization_bits: u32,
    pub lora_r: u32,
    pub lora_alpha: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub grad_accum_steps: u32,
    pub epochs: u32,
    pub max_seq_len: u32,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            quantization_bits: 4,
            lora_r: 64,
            lora_alpha: 16,
            learning_rate: 1.41e-5,
            batch_size: 64,
            grad_accum_steps: 16,
            epochs: 3,
            max_seq_len: 512,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        let bad = |m: String| Err(SelectionError::InvalidConfig(m));
        if ![4, 8, 16].contains(&self.quantization_bits) {
            return bad(format!("quantization_bits must be 4, 8 or 16, got {}", self.quantization_bits));
        }
        for (name, v) in [
            ("lora_r", self.lora_r),
            ("lora_alpha", self.lora_alpha),
            ("batch_size", self.batch_size),
            ("grad_accum_steps", self.grad_accum_steps),
            ("epochs", self.epochs),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingStage {
    SmallEpoch,
    Full,
}

impl fmt::Display for TrainingStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainingStage::SmallEpoch => "small_epoch",
            TrainingStage::Full => "full",
        })
    }
}

/// Which parameters the trainer may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    /// Transformer weights frozen; only adapter weights train.
    AdaptersOnly,
    /// Only the embedding layers train.
    EmbeddingsOnly,
}

/// Versioned job description consumed by external trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingJobSpec {
    pub schema_version: u32,
    pub job_id: String,
    pub base_model_ref: String,
    pub config: TrainingConfig,
    pub prompt_set_ref: String,
    pub template_id: Option<u8>,
    pub stage: TrainingStage,
    pub epochs_override: Option<u32>,
    /// Epoch to resume from when continuing a previous job.
    pub start_epoch: Option<u32>,
    pub resume_adapter_ref: Option<String>,
    pub output_adapter_ref: String,
    pub freeze_policy: Option<FreezePolicy>,
}

impl TrainingJobSpec {
    /// Checks the config, the prompt set on disk and the published schema.
    pub fn validate(&self) -> Result<(), SelectionError> {
        self.config.validate()?;
        if let Some(e) = self.epochs_override {
            if e > self.config.epochs {
                return Err(SelectionError::InvalidConfig(format!(
                    "epochs_override {e} exceeds epochs {}",
                    self.config.epochs
                )));
            }
        }
        count_prompt_lines(Path::new(&self.prompt_set_ref))?;
        let value = serde_json::to_value(self).expect("serializable spec");
        schema_check(&value, &job_spec_schema()).map_err(SelectionError::Schema)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable spec")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        provenance::write_text(path, &self.to_json())
    }
}

fn count_prompt_lines(path: &Path) -> Result<usize, SelectionError> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| SelectionError::EmptyPromptSet(path.display().to_string()))?;
    match provenance::jsonl_payload_lines(&text).count() {
        0 => Err(SelectionError::EmptyPromptSet(path.display().to_string())),
        n => Ok(n),
    }
}

/// Settings shared by every job of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobOptions {
    pub base_model_ref: String,
    pub small_epochs: u32,
    pub adapter_dir: PathBuf,
    pub freeze_policy: Option<FreezePolicy>,
}

impl Default for JobOptions {
    fn default() -> Self {
        JobOptions {
            base_model_ref: "base-model".into(),
            small_epochs: DEFAULT_SMALL_EPOCHS,
            adapter_dir: PathBuf::from("adapters"),
            freeze_policy: Some(FreezePolicy::AdaptersOnly),
        }
    }
}

fn job_id(stage: TrainingStage, template_id: Option<u8>, cfg: &TrainingConfig, prompts: &[u8], opts: &JobOptions) -> String {
    let mut material = serde_json::to_vec(cfg).expect("serializable config");
    material.extend_from_slice(opts.base_model_ref.as_bytes());
    material.extend_from_slice(prompts);
    let tag = template_id.map_or_else(|| "all".to_string(), |t| format!("t{t}"));
    format!("{stage}-{tag}-{}", &sha256_hex(&material)[..12])
}

/// Emits a job spec for one stage. The small-epoch stage sets
/// `epochs_override` to `opts.small_epochs`; everything else is identical.
/// The spec is checked against the published schema before it is returned.
pub fn build_training_job(
    cfg: &TrainingConfig,
    prompts: &Path,
    stage: TrainingStage,
    template_id: Option<u8>,
    opts: &JobOptions,
) -> Result<TrainingJobSpec, SelectionError> {
    cfg.validate()?;
    count_prompt_lines(prompts)?;
    let bytes = std::fs::read(prompts).map_err(io_err(prompts.display()))?;
    let id = job_id(stage, template_id, cfg, &bytes, opts);
    let spec = TrainingJobSpec {
        schema_version: JOB_SCHEMA_VERSION,
        output_adapter_ref: opts.adapter_dir.join(&id).display().to_string(),
        job_id: id,
        base_model_ref: opts.base_model_ref.clone(),
        config: cfg.clone(),
        prompt_set_ref: prompts.display().to_string(),
        template_id,
        stage,
        epochs_override: (stage == TrainingStage::SmallEpoch).then_some(opts.small_epochs),
        start_epoch: None,
        resume_adapter_ref: None,
        freeze_policy: opts.freeze_policy,
    };
    spec.validate()?;
    Ok(spec)
}

/// Mean F1 per variant over an evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanF1 {
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
    pub n: usize,
}

impl MeanF1 {
    pub fn of(scores: &[RecordScore]) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        let n = scores.len();
        let mean = |f: fn(&RecordScore) -> f64| scores.iter().map(f).sum::<f64>() / n as f64;
        Some(MeanF1 {
            r1: mean(|s| s.scores.r1.f1),
            r2: mean(|s| s.scores.r2.f1),
            rl: mean(|s| s.scores.rl.f1),
            n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKey {
    #[default]
    MeanRlF1,
    MeanR1F1,
    MeanOfThree,
}

impl SelectionKey {
    pub fn value(self, m: &MeanF1) -> f64 {
        match self {
            SelectionKey::MeanRlF1 => m.rl,
            SelectionKey::MeanR1F1 => m.r1,
            SelectionKey::MeanOfThree => (m.r1 + m.r2 + m.rl) / 3.0,
        }
    }
}

impl FromStr for SelectionKey {
    type Err = SelectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean_rl_f1" => Ok(SelectionKey::MeanRlF1),
            "mean_r1_f1" => Ok(SelectionKey::MeanR1F1),
            "mean_of_three" => Ok(SelectionKey::MeanOfThree),
            other => Err(SelectionError::UnknownKey(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSelectionResult {
    pub best_index: u8,
    pub key: SelectionKey,
    pub per_template_scores: BTreeMap<u8, MeanF1>,
    /// Best minus runner-up under `key`; absent with a single candidate.
    pub margin: Option<f64>,
}

/// Argmax under `key`; ties go to the lowest template id.
pub fn find_best_prompt(
    scores: &BTreeMap<u8, MeanF1>,
    key: SelectionKey,
) -> Result<PromptSelectionResult, SelectionError> {
    let mut best: Option<(u8, f64)> = None;
    for (&id, m) in scores {
        let v = key.value(m);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((id, v));
        }
    }
    let (best_index, best_value) = best.ok_or(SelectionError::NoCandidates)?;
    let margin = scores
        .iter()
        .filter(|(&id, _)| id != best_index)
        .map(|(_, m)| key.value(m))
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .map(|runner_up| best_value - runner_up);
    Ok(PromptSelectionResult {
        best_index,
        key,
        per_template_scores: scores.clone(),
        margin,
    })
}

/// Inputs of a small-epoch sweep.
pub struct SweepInputs<'a> {
    pub templates: &'a [PromptTemplate],
    /// Records used to build each template's training prompt set.
    pub train: &'a Corpus,
    /// Held-out records scored after each small-epoch job.
    pub eval: &'a Corpus,
    pub trainer: &'a dyn Trainer,
    pub training: &'a TrainingConfig,
    pub generation: &'a GenerationConfig,
    pub jobs: &'a JobOptions,
    pub work_dir: &'a Path,
    pub parallel: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scores: BTreeMap<u8, MeanF1>,
    pub adapters: BTreeMap<u8, String>,
    pub prompt_sets: BTreeMap<u8, PathBuf>,
    /// Templates whose job failed, with the reason.
    pub excluded: BTreeMap<u8, String>,
}

/// For each template: write its training prompt set, submit a small-epoch job,
/// generate on the evaluation prompts with the returned backend and score.
/// A failed job excludes its template; the sweep fails only if all jobs fail.
pub fn small_epoch_sweep(inp: &SweepInputs<'_>) -> Result<SweepReport, SelectionError> {
    let mut report = SweepReport::default();
    for t in inp.templates {
        let id = t.template_id;
        let (train_prompts, _) = synthesize_batch(t, inp.train, true);
        let path = inp.work_dir.join(format!("train_prompts_t{id}.jsonl"));
        let prov = Provenance::new("select", sha256_hex(&serde_json::to_vec(inp.training).expect("config")), None);
        provenance::write_jsonl(&path, Some(&prov), &train_prompts).map_err(io_err(path.display()))?;
        report.prompt_sets.insert(id, path.clone());

        let outcome = build_training_job(inp.training, &path, TrainingStage::SmallEpoch, Some(id), inp.jobs)
            .map_err(|e| e.to_string())
            .and_then(|spec| inp.trainer.submit(&spec).map_err(|e| e.to_string()))
            .and_then(|model| {
                let backend = model.backend.build().map_err(|e| e.to_string())?;
                let (eval_prompts, _) = synthesize_batch(t, inp.eval, false);
                let outcomes = infer_batch(backend.as_ref(), &eval_prompts, inp.generation, inp.parallel);
                let scores = score_pairs(&outcomes, inp.eval).map_err(|e| e.to_string())?;
                let mean = MeanF1::of(&scores).ok_or_else(|| "no evaluation records".to_string())?;
                Ok((model.adapter_ref, mean))
            });
        match outcome {
            Ok((adapter, mean)) => {
                report.adapters.insert(id, adapter);
                report.scores.insert(id, mean);
            }
            Err(reason) => {
                log::warn!("template {id} excluded from selection: {reason}");
                report.excluded.insert(id, reason);
            }
        }
    }
    if report.scores.is_empty() {
        return Err(SelectionError::AllJobsFailed(report.excluded));
    }
    Ok(report)
}

/// Continuation job for the winning template, resuming its small-epoch adapter
/// and training up to the full epoch count. Returns `None` (with a warning)
/// when the small-epoch stage already covered every epoch.
pub fn full_training_plan(
    result: &PromptSelectionResult,
    sweep: &SweepReport,
    cfg: &TrainingConfig,
    opts: &JobOptions,
) -> Result<Option<TrainingJobSpec>, SelectionError> {
    let id = result.best_index;
    let adapter = sweep.adapters.get(&id).ok_or(SelectionError::MissingAdapter(id))?;
    let prompts = sweep.prompt_sets.get(&id).ok_or(SelectionError::MissingAdapter(id))?;
    if opts.small_epochs >= cfg.epochs {
        log::warn!(
            "small-epoch stage already ran {} of {} epochs; no continuation needed",
            opts.small_epochs,
            cfg.epochs
        );
        return Ok(None);
    }
    let mut spec = build_training_job(cfg, prompts, TrainingStage::Full, Some(id), opts)?;
    spec.start_epoch = Some(opts.small_epochs);
    spec.resume_adapter_ref = Some(adapter.clone());
    spec.validate()?;
    Ok(Some(spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{BackendConfig, MockScript};
    use crate::prompt::default_templates;
    use proptest::prelude::*;

    fn write_prompts(dir: &Path) -> PathBuf {
        let p = dir.join("p.jsonl");
        std::fs::write(&p, "{\"_provenance\":{}}\n{\"template_id\":1}\n").unwrap();
        p
    }

    fn mean(rl: f64) -> MeanF1 {
        MeanF1 { r1: rl, r2: rl, rl, n: 1 }
    }

    #[test]
    fn default_job_carries_reference_hyperparameters() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_prompts(dir.path());
        let spec = build_training_job(&TrainingConfig::default(), &p, TrainingStage::Full, Some(1), &JobOptions::default()).unwrap();
        let c = &spec.config;
        assert_eq!((c.quantization_bits, c.lora_r, c.lora_alpha), (4, 64, 16));
        assert_eq!(c.learning_rate, 1.41e-5);
        assert_eq!((c.batch_size, c.grad_accum_steps, c.epochs, c.max_seq_len), (64, 16, 3, 512));
        assert_eq!(spec.epochs_override, None);
    }

    #[test]
    fn small_epoch_stage_only_sets_override() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_prompts(dir.path());
        let o = JobOptions::default();
        let full = build_training_job(&TrainingConfig::default(), &p, TrainingStage::Full, Some(2), &o).unwrap();
        let small = build_training_job(&TrainingConfig::default(), &p, TrainingStage::SmallEpoch, Some(2), &o).unwrap();
        assert_eq!(small.epochs_override, Some(1));
        assert_eq!(small.config, full.config);
        assert_eq!(small.prompt_set_ref, full.prompt_set_ref);
        assert_eq!(TrainingJobSpec::from_json(&small.to_json()).unwrap(), small);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_prompts(dir.path());
        let o = JobOptions::default();
        let bad = TrainingConfig { quantization_bits: 3, ..Default::default() };
        assert!(matches!(build_training_job(&bad, &p, TrainingStage::Full, None, &o), Err(SelectionError::InvalidConfig(_))));
        let empty = dir.path().join("e.jsonl");
        std::fs::write(&empty, "{\"_provenance\":{}}\n").unwrap();
        assert!(matches!(
            build_training_job(&TrainingConfig::default(), &empty, TrainingStage::Full, None, &o),
            Err(SelectionError::EmptyPromptSet(_))
        ));
        let greedy = JobOptions { small_epochs: 9, ..Default::default() };
        assert!(build_training_job(&TrainingConfig::default(), &p, TrainingStage::SmallEpoch, None, &greedy).is_err());
    }

    #[test]
    fn schema_catches_tampered_specs() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_prompts(dir.path());
        let spec = build_training_job(&TrainingConfig::default(), &p, TrainingStage::Full, Some(1), &JobOptions::default()).unwrap();
        let mut v = serde_json::to_value(&spec).unwrap();
        v["config"]["lora_r"] = serde_json::json!(0);
        v["stage"] = serde_json::json!("medium");
        assert_eq!(schema_check(&v, &job_spec_schema()).unwrap_err().len(), 2);
    }

    #[test]
    fn tie_goes_to_lowest_id() {
        let scores: BTreeMap<u8, MeanF1> = [(1, 0.30), (2, 0.45), (3, 0.45), (4, 0.10), (5, 0.20)]
            .into_iter()
            .map(|(k, v)| (k, mean(v)))
            .collect();
        let r = find_best_prompt(&scores, SelectionKey::MeanRlF1).unwrap();
        assert_eq!(r.best_index, 2);
        assert_eq!(r.margin, Some(0.0));
        let single: BTreeMap<u8, MeanF1> = [(4, mean(0.1))].into_iter().collect();
        let r = find_best_prompt(&single, SelectionKey::MeanOfThree).unwrap();
        assert_eq!((r.best_index, r.margin), (4, None));
        assert!(matches!(find_best_prompt(&BTreeMap::new(), SelectionKey::MeanRlF1), Err(SelectionError::NoCandidates)));
    }

    #[test]
    fn sweep_with_stub_trainer_and_continuation() {
        use crate::corpus::test_support::report;
        let dir = tempfile::tempdir().unwrap();
        let train = Corpus::new(vec![report("t1", 1, "右肺结节", "右肺结节")], "train");
        let eval = Corpus::new(vec![report("e1", 1, "肝脏囊肿", "肝囊肿"), report("e2", 1, "脑萎缩", "脑萎缩")], "eval");
        let mut backends = BTreeMap::new();
        backends.insert(1, BackendConfig::mock("t1", MockScript::Fixed { text: "肝".into() }));
        backends.insert(2, BackendConfig::mock("t2", MockScript::Echo));
        backends.insert(4, BackendConfig::mock("t4", MockScript::Null));
        let trainer = StubTrainer::new(backends);
        let templates = default_templates();
        let jobs = JobOptions { adapter_dir: dir.path().join("adapters"), ..Default::default() };
        let inputs = SweepInputs {
            templates: &templates,
            train: &train,
            eval: &eval,
            trainer: &trainer,
            training: &TrainingConfig::default(),
            generation: &GenerationConfig { max_retries: 0, ..Default::default() },
            jobs: &jobs,
            work_dir: dir.path(),
            parallel: 2,
        };
        let rep = small_epoch_sweep(&inputs).unwrap();
        assert_eq!(rep.scores.keys().copied().collect::<Vec<_>>(), vec![1, 2, 4]);
        assert_eq!(rep.excluded.keys().copied().collect::<Vec<_>>(), vec![3, 5]);
        assert_eq!(rep.scores[&4].rl, 0.0);
        let sel = find_best_prompt(&rep.scores, SelectionKey::MeanRlF1).unwrap();
        assert_eq!(sel.best_index, 2);
        let plan = full_training_plan(&sel, &rep, &TrainingConfig::default(), &jobs).unwrap().unwrap();
        assert_eq!(plan.start_epoch, Some(1));
        assert_eq!(plan.config.epochs, 3);
        assert_eq!(plan.resume_adapter_ref.as_deref(), Some(rep.adapters[&2].as_str()));
        assert_eq!(TrainingJobSpec::from_json(&plan.to_json()).unwrap(), plan);

        let same = JobOptions { small_epochs: 3, ..jobs.clone() };
        assert!(full_training_plan(&sel, &rep, &TrainingConfig::default(), &same).unwrap().is_none());
        let mut orphan = rep.clone();
        orphan.adapters.clear();
        assert!(matches!(
            full_training_plan(&sel, &orphan, &TrainingConfig::default(), &jobs),
            Err(SelectionError::MissingAdapter(2))
        ));
    }

    #[test]
    fn sweep_fails_when_every_job_fails() {
        use crate::corpus::test_support::report;
        let dir = tempfile::tempdir().unwrap();
        let c = Corpus::new(vec![report("a", 1, "x", "y")], "c");
        let templates = default_templates();
        let inputs = SweepInputs {
            templates: &templates,
            train: &c,
            eval: &c,
            trainer: &StubTrainer::default(),
            training: &TrainingConfig::default(),
            generation: &GenerationConfig::default(),
            jobs: &JobOptions::default(),
            work_dir: dir.path(),
            parallel: 1,
        };
        assert!(matches!(small_epoch_sweep(&inputs), Err(SelectionError::AllJobsFailed(m)) if m.len() == 5));
    }

    #[test]
    fn command_trainer_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_prompts(dir.path());
        let spec = build_training_job(&TrainingConfig::default(), &p, TrainingStage::SmallEpoch, Some(1), &JobOptions::default()).unwrap();
        let reply = r#"{"adapter_ref":"a/1","backend":{"backend_id":"tuned","kind":"mock","script":{"mode":"echo"}}}"#;
        let t = CommandTrainer {
            program: "sh".into(),
            args: vec!["-c".into(), format!("test -s \"$0\" && echo '{reply}'")],
            spec_dir: dir.path().to_path_buf(),
        };
        let m = t.submit(&spec).unwrap();
        assert_eq!(m.adapter_ref, "a/1");
        assert_eq!(m.backend.backend_id, "tuned");
        let failing = CommandTrainer { args: vec!["-c".into(), "exit 3".into()], ..t };
        assert!(matches!(failing.submit(&spec), Err(TrainerError::JobFailed { .. })));
    }

    proptest! {
        #[test]
        fn argmax_is_affine_invariant(
            raw in proptest::collection::btree_map(1u8..=5, 0u32..=100, 1..=5),
            a in 1u32..=20,
            b in -50i32..=50,
        ) {
            let scores: BTreeMap<u8, MeanF1> = raw.iter().map(|(&k, &v)| (k, mean(v as f64 / 100.0))).collect();
            let scaled: BTreeMap<u8, MeanF1> = raw
                .iter()
                .map(|(&k, &v)| (k, mean(a as f64 * 0.5 * (v as f64 / 100.0) + b as f64 / 10.0)))
                .collect();
            let x = find_best_prompt(&scores, SelectionKey::MeanRlF1).unwrap();
            let y = find_best_prompt(&scaled, SelectionKey::MeanRlF1).unwrap();
            prop_assert_eq!(x.best_index, y.best_index);
            // Brute-force: the winner is the smallest id holding the maximum.
            let max = raw.values().max().unwrap();
            let expect = raw.iter().find(|(_, v)| *v == max).map(|(k, _)| *k).unwrap();
            prop_assert_eq!(x.best_index, expect);
        }
    }
}
