//! End-to-end run: ingest, clean, split, prompts, infer, score, aggregate and
//! report, driven by one declarative TOML file.
//!
//! Every artifact carries a provenance header and is hashed into
//! `manifest.json`. With mock backends the whole run is deterministic, so two
//! runs of the same configuration produce identical manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    clean, corpus_stats, ingest, partition, split_train_eval, write_corpus_jsonl, CleanOptions, Corpus, CorpusStats,
    InputFormat, TitleRule, WordSet, DEFAULT_TITLE_MIN_SUPPORT, DEFAULT_TITLE_THRESHOLD, DEFAULT_TRAIN_RATIO,
};
use crate::inference::{
    infer_batch, load_backend_configs, write_outcomes, Backend, GenerationConfig, GenerationOutcome,
};
use crate::prompt::{default_templates, load_templates, synthesize_batch, PromptTemplate};
use crate::provenance::{self, sha256_file, sha256_hex, Provenance, TOOL_NAME, TOOL_VERSION};
use crate::report::{utility_metrics, write_report_table, write_utility_table, Layout, ReportError, TableFormat, UtilityInfo};
use crate::rouge::{aggregate_scores, score_pairs, write_record_scores, Averaging, Grouping};
use crate::selection::TrainingConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    fn stage(stage: &'static str) -> impl Fn(String) -> PipelineError {
        move |message| PipelineError::Stage { stage, message }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: PathBuf,
    #[serde(default = "default_format")]
    pub format: InputFormat,
    /// Template file; the built-in set is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    pub lexicon: PathBuf,
    pub backends: PathBuf,
    pub outputs: PathBuf,
}

fn default_format() -> InputFormat {
    InputFormat::Jsonl
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub split: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanSection {
    pub title_threshold: f64,
    pub title_min_support: usize,
    pub regex: bool,
}

impl Default for CleanSection {
    fn default() -> Self {
        CleanSection {
            title_threshold: DEFAULT_TITLE_THRESHOLD,
            title_min_support: DEFAULT_TITLE_MIN_SUPPORT,
            regex: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub seeds: Seeds,
    pub train_ratio: f64,
    pub template_id: u8,
    /// Backend ids to run, in order; every configured backend when empty.
    pub backends: Vec<String>,
    pub parallel: usize,
    pub grouping: Grouping,
    pub averaging: Averaging,
    pub layouts: Vec<Layout>,
    pub formats: Vec<TableFormat>,
    pub clean: CleanSection,
    pub generation: GenerationConfig,
    pub training: TrainingConfig,
    /// Static per-backend facts for the utility table.
    pub utility: BTreeMap<String, UtilityInfo>,
    /// Directory relative paths resolve against; set by [`PipelineConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: PathsConfig {
                corpus: PathBuf::from("corpus.jsonl"),
                format: InputFormat::Jsonl,
                templates: None,
                lexicon: PathBuf::from("lexicon.txt"),
                backends: PathBuf::from("backends.json"),
                outputs: PathBuf::from("out"),
            },
            seeds: Seeds::default(),
            train_ratio: DEFAULT_TRAIN_RATIO,
            template_id: 1,
            backends: Vec::new(),
            parallel: 4,
            grouping: Grouping::Both,
            averaging: Averaging::Macro,
            layouts: Layout::ALL.to_vec(),
            formats: vec![TableFormat::Csv, TableFormat::Markdown],
            clean: CleanSection::default(),
            generation: GenerationConfig::default(),
            training: TrainingConfig::default(),
            utility: BTreeMap::new(),
            base_dir: PathBuf::new(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Validation(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    /// Reads a TOML file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.paths.outputs)
    }

    /// Hash of the effective configuration as serialized (paths as written).
    pub fn config_hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("serializable config").as_bytes())[..16].to_string()
    }

    /// Checks every referenced path and setting and loads the small inputs, so
    /// a bad configuration fails before any stage writes anything.
    pub fn validate(&self) -> Result<ValidatedRun, PipelineError> {
        let bad = |m: String| PipelineError::Validation(m);
        let mut required = vec![("corpus", &self.paths.corpus), ("lexicon", &self.paths.lexicon), ("backends", &self.paths.backends)];
        if let Some(t) = &self.paths.templates {
            required.push(("templates", t));
        }
        for (name, p) in required {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(bad(format!("{name} path {} does not exist", full.display())));
            }
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(bad(format!("train_ratio must lie strictly between 0 and 1, got {}", self.train_ratio)));
        }
        if !(0.0..=1.0).contains(&self.clean.title_threshold) {
            return Err(bad(format!("title_threshold must lie in [0, 1], got {}", self.clean.title_threshold)));
        }
        if self.parallel == 0 {
            return Err(bad("parallel must be at least 1".into()));
        }
        self.generation.validate().map_err(|e| bad(e.to_string()))?;
        self.training.validate().map_err(|e| bad(e.to_string()))?;

        let lexicon = WordSet::load(&self.resolve(&self.paths.lexicon)).map_err(|e| bad(e.to_string()))?;
        let templates = match &self.paths.templates {
            Some(p) => load_templates(&self.resolve(p)).map_err(|e| bad(e.to_string()))?,
            None => default_templates(),
        };
        let template = templates
            .into_iter()
            .find(|t| t.template_id == self.template_id)
            .ok_or_else(|| bad(format!("template {} is not defined", self.template_id)))?;

        let configs = load_backend_configs(&self.resolve(&self.paths.backends)).map_err(|e| bad(e.to_string()))?;
        let chosen: Vec<_> = if self.backends.is_empty() {
            configs
        } else {
            self.backends
                .iter()
                .map(|id| {
                    configs
                        .iter()
                        .find(|c| &c.backend_id == id)
                        .cloned()
                        .ok_or_else(|| bad(format!("backend {id:?} is not configured")))
                })
                .collect::<Result<_, _>>()?
        };
        if chosen.is_empty() {
            return Err(bad("no backends configured".into()));
        }
        let mut backends = Vec::with_capacity(chosen.len());
        for c in &chosen {
            if backends.iter().any(|b: &Arc<dyn Backend>| b.id() == c.backend_id) {
                return Err(bad(format!("backend {:?} listed twice", c.backend_id)));
            }
            backends.push(c.build().map_err(|e| bad(e.to_string()))?);
        }
        Ok(ValidatedRun {
            lexicon,
            template,
            backends,
        })
    }
}

/// Inputs loaded during validation.
pub struct ValidatedRun {
    pub lexicon: WordSet,
    pub template: PromptTemplate,
    pub backends: Vec<Arc<dyn Backend>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the output directory, with `/` separators.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub ingested: usize,
    pub ingest_rejects: usize,
    pub cleaned: usize,
    pub clean_rejects: usize,
    pub clean_passes: usize,
    pub train: usize,
    pub eval: usize,
    pub external: usize,
    pub test_prompts: usize,
    pub failed_generations: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    #[serde(rename = "_provenance")]
    pub provenance: Provenance,
    /// Effective configuration, flag overrides included.
    pub config: serde_json::Value,
    pub stages: Vec<StageRecord>,
    pub counts: RunCounts,
    pub stats: CorpusStats,
}

impl ArtifactManifest {
    pub fn read(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Hashes keyed by relative path.
    pub fn hashes(&self) -> BTreeMap<&str, &str> {
        self.stages
            .iter()
            .flat_map(|s| s.artifacts.iter().map(|a| (a.path.as_str(), a.sha256.as_str())))
            .collect()
    }
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    out: PathBuf,
    hash: String,
    stages: Vec<StageRecord>,
}

impl Run<'_> {
    fn prov(&self, stage: &str) -> Provenance {
        Provenance::new(stage, self.hash.clone(), Some(self.cfg.seeds.split))
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn record(&mut self, stage: &'static str, rels: &[String]) -> Result<(), PipelineError> {
        let mut artifacts = Vec::with_capacity(rels.len());
        for rel in rels {
            let p = self.path(rel);
            let sha = sha256_file(&p).map_err(|e| PipelineError::Stage {
                stage,
                message: format!("cannot hash {}: {e}", p.display()),
            })?;
            let bytes = std::fs::metadata(&p).map(|m| m.len()).unwrap_or(0);
            artifacts.push(ArtifactEntry {
                path: rel.clone(),
                sha256: sha,
                bytes,
            });
        }
        log::info!("stage {stage}: {} artifact(s)", artifacts.len());
        self.stages.push(StageRecord {
            stage: stage.to_string(),
            artifacts,
        });
        Ok(())
    }
}

fn io<'p>(stage: &'static str, path: &'p Path) -> impl Fn(std::io::Error) -> PipelineError + 'p {
    move |e| PipelineError::Stage {
        stage,
        message: format!("cannot write {}: {e}", path.display()),
    }
}

/// File-name-safe form of a backend id.
pub fn backend_file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Runs every stage in order and writes the manifest. Outputs of completed
/// stages stay on disk when a later stage fails.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<ArtifactManifest, PipelineError> {
    let plan = cfg.validate()?;
    let out = cfg.output_dir();
    std::fs::create_dir_all(&out)
        .map_err(|e| PipelineError::Validation(format!("cannot create {}: {e}", out.display())))?;
    let mut run = Run {
        cfg,
        out,
        hash: cfg.config_hash(),
        stages: Vec::new(),
    };

    // ingest
    let stage = "ingest";
    let ingested = ingest(&cfg.resolve(&cfg.paths.corpus), cfg.paths.format).map_err(|e| PipelineError::stage(stage)(e.to_string()))?;
    let (corpus_rel, rejects_rel) = ("01_ingest/corpus.jsonl".to_string(), "01_ingest/rejects.jsonl".to_string());
    let p = run.prov(stage);
    write_corpus_jsonl(&run.path(&corpus_rel), &ingested.corpus, Some(&p)).map_err(io(stage, &run.path(&corpus_rel)))?;
    provenance::write_jsonl(&run.path(&rejects_rel), Some(&p), &ingested.rejects).map_err(io(stage, &run.path(&rejects_rel)))?;
    run.record(stage, &[corpus_rel, rejects_rel])?;

    // clean
    let stage = "clean";
    let opts = CleanOptions {
        title: TitleRule {
            threshold: cfg.clean.title_threshold,
            min_support: cfg.clean.title_min_support,
        },
        regex: cfg.clean.regex,
    };
    let cleaned = clean(&ingested.corpus, &plan.lexicon, opts).map_err(|e| PipelineError::stage(stage)(e.to_string()))?;
    let stats = corpus_stats(&cleaned.corpus);
    let rels = ["02_clean/corpus.jsonl", "02_clean/rejects.jsonl", "02_clean/stats.json"].map(String::from);
    let p = run.prov(stage);
    write_corpus_jsonl(&run.path(&rels[0]), &cleaned.corpus, Some(&p)).map_err(io(stage, &run.path(&rels[0])))?;
    provenance::write_jsonl(&run.path(&rels[1]), Some(&p), &cleaned.rejects).map_err(io(stage, &run.path(&rels[1])))?;
    let stats_json = serde_json::json!({ "_provenance": p, "stats": stats });
    provenance::write_text(&run.path(&rels[2]), &format!("{}\n", serde_json::to_string_pretty(&stats_json).expect("json")))
        .map_err(io(stage, &run.path(&rels[2])))?;
    run.record(stage, &rels)?;

    // split
    let stage = "split";
    let (in_house, external) = partition(&cleaned.corpus).map_err(|e| PipelineError::stage(stage)(e.to_string()))?;
    let (train, eval) =
        split_train_eval(&in_house, cfg.train_ratio, cfg.seeds.split).map_err(|e| PipelineError::stage(stage)(e.to_string()))?;
    let rels = ["03_split/train.jsonl", "03_split/eval.jsonl", "03_split/external.jsonl"].map(String::from);
    let p = run.prov(stage);
    for (rel, c) in rels.iter().zip([&train, &eval, &external]) {
        write_corpus_jsonl(&run.path(rel), c, Some(&p)).map_err(io(stage, &run.path(rel)))?;
    }
    run.record(stage, &rels)?;
    let test = Corpus::new(
        eval.records.iter().chain(&external.records).cloned().collect(),
        "test",
    );

    // prompts
    let stage = "prompts";
    let (train_prompts, train_rejects) = synthesize_batch(&plan.template, &train, true);
    let (test_prompts, test_rejects) = synthesize_batch(&plan.template, &test, false);
    for r in train_rejects.iter().chain(&test_rejects) {
        log::warn!("prompt skipped for {:?}: {}", r.record_id, r.reason);
    }
    if test_prompts.is_empty() {
        return Err(PipelineError::stage(stage)("no test prompts".into()));
    }
    let rels = ["04_prompts/train.jsonl", "04_prompts/test.jsonl"].map(String::from);
    let p = run.prov(stage);
    provenance::write_jsonl(&run.path(&rels[0]), Some(&p), &train_prompts).map_err(io(stage, &run.path(&rels[0])))?;
    provenance::write_jsonl(&run.path(&rels[1]), Some(&p), &test_prompts).map_err(io(stage, &run.path(&rels[1])))?;
    run.record(stage, &rels)?;

    // infer
    let stage = "infer";
    let p = run.prov(stage);
    let mut outcomes: Vec<GenerationOutcome> = Vec::new();
    let mut failed = BTreeMap::new();
    let mut rels = Vec::new();
    for b in &plan.backends {
        let batch = infer_batch(b.as_ref(), &test_prompts, &cfg.generation, cfg.parallel);
        failed.insert(b.id().to_string(), batch.iter().filter(|o| !o.is_success()).count());
        let rel = format!("05_infer/outcomes_{}.jsonl", backend_file_stem(b.id()));
        write_outcomes(&run.path(&rel), &batch, Some(&p)).map_err(io(stage, &run.path(&rel)))?;
        rels.push(rel);
        outcomes.extend(batch);
    }
    run.record(stage, &rels)?;

    // score
    let stage = "score";
    let scores = score_pairs(&outcomes, &test).map_err(|e| PipelineError::stage(stage)(e.to_string()))?;
    let rel = "06_score/record_scores.jsonl".to_string();
    write_record_scores(&run.path(&rel), &scores, Some(&run.prov(stage))).map_err(io(stage, &run.path(&rel)))?;
    run.record(stage, &[rel])?;

    // aggregate
    let stage = "aggregate";
    let table = aggregate_scores(&scores, cfg.grouping, cfg.averaging).map_err(|e| PipelineError::stage(stage)(e.to_string()))?;
    let rels = ["07_aggregate/scores.csv", "07_aggregate/scores.json"].map(String::from);
    table
        .write(&run.path(&rels[0]), Some(&run.path(&rels[1])), Some(&run.prov(stage)))
        .map_err(|e| PipelineError::stage(stage)(e.to_string()))?;
    run.record(stage, &rels)?;

    // report
    let stage = "report";
    let p = run.prov(stage);
    let mut rels = Vec::new();
    for layout in &cfg.layouts {
        for format in &cfg.formats {
            let rel = format!("08_report/{}.{}", layout.as_str(), format.extension());
            match write_report_table(&run.path(&rel), &table, *layout, *format, Some(&p)) {
                Ok(()) => rels.push(rel),
                Err(ReportError::EmptyTable(l)) => log::warn!("no data for the {l} layout; table skipped"),
                Err(e) => return Err(PipelineError::stage(stage)(e.to_string())),
            }
        }
    }
    let utility = utility_metrics(&outcomes, &cfg.utility).map_err(|e| PipelineError::stage(stage)(e.to_string()))?;
    for format in &cfg.formats {
        let rel = format!("08_report/utility.{}", format.extension());
        write_utility_table(&run.path(&rel), &utility, *format, Some(&p))
            .map_err(|e| PipelineError::stage(stage)(e.to_string()))?;
        rels.push(rel);
    }
    run.record(stage, &rels)?;

    let manifest = ArtifactManifest {
        provenance: Provenance::new("manifest", run.hash.clone(), Some(cfg.seeds.split)),
        config: serde_json::to_value(cfg).expect("serializable config"),
        stages: run.stages,
        counts: RunCounts {
            ingested: ingested.corpus.len(),
            ingest_rejects: ingested.rejects.len(),
            cleaned: cleaned.corpus.len(),
            clean_rejects: cleaned.rejects.len(),
            clean_passes: cleaned.passes,
            train: train.len(),
            eval: eval.len(),
            external: external.len(),
            test_prompts: test_prompts.len(),
            failed_generations: failed,
        },
        stats,
    };
    let path = run.out.join(MANIFEST_FILE);
    provenance::write_text(&path, &format!("{}\n", serde_json::to_string_pretty(&manifest).expect("json")))
        .map_err(io("manifest", &path))?;
    log::info!("{TOOL_NAME} {TOOL_VERSION}: manifest written to {}", path.display());
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back = PipelineConfig::parse(&text, Path::new("")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "train_ratio = 0.8\nbogus = 1\n[paths]\ncorpus='a'\nlexicon='b'\nbackends='c'\noutputs='d'\n";
        assert!(matches!(PipelineConfig::parse(text, Path::new("")), Err(PipelineError::Validation(_))));
    }

    #[test]
    fn missing_lexicon_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c.jsonl"), "").unwrap();
        std::fs::write(dir.path().join("b.json"), "[]").unwrap();
        let mut cfg = PipelineConfig {
            base_dir: dir.path().to_path_buf(),
            ..PipelineConfig::default()
        };
        cfg.paths.corpus = "c.jsonl".into();
        cfg.paths.backends = "b.json".into();
        cfg.paths.lexicon = "missing.txt".into();
        let err = cfg.validate().err().unwrap();
        assert!(err.to_string().contains("lexicon"), "{err}");
        assert!(!dir.path().join("out").exists());
    }

    #[test]
    fn backend_ids_become_safe_file_names() {
        assert_eq!(backend_file_stem("GPT-3.5 Turbo/x"), "GPT-3.5_Turbo_x");
    }
}
