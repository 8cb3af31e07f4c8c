//! End-to-end runs over the bundled fixture with mock backends.

use std::path::{Path, PathBuf};

use radiogen_core::pipeline::{run_pipeline, ArtifactManifest, PipelineConfig, PipelineError, MANIFEST_FILE};

fn fixture_copy() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let src = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for entry in std::fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            std::fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
        }
    }
    dir
}

fn config(dir: &Path) -> PipelineConfig {
    PipelineConfig::load(&dir.join("pipeline.toml")).unwrap()
}

#[test]
fn two_runs_produce_identical_manifests() {
    let (a, b) = (fixture_copy(), fixture_copy());
    let ma = run_pipeline(&config(a.path())).unwrap();
    let mb = run_pipeline(&config(b.path())).unwrap();
    assert_eq!(ma.hashes(), mb.hashes());
    assert_eq!(ma, mb);
    let on_disk = ArtifactManifest::read(&a.path().join("out").join(MANIFEST_FILE)).unwrap();
    assert_eq!(on_disk, ma);
    let stages: Vec<&str> = ma.stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(stages, ["ingest", "clean", "split", "prompts", "infer", "score", "aggregate", "report"]);
}

#[test]
fn every_artifact_starts_with_a_provenance_header() {
    let dir = fixture_copy();
    let cfg = config(dir.path());
    let m = run_pipeline(&cfg).unwrap();
    let hash = cfg.config_hash();
    for (rel, _) in m.hashes() {
        let text = std::fs::read_to_string(dir.path().join("out").join(rel)).unwrap();
        let head = text.lines().next().unwrap_or_default();
        let body = if rel.ends_with(".json") { text.as_str() } else { head };
        assert!(body.contains(&hash), "{rel} lacks the config hash");
        assert!(body.contains("20231016"), "{rel} lacks the seed");
    }
}

#[test]
fn flag_overrides_change_the_config_hash() {
    let dir = fixture_copy();
    let cfg = config(dir.path());
    let mut other = cfg.clone();
    other.seeds.split += 1;
    assert_ne!(cfg.config_hash(), other.config_hash());
}

#[test]
fn missing_lexicon_is_rejected_before_any_stage() {
    let dir = fixture_copy();
    std::fs::remove_file(dir.path().join("lexicon.txt")).unwrap();
    let err = run_pipeline(&config(dir.path())).unwrap_err();
    assert!(matches!(err, PipelineError::Validation(ref m) if m.contains("lexicon")), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn stage_failure_names_the_stage_and_keeps_earlier_outputs() {
    let dir = fixture_copy();
    let path = dir.path().join("corpus.jsonl");
    let external: String = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("\"institution\":1,"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&path, external).unwrap();
    let err = run_pipeline(&config(dir.path())).unwrap_err();
    assert!(matches!(err, PipelineError::Stage { stage: "split", .. }), "{err}");
    assert!(dir.path().join("out/02_clean/corpus.jsonl").is_file());
    assert!(!dir.path().join("out").join(MANIFEST_FILE).exists());
}
