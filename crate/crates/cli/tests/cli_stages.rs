//! Drives the `radiogen` binary verb by verb.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use radiogen_core::rouge::ScoreTable;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_radiogen"))
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden").join(name)).unwrap()
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "radiogen {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fixture_copy() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(fixtures()).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
    }
    dir
}

fn table_map(path: &Path) -> BTreeMap<(String, String, String), f64> {
    let t = ScoreTable::from_csv(&std::fs::read_to_string(path).unwrap()).unwrap();
    t.rows
        .into_iter()
        .map(|r| ((r.backend_id, r.scope, r.variant.as_str().to_string()), r.f1))
        .collect()
}

#[test]
fn stage_verbs_compose_to_the_run_result() {
    let d = fixture_copy();
    let p = d.path();
    ok(&["run", "--config", "pipeline.toml"], p);

    ok(&["ingest", "--in", "corpus.jsonl", "--format", "jsonl", "--out", "m/ingested.jsonl"], p);
    ok(
        &["clean", "--in", "m/ingested.jsonl", "--lexicon", "lexicon.txt", "--title-threshold", "0.8", "--out", "m/clean.jsonl"],
        p,
    );
    ok(&["split", "--in", "m/clean.jsonl", "--ratio", "0.8", "--seed", "20231016", "--out-dir", "m/split"], p);
    ok(
        &["prompts", "--corpus", "m/split/eval.jsonl", "m/split/external.jsonl", "--template", "3", "--out", "m/test.jsonl"],
        p,
    );
    ok(&["infer", "--backend", "backends.json", "--prompts", "m/test.jsonl", "--parallel", "3", "--out", "m/outcomes.jsonl"], p);
    ok(
        &[
            "score", "--outcomes", "m/outcomes.jsonl", "--refs", "m/split/eval.jsonl", "m/split/external.jsonl",
            "--group-by", "both", "--out", "m/scores.csv",
        ],
        p,
    );

    let by_hand = table_map(&p.join("m/scores.csv"));
    let piped = table_map(&p.join("out/07_aggregate/scores.csv"));
    assert_eq!(by_hand.len(), piped.len());
    for (k, v) in &piped {
        assert!((by_hand[k] - v).abs() <= 1e-12, "{k:?}: {} vs {v}", by_hand[k]);
    }
}

#[test]
fn report_verb_reproduces_golden_tables() {
    let d = tempfile::tempdir().unwrap();
    let table: ScoreTable = serde_json::from_str(&golden("score_table.json")).unwrap();
    std::fs::write(d.path().join("scores.csv"), table.to_csv(None)).unwrap();
    ok(
        &["report", "--scores", "scores.csv", "--layout", "cross_institution", "--layout", "per_system", "--out-dir", "r"],
        d.path(),
    );
    for name in ["cross_institution.md", "cross_institution.csv", "per_system.md", "per_system.csv"] {
        let text = std::fs::read_to_string(d.path().join("r").join(name)).unwrap();
        let (header, body) = text.split_once('\n').unwrap();
        assert!(header.starts_with("<!--") || header.starts_with('#'), "{name}: {header}");
        assert_eq!(body, golden(name), "{name}");
    }
}

#[test]
fn exit_codes_separate_validation_from_stage_failures() {
    let d = fixture_copy();
    let p = d.path();
    // Usage error.
    assert_eq!(run(&["split", "--bogus"], p).status.code(), Some(1));
    // Missing lexicon in the pipeline config.
    std::fs::remove_file(p.join("lexicon.txt")).unwrap();
    assert_eq!(run(&["run", "--config", "pipeline.toml"], p).status.code(), Some(1));
    assert!(!p.join("out").exists());
    // No in-house records: the split stage itself fails.
    let external: String = std::fs::read_to_string(p.join("corpus.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.contains("\"institution\":1,"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(p.join("ext.jsonl"), external).unwrap();
    let out = run(&["split", "--in", "ext.jsonl", "--seed", "1", "--out-dir", "s"], p);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(run(&["--help"], p).status.code(), Some(0));
    assert_eq!(run(&["kernels", "selftest", "--cases", "50"], p).status.code(), Some(0));
}

#[test]
fn select_with_stub_trainer_picks_the_strongest_template() {
    let d = fixture_copy();
    let p = d.path();
    ok(&["clean", "--in", "corpus.jsonl", "--lexicon", "lexicon.txt", "--out", "clean.jsonl"], p);
    ok(&["split", "--in", "clean.jsonl", "--seed", "7", "--out-dir", "split"], p);
    ok(
        &[
            "select", "--trainer", "stub:stub_trainer.json", "--train", "split/train.jsonl", "--eval", "split/eval.jsonl",
            "--work-dir", "sweep", "--pipeline", "pipeline.toml", "--plan", "sweep/full_job.json",
        ],
        p,
    );
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("sweep/selection.json")).unwrap()).unwrap();
    assert_eq!(doc["selection"]["best_index"], 5);
    let plan: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("sweep/full_job.json")).unwrap()).unwrap();
    assert_eq!(plan["stage"], "full");
    assert_eq!(plan["start_epoch"], 1);
    assert_eq!(plan["template_id"], 5);
}

fn session(p: &Path, rater: &str, input: &str) -> Output {
    let mut child = bin()
        .args(["expert", "score", "--session", "journal.jsonl", "--items", "items.jsonl", "--rater", rater, "--level", "senior"])
        .current_dir(p)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

#[test]
fn expert_session_resumes_and_aggregates() {
    let d = fixture_copy();
    let p = d.path();
    let items = [("fx000", "右肺上叶磨玻璃结节"), ("fx031", "肝右叶囊肿")]
        .iter()
        .map(|(id, imp)| serde_json::json!({"record_id": id, "backend_id": "m", "impression": imp}).to_string() + "\n")
        .collect::<String>();
    std::fs::write(p.join("items.jsonl"), items).unwrap();
    let first = session(p, "r1", "60\n60\n60\n60\n60\n60\n60\nq\n");
    assert!(first.status.success());
    let second = session(p, "r1", "101\n80\n80\n80\n80\n80\n80\n80\n");
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));
    let journal = std::fs::read_to_string(p.join("journal.jsonl")).unwrap();
    assert_eq!(journal.lines().filter(|l| l.contains("\"rater_id\"")).count(), 2);
    ok(&["expert", "aggregate", "--journal", "journal.jsonl", "--corpus", "corpus.jsonl", "--out", "radar.csv"], p);
    let radar = std::fs::read_to_string(p.join("radar.csv")).unwrap();
    assert!(radar.lines().any(|l| l.starts_with("m,OG,all,")), "{radar}");
    assert!(radar.lines().any(|l| l.starts_with("m,IHG,all,60.0000")), "{radar}");
    assert!(radar.lines().any(|l| l.starts_with("m,OHG,all,80.0000")), "{radar}");
}
