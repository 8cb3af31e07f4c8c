//! The committed fixture files must match the generator. Set
//! `RADIOGEN_BLESS=1` to rewrite them after an intentional change.

use std::path::PathBuf;

use radiogen_core::fixture::{generate_fixture, write_fixture_files, FIXTURE_SEED};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[test]
fn committed_fixture_matches_generator() {
    let f = generate_fixture(FIXTURE_SEED);
    if std::env::var_os("RADIOGEN_BLESS").is_some() {
        write_fixture_files(&f, &fixture_dir()).unwrap();
        return;
    }
    let fresh = tempfile::tempdir().unwrap();
    write_fixture_files(&f, fresh.path()).unwrap();
    for name in ["corpus.jsonl", "manifest.json", "lexicon.txt", "backends.json", "stub_trainer.json"] {
        let want = std::fs::read_to_string(fresh.path().join(name)).unwrap();
        let got = std::fs::read_to_string(fixture_dir().join(name))
            .unwrap_or_else(|e| panic!("{name}: {e}; run with RADIOGEN_BLESS=1"));
        assert_eq!(got, want, "{name} is stale; run with RADIOGEN_BLESS=1");
    }
}
