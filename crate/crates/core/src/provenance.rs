//! Provenance headers and JSONL helpers shared by every on-disk artifact.
//!
//! JSONL files carry the header as a first line `{"_provenance": {...}}`; CSV
//! files as a `# ` comment line; markdown as an HTML comment. Readers skip all three.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_NAME: &str = "radiogen";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
const JSONL_KEY: &str = "_provenance";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub stage: String,
}

impl Provenance {
    pub fn new(stage: impl Into<String>, config_hash: impl Into<String>, seed: Option<u64>) -> Self {
        Provenance {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            config_hash: config_hash.into(),
            seed,
            stage: stage.into(),
        }
    }

    pub fn jsonl_line(&self) -> String {
        serde_json::json!({ JSONL_KEY: self }).to_string()
    }

    fn inline(&self) -> String {
        let seed = self.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        format!(
            "{} {} stage={} config={} seed={}",
            self.tool, self.version, self.stage, self.config_hash, seed
        )
    }

    pub fn csv_line(&self) -> String {
        format!("# {}", self.inline())
    }

    pub fn markdown_line(&self) -> String {
        format!("<!-- {} -->", self.inline())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// True for lines that are headers rather than payload: JSONL provenance objects,
/// `#` comments and HTML comments.
pub fn is_header_line(line: &str) -> bool {
    let t = line.trim_start();
    if t.starts_with('#') || t.starts_with("<!--") {
        return true;
    }
    t.starts_with('{')
        && t.contains(JSONL_KEY)
        && serde_json::from_str::<serde_json::Value>(t)
            .map(|v| v.get(JSONL_KEY).is_some())
            .unwrap_or(false)
}

/// Renders items as JSONL, optionally preceded by a provenance line.
pub fn to_jsonl<T: Serialize>(provenance: Option<&Provenance>, items: &[T]) -> String {
    let mut out = String::new();
    if let Some(p) = provenance {
        out.push_str(&p.jsonl_line());
        out.push('\n');
    }
    for item in items {
        // Serialization of plain data structs cannot fail.
        out.push_str(&serde_json::to_string(item).expect("serializable record"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(
    path: &Path,
    provenance: Option<&Provenance>,
    items: &[T],
) -> io::Result<()> {
    write_text(path, &to_jsonl(provenance, items))
}

pub fn write_text(path: &Path, text: &str) -> io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    f.flush()
}

/// Payload lines of a JSONL document with their 1-based line numbers.
pub fn jsonl_payload_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !is_header_line(l))
}

/// Parses every payload line of a JSONL document, failing on the first bad line.
pub fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, (usize, String)> {
    jsonl_payload_lines(text)
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| (n, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_lines_are_skipped_by_readers() {
        let p = Provenance::new("ingest", "abc", Some(7));
        let text = to_jsonl(Some(&p), &[serde_json::json!({"a": 1})]);
        let lines: Vec<_> = jsonl_payload_lines(&text).collect();
        assert_eq!(lines, vec![(2, r#"{"a":1}"#)]);
        assert!(is_header_line(&p.csv_line()));
        assert!(is_header_line(&p.markdown_line()));
        assert!(!is_header_line(r#"{"record_id":"_provenance"}"#));
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
