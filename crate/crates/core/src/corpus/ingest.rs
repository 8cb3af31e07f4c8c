use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Corpus, CorpusError, RadiologyReport, Reject, INSTITUTION_COUNT};
use crate::provenance::{self, jsonl_payload_lines};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(format!("unsupported input format {other:?}")),
        }
    }
}

/// Result of ingestion: the valid records plus every row that failed validation.
#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub corpus: Corpus,
    pub rejects: Vec<Reject>,
}

type RawRow = HashMap<String, Value>;

pub fn ingest(path: &Path, format: InputFormat) -> Result<Ingested, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ingest_str(&text, format, &label).map_err(|e| match e {
        CorpusError::NoValidRows { rejected, .. } => CorpusError::NoValidRows {
            path: path.display().to_string(),
            rejected,
        },
        other => other,
    })
}

/// Ingests an in-memory document. `label` becomes the corpus provenance.
pub fn ingest_str(text: &str, format: InputFormat, label: &str) -> Result<Ingested, CorpusError> {
    let rows = match format {
        InputFormat::Jsonl => jsonl_rows(text),
        InputFormat::Csv => csv_rows(text)?,
    };

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for (line, row) in rows {
        let parsed = match row {
            Ok(r) => parse_row(&r).map_err(|reason| (text_field(&r, "record_id").ok(), reason)),
            Err(reason) => Err((None, reason)),
        };
        match parsed {
            Ok(rec) => records.push(rec),
            Err((record_id, reason)) => rejects.push(Reject {
                line: Some(line),
                record_id,
                reason,
            }),
        }
    }
    if records.is_empty() {
        return Err(CorpusError::NoValidRows {
            path: label.to_string(),
            rejected: rejects.len(),
        });
    }
    let corpus = Corpus::new(records, label);
    corpus.ensure_unique_ids()?;
    Ok(Ingested { corpus, rejects })
}

fn jsonl_rows(text: &str) -> Vec<(usize, Result<RawRow, String>)> {
    jsonl_payload_lines(text)
        .map(|(n, line)| {
            let row = match serde_json::from_str::<Value>(line) {
                Ok(Value::Object(map)) => Ok(map.into_iter().collect()),
                Ok(_) => Err("row is not a JSON object".to_string()),
                Err(e) => Err(format!("invalid JSON: {e}")),
            };
            (n, row)
        })
        .collect()
}

/// Data row number paired with the parsed row or its parse error.
type NumberedRow = (usize, Result<RawRow, String>);

fn csv_rows(text: &str) -> Result<Vec<NumberedRow>, CorpusError> {
    let body: String = text
        .lines()
        .filter(|l| !provenance::is_header_line(l))
        .collect::<Vec<_>>()
        .join("\n");
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(body.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CorpusError::Malformed {
            line: 1,
            reason: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| e.to_string()).map(|rec| {
            headers
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.clone(), Value::String(v.to_string())))
                .collect()
        });
        rows.push((line, row));
    }
    Ok(rows)
}

fn text_field(row: &RawRow, key: &str) -> Result<String, String> {
    match row.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(Value::Null) | None => Err(format!("missing field `{key}`")),
        Some(other) => Err(format!("field `{key}` has unexpected type: {other}")),
    }
}

fn non_empty_text(row: &RawRow, key: &str) -> Result<String, String> {
    let s = text_field(row, key)?;
    if s.trim().is_empty() {
        Err(format!("field `{key}` is empty"))
    } else {
        Ok(s)
    }
}

fn integer_field(row: &RawRow, key: &str) -> Result<i64, String> {
    match row.get(key) {
        Some(Value::Number(n)) => n
            .as_i64()
            .ok_or_else(|| format!("field `{key}` is not an integer: {n}")),
        Some(Value::String(s)) => s
            .trim()
            .parse()
            .map_err(|_| format!("field `{key}` is not an integer: {s:?}")),
        Some(Value::Null) | None => Err(format!("missing field `{key}`")),
        Some(other) => Err(format!("field `{key}` has unexpected type: {other}")),
    }
}

fn enum_field<T: FromStr<Err = String>>(row: &RawRow, key: &str) -> Result<T, String> {
    text_field(row, key)?.parse()
}

fn parse_row(row: &RawRow) -> Result<RadiologyReport, String> {
    let record_id = non_empty_text(row, "record_id")?.trim().to_string();
    let institution = integer_field(row, "institution")?;
    if !(1..=i64::from(INSTITUTION_COUNT)).contains(&institution) {
        return Err(format!("institution {institution} outside 1..={INSTITUTION_COUNT}"));
    }
    let age = integer_field(row, "age")?;
    let age = u32::try_from(age).map_err(|_| format!("age {age} is negative or too large"))?;
    Ok(RadiologyReport {
        institution: institution as u8,
        system: enum_field(row, "system")?,
        modality: enum_field(row, "modality")?,
        age,
        sex: enum_field(row, "sex")?,
        finding: non_empty_text(row, "finding")?,
        impression: non_empty_text(row, "impression")?,
        record_id,
    })
}

/// Reads a canonical JSONL corpus (as written by [`write_corpus_jsonl`]). Any invalid
/// row is an error here: canonical files have already been through ingestion.
pub fn read_corpus_jsonl(path: &Path) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let records: Vec<RadiologyReport> = provenance::parse_jsonl(&text)
        .map_err(|(line, reason)| CorpusError::Malformed { line, reason })?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let corpus = Corpus::new(records, label);
    corpus.ensure_unique_ids()?;
    Ok(corpus)
}

pub fn write_corpus_jsonl(
    path: &Path,
    corpus: &Corpus,
    prov: Option<&provenance::Provenance>,
) -> std::io::Result<()> {
    provenance::write_jsonl(path, prov, &corpus.records)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"record_id":"a1","institution":1,"system":"chest","modality":"CT","age":61,"sex":"male","finding":"右肺上叶结节","impression":"右肺结节"}
{"record_id":"a2","institution":2,"system":"abdomen","modality":"MRI","age":40,"sex":"female","finding":"肝脏形态正常","impression":"肝脏未见异常","extra":"ignored"}
{"record_id":"a3","institution":"3","system":"Head","modality":"ct","age":"7","sex":"F","finding":"脑实质未见异常","impression":"颅脑CT平扫未见异常"}
"#;

    #[test]
    fn well_formed_jsonl_ingests_every_row() {
        let out = ingest_str(GOOD, InputFormat::Jsonl, "t").unwrap();
        assert_eq!(out.corpus.len(), 3);
        assert!(out.rejects.is_empty());
        assert_eq!(out.corpus.records[2].institution, 3);
        assert_eq!(out.corpus.records[2].age, 7);
    }

    #[test]
    fn row_missing_impression_is_rejected_not_dropped() {
        let text = format!(
            "{GOOD}{}\n",
            r#"{"record_id":"a4","institution":1,"system":"chest","modality":"CT","age":1,"sex":"male","finding":"x"}"#
        );
        let out = ingest_str(&text, InputFormat::Jsonl, "t").unwrap();
        assert_eq!(out.corpus.len(), 3);
        assert_eq!(out.rejects.len(), 1);
        assert_eq!(out.rejects[0].line, Some(4));
        assert!(out.rejects[0].reason.contains("impression"));
    }

    #[test]
    fn out_of_range_institution_is_rejected() {
        let text = r#"{"record_id":"z","institution":7,"system":"chest","modality":"CT","age":1,"sex":"male","finding":"x","impression":"y"}
{"record_id":"ok","institution":6,"system":"chest","modality":"CT","age":1,"sex":"male","finding":"x","impression":"y"}"#;
        let out = ingest_str(text, InputFormat::Jsonl, "t").unwrap();
        assert_eq!(out.rejects.len(), 1);
        assert!(out.rejects[0].reason.contains("institution 7"));
    }

    #[test]
    fn duplicate_record_id_is_an_error() {
        let line = r#"{"record_id":"d","institution":1,"system":"chest","modality":"CT","age":1,"sex":"male","finding":"x","impression":"y"}"#;
        let text = format!("{line}\n{line}\n");
        assert!(matches!(
            ingest_str(&text, InputFormat::Jsonl, "t"),
            Err(CorpusError::DuplicateRecordId(id)) if id == "d"
        ));
    }

    #[test]
    fn zero_valid_rows_is_an_error() {
        assert!(matches!(
            ingest_str("{\"record_id\":\"x\"}\n", InputFormat::Jsonl, "t"),
            Err(CorpusError::NoValidRows { rejected: 1, .. })
        ));
    }

    #[test]
    fn csv_ingest_accepts_unknown_columns() {
        let text = "record_id,institution,system,modality,age,sex,finding,impression,ward\n\
                    c1,1,chest,CT,30,male,\"双肺纹理清晰,未见结节\",未见异常,7B\n";
        let out = ingest_str(text, InputFormat::Csv, "t").unwrap();
        assert_eq!(out.corpus.len(), 1);
        assert_eq!(out.corpus.records[0].finding, "双肺纹理清晰,未见结节");
    }

    #[test]
    fn unreadable_file_is_an_io_error() {
        let err = ingest(Path::new("/nonexistent/x.jsonl"), InputFormat::Jsonl).unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }
}
