//! Radiology report corpora: ingestion, cleaning, partitioning and statistics.

mod clean;
mod ingest;
mod split;
mod stats;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clean::{
    clean, delete_meaningless, remove_repeated_titles, remove_repeated_values,
    synthesize_multi_sheet, CleanOptions, CleanOutput, TitleRule, DEFAULT_TITLE_MIN_SUPPORT,
    DEFAULT_TITLE_THRESHOLD,
};
pub use ingest::{ingest, ingest_str, read_corpus_jsonl, write_corpus_jsonl, InputFormat, Ingested};
pub use split::{partition, split_train_eval, DEFAULT_TRAIN_RATIO};
pub use stats::{corpus_stats, CorpusStats};

/// Number of contributing institutions. Institution 1 is the in-house training source.
pub const INSTITUTION_COUNT: u8 = 6;
pub const IN_HOUSE_INSTITUTION: u8 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: no valid rows ({rejected} rejected)")]
    NoValidRows { path: String, rejected: usize },
    #[error("duplicate record_id {0:?}")]
    DuplicateRecordId(String),
    #[error("sheet {part} cannot be reconciled: {reason}")]
    IrreconcilableSchema { part: usize, reason: String },
    #[error("no institution-1 records; the training source would be empty")]
    EmptyTrainSource,
    #[error("corpus needs at least 2 records to split, got {0}")]
    TooSmallToSplit(usize),
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
    #[error("invalid lexicon: {0}")]
    InvalidLexicon(String),
    #[error("malformed corpus line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodySystem {
    Chest,
    Abdomen,
    MuscleSkeleton,
    Head,
    MaxillofacialNeck,
}

impl BodySystem {
    /// Column order used by every report table.
    pub const ALL: [BodySystem; 5] = [
        BodySystem::Chest,
        BodySystem::Abdomen,
        BodySystem::MuscleSkeleton,
        BodySystem::Head,
        BodySystem::MaxillofacialNeck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BodySystem::Chest => "chest",
            BodySystem::Abdomen => "abdomen",
            BodySystem::MuscleSkeleton => "muscle_skeleton",
            BodySystem::Head => "head",
            BodySystem::MaxillofacialNeck => "maxillofacial_neck",
        }
    }

    /// Human-readable column title.
    pub fn title(self) -> &'static str {
        match self {
            BodySystem::Chest => "Chest",
            BodySystem::Abdomen => "Abdomen",
            BodySystem::MuscleSkeleton => "Muscle-skeleton",
            BodySystem::Head => "Head",
            BodySystem::MaxillofacialNeck => "Maxillofacial & neck",
        }
    }
}

impl fmt::Display for BodySystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn fold_key(s: &str) -> String {
    s.trim()
        .chars()
        .filter(|c| !matches!(c, ' ' | '_' | '-' | '&' | '/'))
        .flat_map(char::to_lowercase)
        .collect()
}

impl FromStr for BodySystem {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match fold_key(s).as_str() {
            "chest" | "胸部" => Ok(BodySystem::Chest),
            "abdomen" | "abdominal" | "腹部" => Ok(BodySystem::Abdomen),
            "muscleskeleton" | "muscleskeletion" | "musculoskeletal" | "skeletalmuscle"
            | "骨肌" | "肌骨" => Ok(BodySystem::MuscleSkeleton),
            "head" | "头部" | "头颅" => Ok(BodySystem::Head),
            "maxillofacialneck" | "maxillofacialandneck" | "颌面颈部" => {
                Ok(BodySystem::MaxillofacialNeck)
            }
            _ => Err(format!("unknown body system {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "MRI")]
    Mri,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Ct => "CT",
            Modality::Mri => "MRI",
        }
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match fold_key(s).as_str() {
            "ct" => Ok(Modality::Ct),
            "mri" | "mr" | "磁共振" => Ok(Modality::Mri),
            _ => Err(format!("unknown modality {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match fold_key(s).as_str() {
            "female" | "f" | "女" => Ok(Sex::Female),
            "male" | "m" | "男" => Ok(Sex::Male),
            _ => Err(format!("unknown sex {s:?}")),
        }
    }
}

/// One clinical record. `finding` is the model input, `impression` the reference output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RadiologyReport {
    pub record_id: String,
    pub institution: u8,
    pub system: BodySystem,
    pub modality: Modality,
    pub age: u32,
    pub sex: Sex,
    pub finding: String,
    pub impression: String,
}

impl RadiologyReport {
    pub fn is_in_house(&self) -> bool {
        self.institution == IN_HOUSE_INSTITUTION
    }
}

/// A record that failed validation or was emptied by cleaning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub records: Vec<RadiologyReport>,
    pub provenance: String,
}

impl Corpus {
    pub fn new(records: Vec<RadiologyReport>, provenance: impl Into<String>) -> Self {
        Corpus {
            records,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, record_id: &str) -> Option<&RadiologyReport> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    /// Index by record id. Ids are unique within a validated corpus.
    pub fn index(&self) -> std::collections::HashMap<&str, &RadiologyReport> {
        self.records
            .iter()
            .map(|r| (r.record_id.as_str(), r))
            .collect()
    }

    pub fn ensure_unique_ids(&self) -> Result<(), CorpusError> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if !seen.insert(r.record_id.as_str()) {
                return Err(CorpusError::DuplicateRecordId(r.record_id.clone()));
            }
        }
        Ok(())
    }
}

/// Literal substrings to delete from report texts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordSet {
    entries: Vec<String>,
}

impl WordSet {
    /// Builds a lexicon, dropping blank entries and duplicates while keeping first-seen order.
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let entries = entries
            .into_iter()
            .map(Into::into)
            .filter(|e: &String| !e.is_empty())
            .filter(|e| seen.insert(e.clone()))
            .collect();
        WordSet { entries }
    }

    /// One entry per line; blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Self {
        WordSet::new(
            text.lines()
                .map(|l| l.trim_end_matches('\r'))
                .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
                .map(str::to_owned),
        )
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(WordSet::parse(&text))
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn report(id: &str, institution: u8, finding: &str, impression: &str) -> RadiologyReport {
        RadiologyReport {
            record_id: id.to_string(),
            institution,
            system: BodySystem::Chest,
            modality: Modality::Ct,
            age: 50,
            sex: Sex::Female,
            finding: finding.to_string(),
            impression: impression.to_string(),
        }
    }
}
