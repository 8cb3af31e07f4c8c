//! Radiologist scoring on seven clinical metrics: card capture, rater averaging
//! and overall / in-house / out-of-house summaries.
//!
//! Every metric is scored 0..=100 with higher meaning better. For
//! `missed_diagnosis` and `overdiagnosis` that means higher = fewer errors, so
//! a larger radar area is better on every axis.

mod session;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use session::{import_tsv, read_journal, score_session, ScoringItem, SessionOutcome, QUESTIONNAIRE_HEADER};

use crate::corpus::{BodySystem, Corpus, IN_HOUSE_INSTITUTION};
use crate::provenance::Provenance;

pub const MAX_SCORE: u8 = 100;

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("score {0} is outside 0..=100")]
    OutOfRange(i64),
    #[error("card {record_id}/{backend_id} from {rater_id}: {reason}")]
    InvalidCard {
        rater_id: String,
        record_id: String,
        backend_id: String,
        reason: String,
    },
    #[error("rater {rater_id} scored {backend_id}/{record_id} more than once")]
    DuplicateCard {
        rater_id: String,
        backend_id: String,
        record_id: String,
    },
    #[error("no cards to aggregate")]
    Empty,
    #[error("record {0} is not in the reference corpus")]
    UnknownRecord(String),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("unknown {kind} {value:?}")]
    Unknown { kind: &'static str, value: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClinicalMetric {
    Understandability,
    Coherence,
    Relevance,
    Conciseness,
    ClinicalUtility,
    MissedDiagnosis,
    Overdiagnosis,
}

impl ClinicalMetric {
    pub const ALL: [ClinicalMetric; 7] = [
        ClinicalMetric::Understandability,
        ClinicalMetric::Coherence,
        ClinicalMetric::Relevance,
        ClinicalMetric::Conciseness,
        ClinicalMetric::ClinicalUtility,
        ClinicalMetric::MissedDiagnosis,
        ClinicalMetric::Overdiagnosis,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClinicalMetric::Understandability => "understandability",
            ClinicalMetric::Coherence => "coherence",
            ClinicalMetric::Relevance => "relevance",
            ClinicalMetric::Conciseness => "conciseness",
            ClinicalMetric::ClinicalUtility => "clinical_utility",
            ClinicalMetric::MissedDiagnosis => "missed_diagnosis",
            ClinicalMetric::Overdiagnosis => "overdiagnosis",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ClinicalMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaterLevel {
    Junior,
    Intermediate,
    Senior,
}

impl FromStr for RaterLevel {
    type Err = ExpertError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "junior" => Ok(RaterLevel::Junior),
            "intermediate" => Ok(RaterLevel::Intermediate),
            "senior" => Ok(RaterLevel::Senior),
            other => Err(ExpertError::Unknown {
                kind: "rater level",
                value: other.to_string(),
            }),
        }
    }
}

/// Seven scores in [`ClinicalMetric::ALL`] order; serialized as named fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetricScores {
    pub understandability: u8,
    pub coherence: u8,
    pub relevance: u8,
    pub conciseness: u8,
    pub clinical_utility: u8,
    pub missed_diagnosis: u8,
    pub overdiagnosis: u8,
}

impl MetricScores {
    pub fn from_array(a: [u8; 7]) -> Self {
        MetricScores {
            understandability: a[0],
            coherence: a[1],
            relevance: a[2],
            conciseness: a[3],
            clinical_utility: a[4],
            missed_diagnosis: a[5],
            overdiagnosis: a[6],
        }
    }

    pub fn to_array(self) -> [u8; 7] {
        [
            self.understandability,
            self.coherence,
            self.relevance,
            self.conciseness,
            self.clinical_utility,
            self.missed_diagnosis,
            self.overdiagnosis,
        ]
    }

    pub fn get(&self, m: ClinicalMetric) -> u8 {
        self.to_array()[m.index()]
    }
}

/// One rater's scores for one generated impression.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExpertScoreCard {
    pub rater_id: String,
    pub rater_level: RaterLevel,
    pub record_id: String,
    pub backend_id: String,
    #[serde(flatten)]
    pub scores: MetricScores,
}

impl ExpertScoreCard {
    pub fn validate(&self) -> Result<(), ExpertError> {
        if let Some(m) = ClinicalMetric::ALL.iter().find(|m| self.scores.get(**m) > MAX_SCORE) {
            return Err(ExpertError::InvalidCard {
                rater_id: self.rater_id.clone(),
                record_id: self.record_id.clone(),
                backend_id: self.backend_id.clone(),
                reason: format!("{m} = {} exceeds {MAX_SCORE}", self.scores.get(*m)),
            });
        }
        Ok(())
    }
}

/// Band 1..=5 of a 0..=100 score; 100 belongs to band 5.
pub fn quintile_of(score: i64) -> Result<u8, ExpertError> {
    if !(0..=i64::from(MAX_SCORE)).contains(&score) {
        return Err(ExpertError::OutOfRange(score));
    }
    Ok((score / 20 + 1).min(5) as u8)
}

/// Band of a mean score, using the same 20-point boundaries.
pub fn band_of_mean(mean: f64) -> u8 {
    ((mean / 20.0).floor() as i64 + 1).clamp(1, 5) as u8
}

/// Per (backend, record) means across raters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMean {
    pub backend_id: String,
    pub record_id: String,
    pub means: [f64; 7],
    pub raters: BTreeSet<String>,
    pub by_level: BTreeMap<RaterLevel, [f64; 7]>,
}

fn mean_of(cards: &[&ExpertScoreCard]) -> [f64; 7] {
    let mut sum = [0.0; 7];
    for c in cards {
        for (s, v) in sum.iter_mut().zip(c.scores.to_array()) {
            *s += f64::from(v);
        }
    }
    sum.map(|s| s / cards.len() as f64)
}

/// Averages every metric across raters for each (backend, record), keeping a
/// breakdown by rater level. Output is sorted by backend then record.
pub fn average_raters(cards: &[ExpertScoreCard]) -> Result<Vec<RecordMean>, ExpertError> {
    if cards.is_empty() {
        return Err(ExpertError::Empty);
    }
    let mut groups: BTreeMap<(&str, &str), Vec<&ExpertScoreCard>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for c in cards {
        c.validate()?;
        if !seen.insert((&c.rater_id, &c.backend_id, &c.record_id)) {
            return Err(ExpertError::DuplicateCard {
                rater_id: c.rater_id.clone(),
                backend_id: c.backend_id.clone(),
                record_id: c.record_id.clone(),
            });
        }
        groups.entry((&c.backend_id, &c.record_id)).or_default().push(c);
    }
    Ok(groups
        .into_iter()
        .map(|((backend_id, record_id), group)| {
            let mut levels: BTreeMap<RaterLevel, Vec<&ExpertScoreCard>> = BTreeMap::new();
            for c in &group {
                levels.entry(c.rater_level).or_default().push(c);
            }
            RecordMean {
                backend_id: backend_id.to_string(),
                record_id: record_id.to_string(),
                means: mean_of(&group),
                raters: group.iter().map(|c| c.rater_id.clone()).collect(),
                by_level: levels.into_iter().map(|(l, cs)| (l, mean_of(&cs))).collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvalScope {
    /// Every test record.
    #[serde(rename = "OG")]
    Overall,
    /// Records from the in-house institution.
    #[serde(rename = "IHG")]
    InHouse,
    /// Records from the external institutions.
    #[serde(rename = "OHG")]
    OutOfHouse,
}

impl EvalScope {
    pub const ALL: [EvalScope; 3] = [EvalScope::Overall, EvalScope::InHouse, EvalScope::OutOfHouse];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalScope::Overall => "OG",
            EvalScope::InHouse => "IHG",
            EvalScope::OutOfHouse => "OHG",
        }
    }

    pub fn contains(self, institution: u8) -> bool {
        match self {
            EvalScope::Overall => true,
            EvalScope::InHouse => institution == IN_HOUSE_INSTITUTION,
            EvalScope::OutOfHouse => institution != IN_HOUSE_INSTITUTION,
        }
    }
}

impl FromStr for EvalScope {
    type Err = ExpertError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "og" => Ok(EvalScope::Overall),
            "ihg" => Ok(EvalScope::InHouse),
            "ohg" => Ok(EvalScope::OutOfHouse),
            other => Err(ExpertError::Unknown {
                kind: "scope",
                value: other.to_string(),
            }),
        }
    }
}

impl fmt::Display for EvalScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-metric means for one backend within a scope, either across all systems
/// (`system == None`) or for one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalAggregate {
    pub backend_id: String,
    pub scope: EvalScope,
    pub system: Option<BodySystem>,
    pub means: [f64; 7],
    pub bands: [u8; 7],
    pub n_raters: usize,
    pub n_records: usize,
}

/// Records of `means` falling in `scope`, in input order.
pub fn scope_records<'a>(means: &'a [RecordMean], scope: EvalScope, corpus: &Corpus) -> Result<Vec<(&'a RecordMean, BodySystem)>, ExpertError> {
    let index = corpus.index();
    let mut out = Vec::new();
    for m in means {
        let r = index
            .get(m.record_id.as_str())
            .ok_or_else(|| ExpertError::UnknownRecord(m.record_id.clone()))?;
        if scope.contains(r.institution) {
            out.push((m, r.system));
        }
    }
    Ok(out)
}

/// Means per backend for `scope`: one all-systems row followed by one row per
/// system present, systems in their canonical order. An empty scope yields no
/// rows and a warning.
pub fn scope_aggregate(means: &[RecordMean], scope: EvalScope, corpus: &Corpus) -> Result<Vec<ClinicalAggregate>, ExpertError> {
    let members = scope_records(means, scope, corpus)?;
    if members.is_empty() {
        log::warn!("scope {scope} has no scored records; skipped");
        return Ok(Vec::new());
    }
    let mut backends: Vec<&str> = Vec::new();
    for (m, _) in &members {
        if !backends.contains(&m.backend_id.as_str()) {
            backends.push(&m.backend_id);
        }
    }
    let build = |backend: &str, system: Option<BodySystem>| -> Option<ClinicalAggregate> {
        let rows: Vec<&RecordMean> = members
            .iter()
            .filter(|(m, s)| m.backend_id == backend && system.is_none_or(|x| x == *s))
            .map(|(m, _)| *m)
            .collect();
        if rows.is_empty() {
            return None;
        }
        let mut sum = [0.0; 7];
        for r in &rows {
            for (s, v) in sum.iter_mut().zip(r.means) {
                *s += v;
            }
        }
        let means = sum.map(|s| s / rows.len() as f64);
        let raters: BTreeSet<&String> = rows.iter().flat_map(|r| &r.raters).collect();
        Some(ClinicalAggregate {
            backend_id: backend.to_string(),
            scope,
            system,
            means,
            bands: means.map(band_of_mean),
            n_raters: raters.len(),
            n_records: rows.len(),
        })
    };
    let mut out = Vec::new();
    for b in backends {
        out.extend(build(b, None));
        for s in BodySystem::ALL {
            out.extend(build(b, Some(s)));
        }
    }
    Ok(out)
}

/// Radar-plot data: one row per aggregate with the seven means in metric order.
pub fn radar_csv(aggregates: &[ClinicalAggregate], prov: Option<&Provenance>) -> String {
    let mut out = String::new();
    if let Some(p) = prov {
        out.push_str(&p.csv_line());
        out.push('\n');
    }
    out.push_str("backend_id,scope,system");
    for m in ClinicalMetric::ALL {
        out.push(',');
        out.push_str(m.as_str());
    }
    out.push_str(",n_raters,n_records\n");
    for a in aggregates {
        out.push_str(&format!(
            "{},{},{}",
            a.backend_id,
            a.scope,
            a.system.map_or("all", |s| s.as_str())
        ));
        for v in a.means {
            out.push_str(&format!(",{v:.4}"));
        }
        out.push_str(&format!(",{},{}\n", a.n_raters, a.n_records));
    }
    out
}

pub fn write_radar_csv(path: &Path, aggregates: &[ClinicalAggregate], prov: Option<&Provenance>) -> Result<(), ExpertError> {
    crate::provenance::write_text(path, &radar_csv(aggregates, prov)).map_err(|source| ExpertError::Io {
        context: path.display().to_string(),
        source,
    })
}
