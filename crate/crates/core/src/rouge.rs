//! ROUGE-1/2/L over segmented token sequences, plus per-scope aggregation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BodySystem, Corpus};
use crate::inference::GenerationOutcome;
use crate::provenance::{self, Provenance};
use crate::segment::{segment_text, TokenSeq};

#[derive(Debug, Error)]
pub enum RougeError {
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
    #[error("outcome {0} has no reference record")]
    MissingReference(String),
    #[error("duplicate outcome for record {0}")]
    DuplicateOutcome(String),
    #[error("unknown grouping {0:?}; expected institution, system or both")]
    UnknownGrouping(String),
    #[error("nothing to aggregate")]
    Empty,
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RougeVariant {
    R1,
    R2,
    Rl,
}

impl RougeVariant {
    pub const ALL: [RougeVariant; 3] = [RougeVariant::R1, RougeVariant::R2, RougeVariant::Rl];

    pub fn as_str(self) -> &'static str {
        match self {
            RougeVariant::R1 => "r1",
            RougeVariant::R2 => "r2",
            RougeVariant::Rl => "rl",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            RougeVariant::R1 => "R-1",
            RougeVariant::R2 => "R-2",
            RougeVariant::Rl => "R-L",
        }
    }
}

impl fmt::Display for RougeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Recall, precision and F1 together with the raw counts they came from, so
/// corpus-level (micro) averages can be recomputed exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub variant: RougeVariant,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub matches: usize,
    pub reference_total: usize,
    pub candidate_total: usize,
}

pub fn f1_of(recall: f64, precision: f64) -> f64 {
    if recall + precision > 0.0 {
        2.0 * recall * precision / (recall + precision)
    } else {
        0.0
    }
}

impl RougeScore {
    pub fn from_counts(variant: RougeVariant, matches: usize, reference_total: usize, candidate_total: usize) -> Self {
        let (recall, precision) = if reference_total == 0 || candidate_total == 0 {
            (0.0, 0.0)
        } else {
            (
                matches as f64 / reference_total as f64,
                matches as f64 / candidate_total as f64,
            )
        };
        RougeScore {
            variant,
            recall,
            precision,
            f1: f1_of(recall, precision),
            matches,
            reference_total,
            candidate_total,
        }
    }

    pub fn zero(variant: RougeVariant) -> Self {
        Self::from_counts(variant, 0, 0, 0)
    }
}

/// All contiguous `n`-grams with multiplicity.
pub fn ngrams(t: &TokenSeq, n: usize) -> Result<HashMap<&[String], usize>, RougeError> {
    if n < 1 {
        return Err(RougeError::InvalidOrder);
    }
    let mut counts = HashMap::new();
    for w in t.tokens().windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    Ok(counts)
}

/// ROUGE-N against a single reference with clipped matching. The score is
/// tagged `R1` for unigrams and `R2` for every higher order.
pub fn rouge_n(candidate: &TokenSeq, reference: &TokenSeq, n: usize) -> Result<RougeScore, RougeError> {
    let cand = ngrams(candidate, n)?;
    let refs = ngrams(reference, n)?;
    let matches = refs
        .iter()
        .map(|(g, &rc)| cand.get(g).map_or(0, |&cc| cc.min(rc)))
        .sum();
    let variant = if n == 1 { RougeVariant::R1 } else { RougeVariant::R2 };
    Ok(RougeScore::from_counts(
        variant,
        matches,
        refs.values().sum(),
        cand.values().sum(),
    ))
}

/// Longest common subsequence length, two-row dynamic program.
pub fn lcs_length(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &TokenSeq, reference: &TokenSeq) -> RougeScore {
    let lcs = lcs_length(candidate.tokens(), reference.tokens());
    RougeScore::from_counts(RougeVariant::Rl, lcs, reference.len(), candidate.len())
}

/// The three scores for one segmented pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeTriple {
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
}

impl RougeTriple {
    pub fn compute(candidate: &TokenSeq, reference: &TokenSeq) -> Self {
        RougeTriple {
            r1: rouge_n(candidate, reference, 1).expect("order 1"),
            r2: rouge_n(candidate, reference, 2).expect("order 2"),
            rl: rouge_l(candidate, reference),
        }
    }

    pub fn of_text(candidate: &str, reference: &str) -> Self {
        Self::compute(&segment_text(candidate), &segment_text(reference))
    }

    pub fn zero() -> Self {
        RougeTriple {
            r1: RougeScore::zero(RougeVariant::R1),
            r2: RougeScore::zero(RougeVariant::R2),
            rl: RougeScore::zero(RougeVariant::Rl),
        }
    }

    pub fn get(&self, v: RougeVariant) -> &RougeScore {
        match v {
            RougeVariant::R1 => &self.r1,
            RougeVariant::R2 => &self.r2,
            RougeVariant::Rl => &self.rl,
        }
    }
}

/// Per-record scores with the metadata needed for grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub record_id: String,
    pub backend_id: String,
    pub institution: u8,
    pub system: BodySystem,
    pub scores: RougeTriple,
    /// Set when the generation failed; the scores are then all zero.
    pub failed: bool,
}

/// Scores every outcome against its reference impression. Failed generations
/// count as zero on every variant.
pub fn score_pairs(outcomes: &[GenerationOutcome], references: &Corpus) -> Result<Vec<RecordScore>, RougeError> {
    let index = references.index();
    let mut seen = std::collections::HashSet::new();
    outcomes
        .iter()
        .map(|o| {
            if !seen.insert((o.backend_id.as_str(), o.record_id.as_str())) {
                return Err(RougeError::DuplicateOutcome(o.record_id.clone()));
            }
            let r = index
                .get(o.record_id.as_str())
                .copied()
                .ok_or_else(|| RougeError::MissingReference(o.record_id.clone()))?;
            let (scores, failed) = if o.is_success() {
                (RougeTriple::of_text(&o.impression_text, &r.impression), false)
            } else {
                (RougeTriple::zero(), true)
            };
            Ok(RecordScore {
                record_id: o.record_id.clone(),
                backend_id: o.backend_id.clone(),
                institution: r.institution,
                system: r.system,
                scores,
                failed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Institution,
    System,
    Both,
}

impl FromStr for Grouping {
    type Err = RougeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "institution" => Ok(Grouping::Institution),
            "system" => Ok(Grouping::System),
            "both" => Ok(Grouping::Both),
            other => Err(RougeError::UnknownGrouping(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Mean of per-record scores.
    #[default]
    Macro,
    /// Scores recomputed from summed counts.
    Micro,
}

impl FromStr for Averaging {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "macro" => Ok(Averaging::Macro),
            "micro" => Ok(Averaging::Micro),
            other => Err(format!("unknown averaging {other:?}")),
        }
    }
}

/// Grouping key. Ordering puts `Overall` first, then institutions, then systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Overall,
    Institution(u8),
    System(BodySystem),
    InstitutionSystem(u8, BodySystem),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Overall => f.write_str("overall"),
            Scope::Institution(i) => write!(f, "institution_{i}"),
            Scope::System(s) => f.write_str(s.as_str()),
            Scope::InstitutionSystem(i, s) => write!(f, "institution_{i}/{}", s.as_str()),
        }
    }
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let inst = |t: &str| -> Result<u8, String> {
            t.strip_prefix("institution_")
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| format!("bad institution scope {t:?}"))
        };
        if s == "overall" {
            Ok(Scope::Overall)
        } else if let Some((i, sys)) = s.split_once('/') {
            Ok(Scope::InstitutionSystem(inst(i)?, sys.parse()?))
        } else if s.starts_with("institution_") {
            Ok(Scope::Institution(inst(s)?))
        } else {
            Ok(Scope::System(s.parse()?))
        }
    }
}

/// One aggregated row: a backend, a scope and a variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub backend_id: String,
    pub scope: String,
    pub variant: RougeVariant,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn get(&self, backend_id: &str, scope: &Scope, variant: RougeVariant) -> Option<&ScoreRow> {
        let scope = scope.to_string();
        self.rows
            .iter()
            .find(|r| r.backend_id == backend_id && r.scope == scope && r.variant == variant)
    }

    pub fn backends(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.backend_id) {
                out.push(r.backend_id.clone());
            }
        }
        out
    }

    pub fn to_csv(&self, prov: Option<&Provenance>) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory csv");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv");
        match prov {
            Some(p) => format!("{}\n{body}", p.csv_line()),
            None => body,
        }
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let body: Vec<&str> = text.lines().filter(|l| !provenance::is_header_line(l)).collect();
        let body = body.join("\n");
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let rows = r.deserialize().collect::<Result<Vec<ScoreRow>, _>>().map_err(|e| e.to_string())?;
        Ok(ScoreTable { rows })
    }

    pub fn to_json(&self, prov: Option<&Provenance>) -> String {
        let v = serde_json::json!({ "_provenance": prov, "rows": self.rows });
        serde_json::to_string_pretty(&v).expect("serializable table")
    }

    pub fn write(&self, csv_path: &Path, json_path: Option<&Path>, prov: Option<&Provenance>) -> Result<(), RougeError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| RougeError::Io { path, source }
        };
        provenance::write_text(csv_path, &self.to_csv(prov)).map_err(io(csv_path))?;
        if let Some(j) = json_path {
            provenance::write_text(j, &self.to_json(prov)).map_err(io(j))?;
        }
        Ok(())
    }
}

fn scopes_for(s: &RecordScore, grouping: Grouping) -> Vec<Scope> {
    let mut v = vec![Scope::Overall];
    match grouping {
        Grouping::Institution => v.push(Scope::Institution(s.institution)),
        Grouping::System => v.push(Scope::System(s.system)),
        Grouping::Both => {
            v.push(Scope::Institution(s.institution));
            v.push(Scope::System(s.system));
            v.push(Scope::InstitutionSystem(s.institution, s.system));
        }
    }
    v
}

fn mean_row(backend_id: &str, scope: Scope, variant: RougeVariant, scores: &[&RougeScore], avg: Averaging) -> ScoreRow {
    let n = scores.len();
    let (recall, precision, f1) = match avg {
        Averaging::Macro => {
            let m = |f: fn(&RougeScore) -> f64| scores.iter().map(|s| f(s)).sum::<f64>() / n as f64;
            (m(|s| s.recall), m(|s| s.precision), m(|s| s.f1))
        }
        Averaging::Micro => {
            let total = scores.iter().fold((0, 0, 0), |acc, s| {
                (acc.0 + s.matches, acc.1 + s.reference_total, acc.2 + s.candidate_total)
            });
            let s = RougeScore::from_counts(variant, total.0, total.1, total.2);
            (s.recall, s.precision, s.f1)
        }
    };
    ScoreRow {
        backend_id: backend_id.to_string(),
        scope: scope.to_string(),
        variant,
        recall,
        precision,
        f1,
        n,
    }
}

/// Means per backend, per scope, per variant. Every record contributes to the
/// overall row plus the rows its grouping selects; only non-empty groups are
/// emitted. Row order is backend (first appearance), scope, variant.
pub fn aggregate_scores(scores: &[RecordScore], grouping: Grouping, avg: Averaging) -> Result<ScoreTable, RougeError> {
    if scores.is_empty() {
        return Err(RougeError::Empty);
    }
    let mut backend_order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, BTreeMap<Scope, Vec<&RougeTriple>>> = HashMap::new();
    for s in scores {
        if !backend_order.contains(&s.backend_id.as_str()) {
            backend_order.push(&s.backend_id);
        }
        let by_scope = groups.entry(&s.backend_id).or_default();
        for scope in scopes_for(s, grouping) {
            by_scope.entry(scope).or_default().push(&s.scores);
        }
    }
    let mut rows = Vec::new();
    for b in backend_order {
        for (scope, triples) in &groups[b] {
            for v in RougeVariant::ALL {
                let per: Vec<&RougeScore> = triples.iter().map(|t| t.get(v)).collect();
                rows.push(mean_row(b, *scope, v, &per, avg));
            }
        }
    }
    Ok(ScoreTable { rows })
}

pub fn write_record_scores(path: &Path, scores: &[RecordScore], prov: Option<&Provenance>) -> std::io::Result<()> {
    provenance::write_jsonl(path, prov, scores)
}
