//! Comparison tables (models by scope by R-1/R-2/R-L) and the practical-utility table.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BodySystem, INSTITUTION_COUNT, IN_HOUSE_INSTITUTION};
use crate::inference::GenerationOutcome;
use crate::provenance::{self, Provenance};
use crate::rouge::{RougeVariant, ScoreTable, Scope};

/// Placeholder for a cell with no data.
pub const MISSING_CELL: &str = "-";
/// Reference time per report for radiologists, in seconds.
pub const DOCTORS_TESTING_TIME: &str = "60-180";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("score table has no rows for the {0} layout")]
    EmptyTable(&'static str),
    #[error("no timing samples")]
    NoSamples,
    #[error("unknown {kind} {value:?}")]
    Unknown { kind: &'static str, value: String },
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Models by institution 1..6.
    CrossInstitution,
    /// Models by body system, in-house institution only.
    PerSystem,
    /// Models by body system, all institutions blended.
    Mixed,
}

impl Layout {
    pub const ALL: [Layout; 3] = [Layout::CrossInstitution, Layout::PerSystem, Layout::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Layout::CrossInstitution => "cross_institution",
            Layout::PerSystem => "per_system",
            Layout::Mixed => "mixed",
        }
    }

    fn columns(self) -> Vec<(String, Scope)> {
        match self {
            Layout::CrossInstitution => (1..=INSTITUTION_COUNT)
                .map(|i| (format!("Institution {i}"), Scope::Institution(i)))
                .collect(),
            Layout::PerSystem => BodySystem::ALL
                .iter()
                .map(|s| (s.title().to_string(), Scope::InstitutionSystem(IN_HOUSE_INSTITUTION, *s)))
                .collect(),
            Layout::Mixed => BodySystem::ALL
                .iter()
                .map(|s| (s.title().to_string(), Scope::System(*s)))
                .collect(),
        }
    }
}

impl FromStr for Layout {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Layout::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| ReportError::Unknown {
                kind: "layout",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Markdown => "md",
        }
    }
}

impl FromStr for TableFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(ReportError::Unknown {
                kind: "format",
                value: other.to_string(),
            }),
        }
    }
}

/// Fixed four-decimal rendering used in every table.
pub fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

struct Grid {
    header: Vec<String>,
    rows: Vec<(String, Vec<Option<String>>)>,
    best: Vec<Option<String>>,
}

fn build_grid(table: &ScoreTable, layout: Layout) -> Result<Grid, ReportError> {
    let backends = table.backends();
    let columns: Vec<(String, Scope)> = layout
        .columns()
        .into_iter()
        .filter(|(_, scope)| backends.iter().any(|b| table.get(b, scope, RougeVariant::Rl).is_some()))
        .collect();
    if columns.is_empty() {
        return Err(ReportError::EmptyTable(layout.as_str()));
    }
    let mut header = vec!["Model".to_string()];
    let mut keys = Vec::new();
    for (label, scope) in &columns {
        for v in RougeVariant::ALL {
            header.push(format!("{label} {}", v.title()));
            keys.push((*scope, v));
        }
    }
    let rows: Vec<(String, Vec<Option<String>>)> = backends
        .iter()
        .map(|b| {
            let cells = keys
                .iter()
                .map(|(scope, v)| table.get(b, scope, *v).map(|r| fmt4(r.f1)))
                .collect();
            (b.clone(), cells)
        })
        .collect();
    // Compare rendered values so that visually equal cells are marked alike.
    let best = (0..keys.len())
        .map(|k| {
            rows.iter()
                .filter_map(|(_, cells)| cells[k].as_deref())
                .max_by(|a, b| a.parse::<f64>().unwrap_or(0.0).total_cmp(&b.parse::<f64>().unwrap_or(0.0)))
                .map(str::to_owned)
        })
        .collect();
    Ok(Grid { header, rows, best })
}

/// Renders one comparison table. Cells hold mean F1 at four decimals; the best
/// value of every column is bold in markdown and suffixed with `*` in CSV;
/// missing cells show `-`. Columns without any data are omitted.
pub fn emit_report_tables(table: &ScoreTable, layout: Layout, format: TableFormat) -> Result<String, ReportError> {
    let grid = build_grid(table, layout)?;
    let mark = |k: usize, cell: &Option<String>| -> String {
        match cell {
            None => MISSING_CELL.to_string(),
            Some(v) if grid.best[k].as_ref() == Some(v) => match format {
                TableFormat::Markdown => format!("**{v}**"),
                TableFormat::Csv => format!("{v}*"),
            },
            Some(v) => v.clone(),
        }
    };
    let lines: Vec<Vec<String>> = grid
        .rows
        .iter()
        .map(|(name, cells)| {
            std::iter::once(name.clone())
                .chain(cells.iter().enumerate().map(|(k, c)| mark(k, c)))
                .collect()
        })
        .collect();
    Ok(match format {
        TableFormat::Markdown => markdown(&grid.header, &lines),
        TableFormat::Csv => csv_text(&grid.header, &lines),
    })
}

fn markdown(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = format!("| {} |\n", header.join(" | "));
    out.push('|');
    for (i, _) in header.iter().enumerate() {
        out.push_str(if i == 0 { " --- |" } else { " ---: |" });
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    out
}

fn csv_text(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

fn with_header(body: &str, format: TableFormat, prov: Option<&Provenance>) -> String {
    match prov {
        Some(p) => {
            let line = match format {
                TableFormat::Csv => p.csv_line(),
                TableFormat::Markdown => p.markdown_line(),
            };
            format!("{line}\n{body}")
        }
        None => body.to_string(),
    }
}

pub fn write_report_table(
    path: &Path,
    table: &ScoreTable,
    layout: Layout,
    format: TableFormat,
    prov: Option<&Provenance>,
) -> Result<(), ReportError> {
    let body = emit_report_tables(table, layout, format)?;
    provenance::write_text(path, &with_header(&body, format, prov)).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Static facts about a backend that timing journals cannot provide.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UtilityInfo {
    pub parameter_count: Option<String>,
    pub fine_tuning_hours: Option<f64>,
}

/// Timing summary for one backend. Testing time covers the whole guarded loop
/// per record, retries included; first-attempt time is reported separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityRecord {
    pub backend_id: String,
    pub parameter_count: Option<String>,
    pub fine_tuning_hours: Option<f64>,
    pub testing_time_mean_s: f64,
    /// Sample standard deviation; zero for a single sample.
    pub testing_time_std_s: f64,
    pub first_attempt_mean_s: f64,
    pub n: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean per-record latency per backend, in seconds, in order of first appearance.
pub fn utility_metrics(
    outcomes: &[GenerationOutcome],
    info: &BTreeMap<String, UtilityInfo>,
) -> Result<Vec<UtilityRecord>, ReportError> {
    let mut order: Vec<&str> = Vec::new();
    let mut samples: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for o in outcomes {
        if !order.contains(&o.backend_id.as_str()) {
            order.push(&o.backend_id);
        }
        let e = samples.entry(&o.backend_id).or_default();
        e.0.push(o.latency_ms / 1000.0);
        e.1.push(o.attempt_latency_ms.first().copied().unwrap_or(o.latency_ms) / 1000.0);
    }
    if order.is_empty() {
        return Err(ReportError::NoSamples);
    }
    Ok(order
        .into_iter()
        .map(|b| {
            let (total, first) = &samples[b];
            let (mean, std) = mean_std(total);
            let extra = info.get(b).cloned().unwrap_or_default();
            UtilityRecord {
                backend_id: b.to_string(),
                parameter_count: extra.parameter_count,
                fine_tuning_hours: extra.fine_tuning_hours,
                testing_time_mean_s: mean,
                testing_time_std_s: std,
                first_attempt_mean_s: mean_std(first).0,
                n: total.len(),
            }
        })
        .collect())
}

/// Utility table with a closing row for radiologists' reading time.
pub fn render_utility_table(records: &[UtilityRecord], format: TableFormat) -> String {
    let na = || "NA".to_string();
    let header: Vec<String> = ["Model", "Parameter Count", "Fine-tuning Time (h)", "Testing Time (s)", "Testing Time SD (s)", "First Attempt (s)", "n"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.backend_id.clone(),
                r.parameter_count.clone().unwrap_or_else(na),
                r.fine_tuning_hours.map_or_else(na, |h| format!("{h}")),
                fmt4(r.testing_time_mean_s),
                fmt4(r.testing_time_std_s),
                fmt4(r.first_attempt_mean_s),
                r.n.to_string(),
            ]
        })
        .collect();
    rows.push(vec![
        "Doctors".into(),
        na(),
        na(),
        DOCTORS_TESTING_TIME.into(),
        na(),
        na(),
        na(),
    ]);
    match format {
        TableFormat::Markdown => markdown(&header, &rows),
        TableFormat::Csv => csv_text(&header, &rows),
    }
}

pub fn write_utility_table(path: &Path, records: &[UtilityRecord], format: TableFormat, prov: Option<&Provenance>) -> Result<(), ReportError> {
    let body = render_utility_table(records, format);
    provenance::write_text(path, &with_header(&body, format, prov)).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}
