//! Rendered comparison tables must match the hand-written golden files.

use std::path::PathBuf;

use radiogen_core::report::{emit_report_tables, fmt4, Layout, ReportError, TableFormat};
use radiogen_core::rouge::ScoreTable;

fn golden(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn table() -> ScoreTable {
    serde_json::from_str(&golden("score_table.json")).unwrap()
}

#[test]
fn cross_institution_matches_golden() {
    for (format, file) in [(TableFormat::Markdown, "cross_institution.md"), (TableFormat::Csv, "cross_institution.csv")] {
        assert_eq!(emit_report_tables(&table(), Layout::CrossInstitution, format).unwrap(), golden(file), "{file}");
    }
}

#[test]
fn per_system_matches_golden() {
    for (format, file) in [(TableFormat::Markdown, "per_system.md"), (TableFormat::Csv, "per_system.csv")] {
        assert_eq!(emit_report_tables(&table(), Layout::PerSystem, format).unwrap(), golden(file), "{file}");
    }
}

#[test]
fn rendering_is_pure() {
    let t = table();
    let a = emit_report_tables(&t, Layout::CrossInstitution, TableFormat::Markdown).unwrap();
    let b = emit_report_tables(&t, Layout::CrossInstitution, TableFormat::Markdown).unwrap();
    assert_eq!(a, b);
}

#[test]
fn four_decimal_rendering() {
    assert_eq!(fmt4(0.46192), "0.4619");
    assert_eq!(fmt4(0.28724), "0.2872");
    assert_eq!(fmt4(0.4464), "0.4464");
    assert_eq!(fmt4(0.0), "0.0000");
}

#[test]
fn layout_without_data_is_an_error() {
    assert!(matches!(
        emit_report_tables(&table(), Layout::Mixed, TableFormat::Csv),
        Err(ReportError::EmptyTable("mixed"))
    ));
    assert!(emit_report_tables(&ScoreTable::default(), Layout::CrossInstitution, TableFormat::Csv).is_err());
}
