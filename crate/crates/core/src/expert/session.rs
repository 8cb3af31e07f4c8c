//! Terminal scoring sessions backed by an append-only JSONL journal, and TSV import.

use std::collections::{BTreeSet, HashMap};
use std::fs::OpenOptions;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClinicalMetric, ExpertError, ExpertScoreCard, MetricScores, RaterLevel, MAX_SCORE};
use crate::provenance::{self, Provenance};

pub const QUESTIONNAIRE_HEADER: &str = "\
Score each generated impression from 0 to 100 on seven metrics; higher is always better.
For missed_diagnosis and overdiagnosis a HIGH score means FEW such errors.
Bands: 0-19 very poor, 20-39 poor, 40-59 fair, 60-79 good, 80-100 excellent.
Enter q to stop; finished cards are kept and the session resumes where it stopped.";

/// One impression to be scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringItem {
    pub record_id: String,
    pub backend_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finding: Option<String>,
    pub impression: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionOutcome {
    /// Every card of this rater in the journal, including earlier sessions.
    pub cards: Vec<ExpertScoreCard>,
    /// Cards added during this session.
    pub added: usize,
    /// False when input ended or the rater quit before the last item.
    pub complete: bool,
}

fn io_err(context: &Path) -> impl FnOnce(std::io::Error) -> ExpertError + '_ {
    move |source| ExpertError::Io {
        context: context.display().to_string(),
        source,
    }
}

/// Reads a journal; a missing file is an empty journal.
pub fn read_journal(path: &Path) -> Result<Vec<ExpertScoreCard>, ExpertError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let cards: Vec<ExpertScoreCard> =
        provenance::parse_jsonl(&text).map_err(|(line, reason)| ExpertError::Malformed { line, reason })?;
    for c in &cards {
        c.validate()?;
    }
    Ok(cards)
}

fn append_card(path: &Path, card: &ExpertScoreCard) -> Result<(), ExpertError> {
    let fresh = !path.exists();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    if fresh {
        writeln!(f, "{}", Provenance::new("expert", "journal", None).jsonl_line()).map_err(io_err(path))?;
    }
    writeln!(f, "{}", serde_json::to_string(card).expect("serializable card")).map_err(io_err(path))?;
    f.sync_data().map_err(io_err(path))
}

enum Entry {
    Score(u8),
    Quit,
}

fn ask<R: BufRead, W: Write>(metric: ClinicalMetric, input: &mut R, out: &mut W) -> std::io::Result<Entry> {
    loop {
        write!(out, "  {metric} (0-{MAX_SCORE}): ")?;
        out.flush()?;
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            return Ok(Entry::Quit);
        }
        let t = line.trim();
        if t.eq_ignore_ascii_case("q") {
            return Ok(Entry::Quit);
        }
        match t.parse::<i64>() {
            Ok(v) if (0..=i64::from(MAX_SCORE)).contains(&v) => return Ok(Entry::Score(v as u8)),
            _ => writeln!(out, "  please enter a whole number from 0 to {MAX_SCORE}")?,
        }
    }
}

/// Interactive scoring. Items the rater already has in the journal are skipped,
/// each completed card is appended and synced before the next item is shown,
/// and out-of-range entries are re-prompted without being stored.
pub fn score_session<R: BufRead, W: Write>(
    items: &[ScoringItem],
    rater_id: &str,
    level: RaterLevel,
    journal: &Path,
    input: &mut R,
    out: &mut W,
) -> Result<SessionOutcome, ExpertError> {
    let term = |source| ExpertError::Io {
        context: "terminal".into(),
        source,
    };
    let mut cards: Vec<ExpertScoreCard> = read_journal(journal)?
        .into_iter()
        .filter(|c| c.rater_id == rater_id)
        .collect();
    let done: BTreeSet<(String, String)> = cards
        .iter()
        .map(|c| (c.backend_id.clone(), c.record_id.clone()))
        .collect();
    let pending: Vec<&ScoringItem> = items
        .iter()
        .filter(|i| !done.contains(&(i.backend_id.clone(), i.record_id.clone())))
        .collect();

    writeln!(out, "{QUESTIONNAIRE_HEADER}").map_err(term)?;
    writeln!(out, "{} of {} items remaining for {rater_id}", pending.len(), items.len()).map_err(term)?;
    let mut added = 0;
    for (k, item) in pending.iter().enumerate() {
        writeln!(out, "\n[{}/{}] record {} from {}", k + 1, pending.len(), item.record_id, item.backend_id).map_err(term)?;
        if let Some(f) = &item.finding {
            writeln!(out, "Finding: {f}").map_err(term)?;
        }
        writeln!(out, "Impression: {}", item.impression).map_err(term)?;
        let mut scores = [0u8; 7];
        for m in ClinicalMetric::ALL {
            match ask(m, input, out).map_err(term)? {
                Entry::Score(v) => scores[m.index()] = v,
                Entry::Quit => {
                    writeln!(out, "\nsession stopped; {added} card(s) saved").map_err(term)?;
                    return Ok(SessionOutcome { cards, added, complete: false });
                }
            }
        }
        let card = ExpertScoreCard {
            rater_id: rater_id.to_string(),
            rater_level: level,
            record_id: item.record_id.clone(),
            backend_id: item.backend_id.clone(),
            scores: MetricScores::from_array(scores),
        };
        append_card(journal, &card)?;
        cards.push(card);
        added += 1;
    }
    Ok(SessionOutcome { cards, added, complete: true })
}

/// Parses a tab-separated file with a header naming `rater_id`, `rater_level`,
/// `record_id`, `backend_id` and the seven metric columns, in any order.
pub fn import_tsv(text: &str) -> Result<Vec<ExpertScoreCard>, ExpertError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !provenance::is_header_line(l));
    let Some((_, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let cols: HashMap<&str, usize> = header.split('\t').map(str::trim).enumerate().map(|(i, h)| (h, i)).collect();
    let mut required = vec!["rater_id", "rater_level", "record_id", "backend_id"];
    required.extend(ClinicalMetric::ALL.iter().map(|m| m.as_str()));
    if let Some(missing) = required.iter().find(|c| !cols.contains_key(**c)) {
        return Err(ExpertError::Malformed {
            line: 1,
            reason: format!("header lacks column {missing:?}"),
        });
    }
    lines
        .map(|(line, l)| {
            let fields: Vec<&str> = l.split('\t').map(str::trim).collect();
            let malformed = |reason: String| ExpertError::Malformed { line, reason };
            let get = |name: &str| -> Result<&str, ExpertError> {
                fields
                    .get(cols[name])
                    .copied()
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| malformed(format!("missing {name}")))
            };
            let mut scores = [0u8; 7];
            for m in ClinicalMetric::ALL {
                let raw = get(m.as_str())?;
                let v: i64 = raw.parse().map_err(|_| malformed(format!("{m} is not an integer: {raw:?}")))?;
                if !(0..=i64::from(MAX_SCORE)).contains(&v) {
                    return Err(malformed(format!("{m} = {v} is outside 0..=100")));
                }
                scores[m.index()] = v as u8;
            }
            Ok(ExpertScoreCard {
                rater_id: get("rater_id")?.to_string(),
                rater_level: get("rater_level")?.parse().map_err(|e: ExpertError| malformed(e.to_string()))?,
                record_id: get("record_id")?.to_string(),
                backend_id: get("backend_id")?.to_string(),
                scores: MetricScores::from_array(scores),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn items(n: usize) -> Vec<ScoringItem> {
        (0..n)
            .map(|i| ScoringItem {
                record_id: format!("r{i}"),
                backend_id: "m".into(),
                finding: Some("右肺结节".into()),
                impression: "右肺上叶结节".into(),
            })
            .collect()
    }

    fn answers(cards: usize) -> String {
        (0..cards * 7).map(|i| format!("{}\n", i % 101)).collect()
    }

    #[test]
    fn out_of_range_entry_is_reprompted() {
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("j.jsonl");
        let input = format!("105\nabc\n{}", answers(1));
        let mut out = Vec::new();
        let s = score_session(&items(1), "dr", RaterLevel::Senior, &j, &mut Cursor::new(input), &mut out).unwrap();
        assert!(s.complete);
        assert_eq!(s.cards.len(), 1);
        assert_eq!(s.cards[0].scores.to_array(), [0, 1, 2, 3, 4, 5, 6]);
        let shown = String::from_utf8(out).unwrap();
        assert_eq!(shown.matches("please enter").count(), 2);
        assert!(shown.contains("HIGH score means FEW"));
    }

    #[test]
    fn resume_only_asks_for_remaining_items() {
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("j.jsonl");
        // Three full cards, then input ends mid-way through the fourth.
        let partial = format!("{}50\n", answers(3));
        let first = score_session(&items(5), "dr", RaterLevel::Junior, &j, &mut Cursor::new(partial), &mut Vec::new()).unwrap();
        assert!(!first.complete);
        assert_eq!(first.added, 3);
        assert_eq!(read_journal(&j).unwrap().len(), 3);

        let mut out = Vec::new();
        let second = score_session(&items(5), "dr", RaterLevel::Junior, &j, &mut Cursor::new(answers(2)), &mut out).unwrap();
        assert!(second.complete);
        assert_eq!(second.added, 2);
        let shown = String::from_utf8(out).unwrap();
        assert!(shown.contains("2 of 5 items remaining"));
        assert_eq!(shown.matches("Impression:").count(), 2);
        assert_eq!(read_journal(&j).unwrap(), second.cards);
    }

    #[test]
    fn other_raters_cards_do_not_count_as_done() {
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("j.jsonl");
        score_session(&items(1), "a", RaterLevel::Junior, &j, &mut Cursor::new(answers(1)), &mut Vec::new()).unwrap();
        let s = score_session(&items(1), "b", RaterLevel::Senior, &j, &mut Cursor::new(answers(1)), &mut Vec::new()).unwrap();
        assert_eq!(s.added, 1);
        assert_eq!(read_journal(&j).unwrap().len(), 2);
    }

    #[test]
    fn tsv_import() {
        let text = "rater_id\trater_level\trecord_id\tbackend_id\tunderstandability\tcoherence\trelevance\tconciseness\tclinical_utility\tmissed_diagnosis\toverdiagnosis\n\
                    a\tsenior\tr1\tm\t90\t80\t70\t60\t50\t40\t30\n\
                    b\tjunior\tr1\tm\t100\t100\t100\t100\t100\t100\t0\n";
        let cards = import_tsv(text).unwrap();
        assert_eq!(cards.len(), 2);
        assert_eq!(cards[0].scores.clinical_utility, 50);
        assert_eq!(cards[1].rater_level, RaterLevel::Junior);
        let bad = text.replace("\t30\n", "\t130\n");
        assert!(matches!(import_tsv(&bad), Err(ExpertError::Malformed { line: 2, .. })));
        assert!(import_tsv("rater_id\trecord_id\n").is_err());
    }
}
