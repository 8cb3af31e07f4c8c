use std::collections::{BTreeMap, HashMap, HashSet};

use regex::Regex;

use super::{Corpus, CorpusError, RadiologyReport, Reject, WordSet};

pub const DEFAULT_TITLE_THRESHOLD: f64 = 0.8;
/// A title line must occur in at least this many findings of an institution,
/// otherwise tiny institutions would lose every leading line.
pub const DEFAULT_TITLE_MIN_SUPPORT: usize = 3;
const MAX_CLEAN_PASSES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TitleRule {
    /// Fraction of an institution's findings that must contain a line for it to count as boilerplate.
    pub threshold: f64,
    pub min_support: usize,
}

impl Default for TitleRule {
    fn default() -> Self {
        TitleRule {
            threshold: DEFAULT_TITLE_THRESHOLD,
            min_support: DEFAULT_TITLE_MIN_SUPPORT,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CleanOptions {
    pub title: TitleRule,
    /// Treat lexicon entries as regular expressions instead of literals.
    pub regex: bool,
}

#[derive(Debug, Clone, Default)]
pub struct CleanOutput {
    pub corpus: Corpus,
    pub rejects: Vec<Reject>,
    /// Number of passes of the cleaning chain until nothing changed (the last pass is a no-op).
    pub passes: usize,
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Drops records whose whitespace-normalized (finding, impression) pair already occurred.
pub fn remove_repeated_values(c: &Corpus) -> Corpus {
    let mut seen = HashSet::with_capacity(c.len());
    let records = c
        .records
        .iter()
        .filter(|r| seen.insert((collapse_whitespace(&r.finding), collapse_whitespace(&r.impression))))
        .cloned()
        .collect();
    Corpus::new(records, c.provenance.clone())
}

/// Strips leading boilerplate lines (report titles, department headers) from findings.
///
/// Within each institution, a line is boilerplate when it appears in at least
/// `threshold` of the institution's findings and in at least `min_support` of them.
/// The leading run of boilerplate (and blank) lines is removed, always keeping the
/// last non-blank line so a finding never becomes empty here.
pub fn remove_repeated_titles(c: &Corpus, rule: TitleRule) -> Corpus {
    let mut by_institution: BTreeMap<u8, Vec<&RadiologyReport>> = BTreeMap::new();
    for r in &c.records {
        by_institution.entry(r.institution).or_default().push(r);
    }
    let titles: HashMap<u8, HashSet<String>> = by_institution
        .iter()
        .map(|(&inst, recs)| (inst, title_lines(recs, rule)))
        .collect();

    let records = c
        .records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let Some(stripped) = strip_leading_titles(&r.finding, &titles[&r.institution]) {
                r.finding = stripped;
            }
            r
        })
        .collect();
    Corpus::new(records, c.provenance.clone())
}

fn title_lines(records: &[&RadiologyReport], rule: TitleRule) -> HashSet<String> {
    let n = records.len();
    let mut doc_freq: HashMap<&str, usize> = HashMap::new();
    for r in records {
        let distinct: HashSet<&str> = r
            .finding
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        for line in distinct {
            *doc_freq.entry(line).or_default() += 1;
        }
    }
    doc_freq
        .into_iter()
        .filter(|&(_, k)| k >= rule.min_support && k as f64 >= rule.threshold * n as f64)
        .map(|(l, _)| l.to_string())
        .collect()
}

fn strip_leading_titles(text: &str, titles: &HashSet<String>) -> Option<String> {
    if titles.is_empty() {
        return None;
    }
    let lines: Vec<&str> = text.lines().collect();
    let last_content = lines.iter().rposition(|l| !l.trim().is_empty())?;
    let mut cut = 0;
    let mut stripped_title = false;
    while cut < last_content {
        let l = lines[cut].trim();
        if l.is_empty() {
            cut += 1;
        } else if titles.contains(l) {
            stripped_title = true;
            cut += 1;
        } else {
            break;
        }
    }
    stripped_title.then(|| lines[cut..].join("\n"))
}

pub(crate) fn normalize_text(s: &str) -> String {
    let unified = s.replace("\r\n", "\n").replace('\r', "\n");
    unified
        .lines()
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string()
}

/// Concatenates sheets into one corpus with normalized text fields.
///
/// A record id present in more than one sheet is rewritten to `p{index}:{id}` in every
/// sheet that carries it; ids unique across sheets are kept as-is.
pub fn synthesize_multi_sheet(parts: &[Corpus]) -> Result<Corpus, CorpusError> {
    let mut owners: HashMap<&str, HashSet<usize>> = HashMap::new();
    for (i, part) in parts.iter().enumerate() {
        for r in &part.records {
            let field = if r.finding.trim().is_empty() {
                Some("finding")
            } else if r.impression.trim().is_empty() {
                Some("impression")
            } else {
                None
            };
            if let Some(field) = field {
                return Err(CorpusError::IrreconcilableSchema {
                    part: i,
                    reason: format!("record {:?} has no {field} text", r.record_id),
                });
            }
            owners.entry(r.record_id.as_str()).or_default().insert(i);
        }
    }

    let mut records = Vec::with_capacity(parts.iter().map(Corpus::len).sum());
    for (i, part) in parts.iter().enumerate() {
        for r in &part.records {
            let mut r = r.clone();
            if owners[r.record_id.as_str()].len() > 1 {
                r.record_id = format!("p{i}:{}", r.record_id);
            }
            r.finding = normalize_text(&r.finding);
            r.impression = normalize_text(&r.impression);
            records.push(r);
        }
    }
    let provenance = parts
        .iter()
        .map(|p| p.provenance.as_str())
        .collect::<Vec<_>>()
        .join("+");
    let out = Corpus::new(records, provenance);
    out.ensure_unique_ids()?;
    Ok(out)
}

enum Matcher {
    Literal(Vec<String>),
    Pattern(Vec<Regex>),
}

impl Matcher {
    fn new(m: &WordSet, regex: bool) -> Result<Self, CorpusError> {
        if !regex {
            return Ok(Matcher::Literal(m.entries().to_vec()));
        }
        m.entries()
            .iter()
            .map(|e| Regex::new(e).map_err(|err| CorpusError::InvalidLexicon(format!("{e:?}: {err}"))))
            .collect::<Result<_, _>>()
            .map(Matcher::Pattern)
    }

    /// Deletes every entry repeatedly until no deletion changes the text.
    fn scrub(&self, text: &str) -> String {
        let mut current = text.to_string();
        loop {
            let mut next = current.clone();
            match self {
                Matcher::Literal(entries) => {
                    for e in entries {
                        if next.contains(e.as_str()) {
                            next = next.replace(e.as_str(), "");
                        }
                    }
                }
                Matcher::Pattern(patterns) => {
                    for p in patterns {
                        next = p.replace_all(&next, "").into_owned();
                    }
                }
            }
            if next == current {
                return current;
            }
            current = next;
        }
    }
}

/// Removes every lexicon entry from finding and impression texts until a fixed point.
/// Records left with an empty finding or impression are returned as rejects.
pub fn delete_meaningless(
    c: &Corpus,
    m: &WordSet,
    regex: bool,
) -> Result<(Corpus, Vec<Reject>), CorpusError> {
    if m.is_empty() {
        return Ok((c.clone(), Vec::new()));
    }
    let matcher = Matcher::new(m, regex)?;
    let mut records = Vec::with_capacity(c.len());
    let mut rejects = Vec::new();
    for r in &c.records {
        let finding = matcher.scrub(&r.finding);
        let impression = matcher.scrub(&r.impression);
        let emptied = if finding.trim().is_empty() {
            Some("finding")
        } else if impression.trim().is_empty() {
            Some("impression")
        } else {
            None
        };
        match emptied {
            Some(field) => rejects.push(Reject {
                line: None,
                record_id: Some(r.record_id.clone()),
                reason: format!("{field} empty after meaningless-word deletion"),
            }),
            None => records.push(RadiologyReport {
                finding,
                impression,
                ..r.clone()
            }),
        }
    }
    Ok((Corpus::new(records, c.provenance.clone()), rejects))
}

/// Runs repeated-value removal, title stripping, sheet normalization and lexicon
/// deletion, repeating the chain until a pass leaves the corpus unchanged.
pub fn clean(c: &Corpus, m: &WordSet, opts: CleanOptions) -> Result<CleanOutput, CorpusError> {
    let mut current = c.clone();
    let mut rejects = Vec::new();
    for pass in 1..=MAX_CLEAN_PASSES {
        let deduped = remove_repeated_values(&current);
        let titled = remove_repeated_titles(&deduped, opts.title);
        let normalized = synthesize_multi_sheet(std::slice::from_ref(&titled))?;
        let (scrubbed, mut dropped) = delete_meaningless(&normalized, m, opts.regex)?;
        rejects.append(&mut dropped);
        let next = Corpus::new(scrubbed.records, c.provenance.clone());
        if next == current {
            return Ok(CleanOutput {
                corpus: next,
                rejects,
                passes: pass,
            });
        }
        current = next;
    }
    // Every changing pass strictly shortens the corpus text, so this is unreachable
    // for realistic inputs; report what we have rather than looping further.
    log::warn!("cleaning did not converge within {MAX_CLEAN_PASSES} passes");
    Ok(CleanOutput {
        corpus: current,
        rejects,
        passes: MAX_CLEAN_PASSES,
    })
}
