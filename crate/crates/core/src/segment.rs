//! Dictionary-free segmentation of mixed Chinese/Latin report text.
//!
//! CJK code points become single-character tokens, maximal runs of other
//! alphanumeric characters become one token each, and everything else
//! (whitespace, punctuation, symbols) separates tokens and is dropped.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Ordered, non-empty tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Builds a sequence, dropping empty tokens.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TokenSeq(
            tokens
                .into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty())
                .collect(),
        )
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn join(&self, sep: &str) -> String {
        self.0.join(sep)
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.join(" "))
    }
}

impl From<Vec<&str>> for TokenSeq {
    fn from(v: Vec<&str>) -> Self {
        TokenSeq::new(v)
    }
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, text: &str) -> TokenSeq;
}

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF        // Hiragana, Katakana
        | 0x3400..=0x4DBF      // CJK Extension A
        | 0x4E00..=0x9FFF      // CJK Unified Ideographs
        | 0xAC00..=0xD7AF      // Hangul syllables
        | 0xF900..=0xFAFF      // CJK Compatibility Ideographs
        | 0x20000..=0x2EBEF    // Extensions B-F
        | 0x30000..=0x3134F)   // Extension G
}

/// Character-level segmentation for CJK, run-level for everything alphanumeric.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharSegmenter;

impl Segmenter for CharSegmenter {
    fn segment(&self, text: &str) -> TokenSeq {
        let mut tokens = Vec::new();
        let mut run = String::new();
        for c in text.chars() {
            if is_cjk(c) {
                if !run.is_empty() {
                    tokens.push(std::mem::take(&mut run));
                }
                tokens.push(c.to_string());
            } else if c.is_alphanumeric() {
                run.push(c);
            } else if !run.is_empty() {
                tokens.push(std::mem::take(&mut run));
            }
        }
        if !run.is_empty() {
            tokens.push(run);
        }
        TokenSeq(tokens)
    }
}

/// Forward maximum matching over a user word list inside CJK runs; non-CJK text
/// is handled exactly like [`CharSegmenter`].
#[derive(Debug, Clone, Default)]
pub struct DictionarySegmenter {
    words: HashSet<String>,
    max_chars: usize,
}

impl DictionarySegmenter {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: HashSet<String> = words
            .into_iter()
            .map(Into::into)
            .filter(|w: &String| !w.is_empty() && w.chars().all(is_cjk))
            .collect();
        let max_chars = words.iter().map(|w| w.chars().count()).max().unwrap_or(1);
        DictionarySegmenter { words, max_chars }
    }

    fn match_run(&self, run: &[char], out: &mut Vec<String>) {
        let mut i = 0;
        while i < run.len() {
            let longest = (2..=self.max_chars.min(run.len() - i))
                .rev()
                .find(|&k| self.words.contains(&run[i..i + k].iter().collect::<String>()))
                .unwrap_or(1);
            out.push(run[i..i + longest].iter().collect());
            i += longest;
        }
    }
}

impl Segmenter for DictionarySegmenter {
    fn segment(&self, text: &str) -> TokenSeq {
        let mut tokens = Vec::new();
        let mut cjk: Vec<char> = Vec::new();
        for piece in CharSegmenter.segment(text).0 {
            let mut chars = piece.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if is_cjk(c) => cjk.push(c),
                _ => {
                    self.match_run(&cjk, &mut tokens);
                    cjk.clear();
                    tokens.push(piece);
                }
            }
        }
        self.match_run(&cjk, &mut tokens);
        TokenSeq(tokens)
    }
}

/// Segments with the default [`CharSegmenter`].
pub fn segment_text(text: &str) -> TokenSeq {
    CharSegmenter.segment(text)
}
