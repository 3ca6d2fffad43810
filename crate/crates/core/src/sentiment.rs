//! Lexicon-based sentiment scoring.
//!
//! A text is split into sentences on runs of `.`, `!` and `?`, each sentence
//! into lowercase alphanumeric tokens. Every token found in the lexicon
//! contributes its polarity, flipped when a negator appears among the
//! [`NEGATION_WINDOW`] tokens before it. A sentence scores `raw / √n` for `n`
//! tokens and the text scores the mean over its sentences.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Number of preceding tokens searched for a negator.
pub const NEGATION_WINDOW: usize = 4;

/// The small lexicon shipped with the crate (also used by the synthetic generator).
pub const BUILTIN_LEXICON_TSV: &str = include_str!("../fixtures/lexicon.tsv");

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: HashMap<String, f64>,
    negators: HashSet<String>,
}

/// Result of parsing a lexicon file: the lexicon plus the duplicate-term warnings.
#[derive(Debug, Clone)]
pub struct LoadedLexicon {
    pub lexicon: Lexicon,
    /// `(line, term)` for every row that overrode an earlier row.
    pub duplicates: Vec<(usize, String)>,
}

/// Signed, unbounded sentiment score of one text.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct SentimentScore(pub f64);

impl SentimentScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<SentimentScore> for f64 {
    fn from(s: SentimentScore) -> f64 {
        s.0
    }
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace a polarized term. Returns the previous polarity.
    pub fn insert(&mut self, term: &str, polarity: f64) -> Result<Option<f64>> {
        let term = validate_term(term, 0)?;
        if !polarity.is_finite() {
            return Err(Error::Lexicon {
                line: 0,
                reason: format!("non-finite polarity for `{term}`"),
            });
        }
        Ok(self.entries.insert(term, polarity))
    }

    pub fn add_negator(&mut self, term: &str) -> Result<()> {
        let term = validate_term(term, 0)?;
        self.negators.insert(term);
        Ok(())
    }

    pub fn polarity(&self, term: &str) -> Option<f64> {
        self.entries.get(term).copied()
    }

    pub fn is_negator(&self, term: &str) -> bool {
        self.negators.contains(term)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn negators(&self) -> impl Iterator<Item = &str> {
        self.negators.iter().map(String::as_str)
    }

    /// Copy of this lexicon with every polarity passed through `f`.
    pub fn map_polarities(&self, f: impl Fn(f64) -> f64) -> Lexicon {
        Lexicon {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), f(*v)))
                .collect(),
            negators: self.negators.clone(),
        }
    }

    /// Parse the two- or three-column TSV format (`term<TAB>polarity[<TAB>NEG]`).
    pub fn parse_tsv(text: &str) -> Result<LoadedLexicon> {
        let mut lexicon = Lexicon::new();
        let mut duplicates = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let term = validate_term(cols.next().unwrap_or(""), line_no)?;
            let polarity_src = cols.next().ok_or_else(|| Error::Lexicon {
                line: line_no,
                reason: "missing polarity column".into(),
            })?;
            let polarity: f64 = polarity_src.trim().parse().map_err(|_| Error::Lexicon {
                line: line_no,
                reason: format!("non-numeric polarity `{polarity_src}`"),
            })?;
            if !polarity.is_finite() {
                return Err(Error::Lexicon {
                    line: line_no,
                    reason: format!("non-finite polarity `{polarity_src}`"),
                });
            }
            match cols.next().map(str::trim) {
                None | Some("") => {}
                Some(flag) if flag.eq_ignore_ascii_case("NEG") => {
                    lexicon.negators.insert(term.clone());
                }
                Some(other) => {
                    return Err(Error::Lexicon {
                        line: line_no,
                        reason: format!("unknown flag `{other}` (expected NEG)"),
                    })
                }
            }
            if lexicon.entries.insert(term.clone(), polarity).is_some() {
                duplicates.push((line_no, term));
            }
        }
        Ok(LoadedLexicon {
            lexicon,
            duplicates,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LoadedLexicon> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text)
    }

    /// The ~40-term lexicon bundled with the crate.
    pub fn builtin() -> Lexicon {
        Self::parse_tsv(BUILTIN_LEXICON_TSV)
            .expect("bundled lexicon parses")
            .lexicon
    }
}

fn validate_term(term: &str, line: usize) -> Result<String> {
    let term = term.trim().to_lowercase();
    if term.is_empty() {
        return Err(Error::Lexicon {
            line,
            reason: "empty term".into(),
        });
    }
    if term.chars().any(char::is_whitespace) {
        return Err(Error::Lexicon {
            line,
            reason: format!("term `{term}` contains whitespace"),
        });
    }
    Ok(term)
}

/// Split a text into sentences of lowercase tokens. Empty sentences are dropped.
pub fn tokenize(text: &str) -> Vec<Vec<String>> {
    text.split(['.', '!', '?'])
        .map(|sentence| {
            sentence
                .split(|c: char| !c.is_alphanumeric())
                .filter(|t| !t.is_empty())
                .map(str::to_lowercase)
                .collect::<Vec<_>>()
        })
        .filter(|tokens| !tokens.is_empty())
        .collect()
}

fn score_sentence(tokens: &[String], lex: &Lexicon) -> f64 {
    let mut raw = 0.0;
    for (i, token) in tokens.iter().enumerate() {
        let Some(polarity) = lex.polarity(token) else {
            continue;
        };
        let window = &tokens[i.saturating_sub(NEGATION_WINDOW)..i];
        let negated = window.iter().any(|t| lex.is_negator(t));
        raw += if negated { -polarity } else { polarity };
    }
    raw / (tokens.len() as f64).sqrt()
}

/// Score one text. Texts with no sentences score exactly 0.
pub fn score_text(text: &str, lex: &Lexicon) -> SentimentScore {
    let sentences = tokenize(text);
    if sentences.is_empty() {
        return SentimentScore(0.0);
    }
    let total: f64 = sentences.iter().map(|s| score_sentence(s, lex)).sum();
    SentimentScore(total / sentences.len() as f64)
}
