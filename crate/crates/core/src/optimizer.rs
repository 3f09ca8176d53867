//! Prompt restructuring.
//!
//! A prompt is split into phrases at commas, semicolons and the connectives
//! "and" and "with"; the phrases are weighted by an [`ImportanceScorer`] and
//! reassembled heaviest first, joined with `", "`. Equal weights keep their
//! original order.
//!
//! ```
//! use edgecache::optimizer::{restructure, ContentTokenScorer};
//!
//! let scorer = ContentTokenScorer::default();
//! let out = restructure("the street, a red sports car", &scorer).unwrap();
//! assert_eq!(out, "a red sports car, the street");
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::embedding::tokens;
use crate::error::{Error, Result};

/// Stop words used by the default scorer, one per line.
pub const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

const CONNECTIVES: [&str; 2] = [" and ", " with "];

#[derive(Debug, Clone, PartialEq)]
pub struct PhraseWeight {
    pub phrase: String,
    pub weight: f64,
    pub original_index: usize,
}

/// Assigns one non-negative weight per phrase.
pub trait ImportanceScorer: Send + Sync {
    fn score(&self, phrases: &[String]) -> Vec<f64>;
}

/// Weight = number of tokens not in the stop-word list.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentTokenScorer {
    stopwords: BTreeSet<String>,
}

impl Default for ContentTokenScorer {
    fn default() -> Self {
        Self::from_list(DEFAULT_STOPWORDS)
    }
}

impl ContentTokenScorer {
    /// Parses a newline-separated list; blank lines and `#` comments are
    /// skipped.
    pub fn from_list(list: &str) -> Self {
        let stopwords = list
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        ContentTokenScorer { stopwords }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_list(&fs::read_to_string(path)?))
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    pub fn content_tokens(&self, phrase: &str) -> usize {
        tokens(phrase).filter(|t| !self.is_stopword(t)).count()
    }
}

impl ImportanceScorer for ContentTokenScorer {
    fn score(&self, phrases: &[String]) -> Vec<f64> {
        phrases.iter().map(|p| self.content_tokens(p) as f64).collect()
    }
}

/// Splits a prompt into trimmed, nonempty phrases.
pub fn split_phrases(prompt: &str) -> Result<Vec<String>> {
    let mut pieces = Vec::new();
    for part in prompt.split([',', ';']) {
        let mut rest = part;
        // Connectives match case-insensitively; ASCII lowercasing keeps byte
        // offsets aligned with the original.
        loop {
            let lower = rest.to_ascii_lowercase();
            let hit = CONNECTIVES
                .iter()
                .filter_map(|c| lower.find(c).map(|at| (at, c.len())))
                .min();
            match hit {
                Some((at, len)) => {
                    pieces.push(&rest[..at]);
                    rest = &rest[at + len..];
                }
                None => {
                    pieces.push(rest);
                    break;
                }
            }
        }
    }
    let phrases: Vec<String> = pieces
        .into_iter()
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_owned)
        .collect();
    if phrases.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    Ok(phrases)
}

/// Phrases with their weights, heaviest first; ties keep input order.
pub fn weigh_phrases(prompt: &str, scorer: &dyn ImportanceScorer) -> Result<Vec<PhraseWeight>> {
    let phrases = split_phrases(prompt)?;
    let weights = scorer.score(&phrases);
    if weights.len() != phrases.len() {
        return Err(Error::InvalidParameter(format!(
            "scorer returned {} weights for {} phrases",
            weights.len(),
            phrases.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidParameter(format!("scorer returned invalid weight {w}")));
    }
    let mut out: Vec<PhraseWeight> = phrases
        .into_iter()
        .zip(weights)
        .enumerate()
        .map(|(original_index, (phrase, weight))| PhraseWeight {
            phrase,
            weight,
            original_index,
        })
        .collect();
    out.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    Ok(out)
}

pub fn restructure(prompt: &str, scorer: &dyn ImportanceScorer) -> Result<String> {
    let weighted = weigh_phrases(prompt, scorer)?;
    Ok(weighted
        .iter()
        .map(|p| p.phrase.as_str())
        .collect::<Vec<_>>()
        .join(", "))
}
