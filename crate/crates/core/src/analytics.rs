//! Quality indicators for LM output: answer-length CDFs and frequent-word
//! overlap between generated answers and input captions.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOP_GENERATED: usize = 9;
pub const DEFAULT_TOP_CAPTIONS: usize = 15;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("cannot compute a length distribution over zero answers")]
    EmptyInput,
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn is_edge_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2026}' | '\u{2013}' | '\u{2014}'
                | '\u{00AB}' | '\u{00BB}' | '\u{00BF}' | '\u{00A1}'
        )
}

/// Lowercased whitespace tokens with edge punctuation stripped. Internal
/// apostrophes survive, so `don't` stays one token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.to_lowercase().trim_matches(is_edge_punct).to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthCdf {
    /// `(length, cumulative fraction)`, lengths strictly increasing.
    pub points: Vec<(usize, f64)>,
}

impl LengthCdf {
    pub fn final_fraction(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), AnalyticsError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "length,cumulative_fraction")?;
        for (len, frac) in &self.points {
            writeln!(f, "{len},{frac}")?;
        }
        f.flush()?;
        Ok(())
    }
}

pub fn length_cdf<S: AsRef<str>>(answers: &[S]) -> Result<LengthCdf, AnalyticsError> {
    if answers.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for a in answers {
        *hist.entry(tokenize(a.as_ref()).len()).or_default() += 1;
    }
    let total = answers.len() as f64;
    let mut running = 0usize;
    let points = hist
        .into_iter()
        .map(|(len, count)| {
            running += count;
            (len, running as f64 / total)
        })
        .collect();
    Ok(LengthCdf { points })
}

/// Small English function-word list packaged with the crate.
pub fn default_stopwords() -> HashSet<String> {
    include_str!("../data/stopwords.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Top-`k` non-stopword tokens by count, ties broken lexicographically.
pub fn top_words<S: AsRef<str>>(
    texts: &[S],
    k: usize,
    stopwords: &HashSet<String>,
) -> Result<Vec<(String, usize)>, AnalyticsError> {
    if k == 0 {
        return Err(AnalyticsError::InvalidK);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for tok in tokenize(text.as_ref()) {
            if !stopwords.contains(&tok) {
                *counts.entry(tok).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub generated_top: Vec<(String, usize)>,
    pub caption_top: Vec<(String, usize)>,
    pub overlap: BTreeSet<String>,
    /// `|overlap| / k_gen`.
    pub overlap_fraction: f64,
}

impl OverlapReport {
    pub fn write_csv(&self, path: &Path) -> Result<(), AnalyticsError> {
        let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
        w.write_record(["word", "count", "corpus"]).map_err(csv_io)?;
        for (corpus, list) in [("generated", &self.generated_top), ("captions", &self.caption_top)] {
            for (word, count) in list {
                w.write_record([word.as_str(), &count.to_string(), corpus])
                    .map_err(csv_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> AnalyticsError {
    AnalyticsError::Io(std::io::Error::other(e))
}

pub fn overlap_report<A: AsRef<str>, C: AsRef<str>>(
    answers: &[A],
    captions: &[C],
    k_gen: usize,
    k_cap: usize,
    stopwords: &HashSet<String>,
) -> Result<OverlapReport, AnalyticsError> {
    if answers.is_empty() || captions.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let generated_top = top_words(answers, k_gen, stopwords)?;
    let caption_top = top_words(captions, k_cap, stopwords)?;
    let cap_words: BTreeSet<&str> = caption_top.iter().map(|(w, _)| w.as_str()).collect();
    let overlap: BTreeSet<String> = generated_top
        .iter()
        .filter(|(w, _)| cap_words.contains(w.as_str()))
        .map(|(w, _)| w.clone())
        .collect();
    let overlap_fraction = overlap.len() as f64 / k_gen as f64;
    Ok(OverlapReport {
        generated_top,
        caption_top,
        overlap,
        overlap_fraction,
    })
}
