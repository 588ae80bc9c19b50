//! Intention extraction: prompt the LM with a caption, clean the returned
//! choices and drop degenerate ones.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::tokenize;
use crate::lm_backend::{self, CompletionProvider, CompletionRequest, LmError};
use crate::prompting::{PromptError, PromptSpec};

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Provider(#[from] LmError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub video_id: String,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentionCandidate {
    pub text: String,
    pub source_provider: String,
    pub choice_index: u32,
    /// Word tokens in `text`, as counted by [`tokenize`].
    pub token_count: usize,
}

impl IntentionCandidate {
    pub fn new(text: impl Into<String>, source_provider: impl Into<String>, choice_index: u32) -> Self {
        let text = text.into();
        Self {
            token_count: tokenize(&text).len(),
            text,
            source_provider: source_provider.into(),
            choice_index,
        }
    }
}

/// One line of the intermediate responses file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub video_id: String,
    pub caption: String,
    pub candidates: Vec<String>,
    /// Provider choice index of each candidate. Older files without it fall
    /// back to positional indices.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choice_indices: Vec<u32>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub provider: String,
}

impl ResponseRecord {
    pub fn from_candidates(record: &CaptionRecord, candidates: &[IntentionCandidate]) -> Self {
        Self {
            video_id: record.video_id.clone(),
            caption: record.caption.clone(),
            candidates: candidates.iter().map(|c| c.text.clone()).collect(),
            choice_indices: candidates.iter().map(|c| c.choice_index).collect(),
            provider: candidates
                .first()
                .map(|c| c.source_provider.clone())
                .unwrap_or_default(),
        }
    }

    pub fn choice_index(&self, position: usize) -> u32 {
        self.choice_indices
            .get(position)
            .copied()
            .unwrap_or(position as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_tokens: usize,
    pub max_tokens_answer: usize,
    pub filler_lexicon: BTreeSet<String>,
    /// Token-set Jaccard similarity to the caption above which a candidate
    /// counts as a paraphrased copy.
    pub copy_jaccard: f64,
    /// Keep at most this many survivors per caption.
    #[serde(default)]
    pub max_per_caption: Option<usize>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_tokens: 2,
            max_tokens_answer: 20,
            filler_lexicon: ["think", "like", "question", "know", "mean", "i", "don't"]
                .into_iter()
                .map(String::from)
                .collect(),
            copy_jaccard: 0.8,
            max_per_caption: None,
        }
    }
}

const QUOTES: &[char] = &['"', '\'', '`', '\u{2018}', '\u{2019}', '\u{201C}', '\u{201D}'];

fn strip_enumeration(s: &str) -> &str {
    let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    let rest = if digits > 0 {
        match s[digits..].chars().next() {
            Some('.' | ')' | '-') => &s[digits + 1..],
            _ => return s,
        }
    } else if let Some(r) = s.strip_prefix('-').or_else(|| s.strip_prefix('\u{2022}')) {
        r
    } else {
        return s;
    };
    if rest.starts_with(char::is_whitespace) {
        rest.trim_start()
    } else {
        s
    }
}

fn strip_output_echo(s: &str) -> &str {
    match s.get(..7) {
        Some(head) if head.eq_ignore_ascii_case("output:") => s[7..].trim_start(),
        _ => s,
    }
}

/// Normalise one raw completion into a single-line answer.
pub fn clean_response(raw: &str) -> String {
    let mut s = raw.trim().lines().next().unwrap_or("").trim();
    loop {
        let next = strip_output_echo(s);
        let next = strip_enumeration(next);
        let next = next.trim_matches(QUOTES).trim();
        if next == s {
            break;
        }
        s = next;
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_copy(tokens: &[String], caption_tokens: &[String], jaccard_threshold: f64) -> bool {
    if tokens.is_empty() || caption_tokens.is_empty() {
        return false;
    }
    if caption_tokens.starts_with(tokens) || caption_tokens.ends_with(tokens) {
        return true;
    }
    let a: HashSet<&String> = tokens.iter().collect();
    let b: HashSet<&String> = caption_tokens.iter().collect();
    let inter = a.intersection(&b).count() as f64;
    let union = a.union(&b).count() as f64;
    inter / union > jaccard_threshold
}

/// Why a candidate was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    Empty,
    CopiesCaption,
    TooShort,
    TooLong,
    Filler,
    Duplicate,
}

fn rejection(
    cand: &IntentionCandidate,
    caption: &str,
    caption_tokens: &[String],
    cfg: &FilterConfig,
    seen: &HashSet<String>,
) -> Option<Rejection> {
    let text = cand.text.trim();
    if text.is_empty() {
        return Some(Rejection::Empty);
    }
    let tokens = tokenize(text);
    if text.to_lowercase() == caption.trim().to_lowercase()
        || is_copy(&tokens, caption_tokens, cfg.copy_jaccard)
    {
        return Some(Rejection::CopiesCaption);
    }
    if tokens.len() < cfg.min_tokens {
        return Some(Rejection::TooShort);
    }
    if tokens.len() > cfg.max_tokens_answer {
        return Some(Rejection::TooLong);
    }
    if tokens.iter().all(|t| cfg.filler_lexicon.contains(t)) {
        return Some(Rejection::Filler);
    }
    if seen.contains(&cand.text) {
        return Some(Rejection::Duplicate);
    }
    None
}

/// Drop empty, caption-copying, out-of-range, filler-only and duplicate
/// candidates. Survivors keep their original order.
pub fn filter_degenerate(
    candidates: Vec<IntentionCandidate>,
    caption: &str,
    cfg: &FilterConfig,
) -> Vec<IntentionCandidate> {
    let caption_tokens = tokenize(caption);
    let mut seen = HashSet::new();
    candidates
        .into_iter()
        .filter(|c| {
            if rejection(c, caption, &caption_tokens, cfg, &seen).is_some() {
                return false;
            }
            seen.insert(c.text.clone());
            true
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub candidates: Vec<IntentionCandidate>,
    /// Choices returned by the provider before cleaning and filtering.
    pub raw_choices: usize,
}

impl Extraction {
    pub fn filtered(&self) -> usize {
        self.raw_choices - self.candidates.len()
    }
}

/// Prompt the provider for the intentions behind one caption.
pub async fn extract_intentions(
    record: &CaptionRecord,
    provider: &dyn CompletionProvider,
    spec: &PromptSpec,
    req_defaults: &CompletionRequest,
    cfg: &FilterConfig,
) -> Result<Extraction, ExtractionError> {
    let prompt = spec.render(&record.caption)?;
    let req = req_defaults.with_prompt(prompt);
    let resp = lm_backend::complete(provider, &req).await?;
    let raw_choices = resp.choices.len();
    let cleaned = resp
        .choices
        .iter()
        .enumerate()
        .map(|(i, raw)| IntentionCandidate::new(clean_response(raw), &resp.provider_id, i as u32))
        .collect();
    let mut candidates = filter_degenerate(cleaned, &record.caption, cfg);
    if let Some(cap) = cfg.max_per_caption {
        candidates.truncate(cap);
    }
    Ok(Extraction {
        candidates,
        raw_choices,
    })
}
