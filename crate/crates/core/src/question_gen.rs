//! Caption → causal question: sample a "why" prefix, prepend it to the
//! caption and run a grammar-correction pass.

use std::fmt;

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lm_backend::{self, CompletionProvider, CompletionRequest, LmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuestionPrefix {
    #[serde(rename = "why is")]
    WhyIs,
    #[serde(rename = "why did")]
    WhyDid,
    #[serde(rename = "why does")]
    WhyDoes,
}

impl QuestionPrefix {
    pub const ALL: [QuestionPrefix; 3] = [Self::WhyIs, Self::WhyDid, Self::WhyDoes];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::WhyIs => "why is",
            Self::WhyDid => "why did",
            Self::WhyDoes => "why does",
        }
    }
}

impl fmt::Display for QuestionPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Uniform draw over the three prefixes.
pub fn sample_prefix<R: Rng + ?Sized>(rng: &mut R) -> QuestionPrefix {
    QuestionPrefix::ALL[rng.gen_range(0..QuestionPrefix::ALL.len())]
}

/// Interrogative openings that `default_gc` collapses when repeated.
const DEDUP_PREFIXES: &[&str] = &[
    "why is", "why was", "why did", "why does", "why do", "why are", "how did", "how does",
];

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    let rest = &s[prefix.len()..];
    (head.eq_ignore_ascii_case(prefix) && rest.starts_with(' ')).then(|| &rest[1..])
}

/// Built-in rule-based grammar pass.
pub fn default_gc(text: &str) -> String {
    let mut s = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let trimmed_len = s
        .trim_end_matches(|c: char| matches!(c, '.' | '?' | '!' | ',' | ';' | ':') || c.is_whitespace())
        .len();
    s.truncate(trimmed_len);

    'dedup: loop {
        for p in DEDUP_PREFIXES {
            if let Some(rest) = strip_prefix_ci(&s, p) {
                if strip_prefix_ci(rest, p).is_some() {
                    s = rest.to_string();
                    continue 'dedup;
                }
            }
        }
        break;
    }

    let mut out: String = match s.chars().next() {
        Some(first) => first.to_uppercase().chain(s.chars().skip(1)).collect(),
        None => String::new(),
    };
    out.push('?');
    out
}

/// Pluggable grammar correction.
#[async_trait]
pub trait GrammarCorrector: Send + Sync {
    fn id(&self) -> &str;
    async fn correct(&self, text: &str) -> Result<String, LmError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleCorrector;

#[async_trait]
impl GrammarCorrector for RuleCorrector {
    fn id(&self) -> &str {
        "rules"
    }

    async fn correct(&self, text: &str) -> Result<String, LmError> {
        Ok(default_gc(text))
    }
}

/// Text-to-text correction through a completion endpoint: one choice at
/// temperature 0, the draft question as the prompt.
pub struct CompletionCorrector<P> {
    provider: P,
    max_tokens: u32,
}

impl<P: CompletionProvider> CompletionCorrector<P> {
    pub fn new(provider: P) -> Self {
        Self {
            provider,
            max_tokens: 64,
        }
    }
}

#[async_trait]
impl<P: CompletionProvider> GrammarCorrector for CompletionCorrector<P> {
    fn id(&self) -> &str {
        self.provider.id()
    }

    async fn correct(&self, text: &str) -> Result<String, LmError> {
        let req = CompletionRequest {
            prompt: text.to_string(),
            temperature: 0.0,
            max_tokens: self.max_tokens,
            num_choices: 1,
            stop_sequences: None,
            seed: None,
        };
        let resp = lm_backend::complete(&self.provider, &req).await?;
        let first = resp.choices.into_iter().next().unwrap_or_default();
        let line = first.trim().lines().next().unwrap_or("").trim().to_string();
        if line.is_empty() {
            return Err(LmError::EmptyResponse);
        }
        Ok(line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionDraft {
    pub prefix: QuestionPrefix,
    /// `prefix + " " + caption`, before correction.
    pub q0: String,
    pub q: String,
    /// The corrector failed and the rule pass was used instead.
    pub corrector_fallback: bool,
}

#[derive(Debug, thiserror::Error)]
#[error("caption is empty")]
pub struct EmptyCaption;

/// Build a question from a caption and a pre-drawn prefix.
///
/// The corrector's output goes through [`default_gc`] once more, so every
/// draft starts with an uppercase letter and ends with a single `?` whatever
/// the external corrector returns.
pub async fn make_question_with_prefix(
    caption: &str,
    prefix: QuestionPrefix,
    corrector: &dyn GrammarCorrector,
) -> Result<QuestionDraft, EmptyCaption> {
    if caption.trim().is_empty() {
        return Err(EmptyCaption);
    }
    let q0 = format!("{prefix} {caption}");
    let (corrected, corrector_fallback) = match corrector.correct(&q0).await {
        Ok(q) => (q, false),
        Err(e) => {
            tracing::warn!(error = %e, "grammar corrector failed; using rule pass");
            (default_gc(&q0), true)
        }
    };
    Ok(QuestionDraft {
        prefix,
        q0,
        q: default_gc(&corrected),
        corrector_fallback,
    })
}

pub async fn make_question<R: Rng + ?Sized + Send>(
    caption: &str,
    rng: &mut R,
    corrector: &dyn GrammarCorrector,
) -> Result<QuestionDraft, EmptyCaption> {
    let prefix = sample_prefix(rng);
    make_question_with_prefix(caption, prefix, corrector).await
}
