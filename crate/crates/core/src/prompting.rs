//! Prompt construction: zero-shot question, few-shot `Input:`/`Output:`
//! layout, and the instruction-style prompt that also states answer count
//! and length.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_FEW_SHOT_COUNT: usize = 5;
pub const DEFAULT_TOP_K: u32 = 5;
pub const DEFAULT_MAX_LEN: u32 = 20;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("cannot read example pack {path}: {source}")]
    Pack {
        path: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    /// Declarative event description.
    pub input: String,
    /// Intention behind the event.
    pub output: String,
}

impl FewShotExample {
    pub fn new(input: impl Into<String>, output: impl Into<String>) -> Result<Self, PromptError> {
        let ex = Self {
            input: input.into(),
            output: output.into(),
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.input.trim().is_empty() || self.output.trim().is_empty() {
            return Err(PromptError::InvalidInput(
                "few-shot example fields must be non-empty".into(),
            ));
        }
        if self.input.trim_end().ends_with('?') {
            return Err(PromptError::InvalidInput(format!(
                "few-shot input must be declarative: {:?}",
                self.input
            )));
        }
        Ok(())
    }
}

/// Reads a JSON list of `{input, output}` records.
pub fn load_examples(path: &Path) -> Result<Vec<FewShotExample>, PromptError> {
    let pack_err = |e: Box<dyn std::error::Error + Send + Sync>| PromptError::Pack {
        path: path.display().to_string(),
        source: e,
    };
    let text = std::fs::read_to_string(path).map_err(|e| pack_err(Box::new(e)))?;
    parse_examples(&text).map_err(|e| match e {
        PromptError::Pack { source, .. } => pack_err(source),
        other => other,
    })
}

fn parse_examples(text: &str) -> Result<Vec<FewShotExample>, PromptError> {
    let examples: Vec<FewShotExample> =
        serde_json::from_str(text).map_err(|e| PromptError::Pack {
            path: String::new(),
            source: Box::new(e),
        })?;
    for ex in &examples {
        ex.validate()?;
    }
    Ok(examples)
}

/// The five-example pack shipped with the crate.
pub fn default_examples() -> Vec<FewShotExample> {
    parse_examples(include_str!("../data/fewshot_default.json"))
        .expect("packaged few-shot pack is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    ZeroShot,
    FewShot,
    Instruct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub kind: PromptKind,
    #[serde(default)]
    pub examples: Vec<FewShotExample>,
    pub top_k: u32,
    pub max_len: u32,
}

impl PromptSpec {
    pub fn zero_shot() -> Self {
        Self {
            kind: PromptKind::ZeroShot,
            examples: Vec::new(),
            top_k: DEFAULT_TOP_K,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn instruct(top_k: u32, max_len: u32) -> Self {
        Self {
            kind: PromptKind::Instruct,
            top_k,
            max_len,
            ..Self::zero_shot()
        }
    }

    pub fn few_shot(examples: Vec<FewShotExample>) -> Result<Self, PromptError> {
        let spec = Self {
            kind: PromptKind::FewShot,
            examples,
            ..Self::zero_shot()
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Few-shot spec over `count` examples drawn from `pool` in a seeded order.
    /// The order is fixed for every caption of the run.
    pub fn few_shot_seeded<R: Rng + ?Sized>(
        pool: &[FewShotExample],
        count: usize,
        rng: &mut R,
    ) -> Result<Self, PromptError> {
        let mut chosen = pool.to_vec();
        chosen.shuffle(rng);
        chosen.truncate(count);
        Self::few_shot(chosen)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.top_k == 0 || self.max_len == 0 {
            return Err(PromptError::InvalidInput(
                "top_k and max_len must be positive".into(),
            ));
        }
        if self.kind == PromptKind::FewShot && self.examples.is_empty() {
            return Err(PromptError::InvalidInput(
                "few-shot prompts need at least one example".into(),
            ));
        }
        Ok(())
    }

    pub fn render(&self, caption: &str) -> Result<String, PromptError> {
        match self.kind {
            PromptKind::ZeroShot => build_zero_shot(caption),
            PromptKind::FewShot => build_few_shot(&self.examples, caption),
            PromptKind::Instruct => build_instruct(caption, self.top_k, self.max_len),
        }
    }
}

fn require_caption(caption: &str) -> Result<(), PromptError> {
    if caption.trim().is_empty() {
        return Err(PromptError::InvalidInput("caption is empty".into()));
    }
    Ok(())
}

pub fn build_zero_shot(caption: &str) -> Result<String, PromptError> {
    require_caption(caption)?;
    Ok(format!("what is the intention of {caption}?"))
}

pub fn build_few_shot(examples: &[FewShotExample], caption: &str) -> Result<String, PromptError> {
    if examples.is_empty() {
        return Err(PromptError::InvalidInput(
            "few-shot prompts need at least one example".into(),
        ));
    }
    require_caption(caption)?;
    let mut lines = Vec::with_capacity(examples.len() * 2 + 2);
    for ex in examples {
        lines.push(format!("Input: {}", ex.input));
        lines.push(format!("Output: {}", ex.output));
    }
    lines.push(format!("Input: {caption}"));
    lines.push("Output:".to_string());
    Ok(lines.join("\n"))
}

pub fn build_instruct(caption: &str, top_k: u32, max_len: u32) -> Result<String, PromptError> {
    require_caption(caption)?;
    Ok(format!(
        "what is the intention of {caption}? Provide {top_k} answers within {max_len}"
    ))
}

/// Interrogative openings recognised by [`question_to_declarative`]. A match
/// must be followed by whitespace, so "why do" never swallows "why does".
const QUESTION_PREFIXES: &[&str] = &[
    "why is", "why was", "why did", "why does", "why do", "why are", "how did", "how does",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Declarative {
    pub text: String,
    /// No known prefix matched; `text` is the question with its `?` removed.
    pub fallback: bool,
}

fn is_verb_like(token: &str) -> bool {
    let t = token.to_lowercase();
    (t.len() > 4 && t.ends_with("ing")) || (t.len() > 3 && t.ends_with("ed"))
}

/// Rule-based question → statement rewrite used to build few-shot inputs
/// from existing QA pairs.
pub fn question_to_declarative(question: &str) -> Declarative {
    let trimmed = question.trim();
    let body = trimmed.trim_end_matches('?').trim_end();
    let matched = QUESTION_PREFIXES.iter().find(|p| {
        body.get(..p.len()).is_some_and(|head| head.eq_ignore_ascii_case(p))
            && body[p.len()..].chars().next().is_some_and(char::is_whitespace)
    });
    let Some(prefix) = matched else {
        return Declarative {
            text: body.to_string(),
            fallback: true,
        };
    };

    let rest: Vec<&str> = body[prefix.len()..].split_whitespace().collect();
    let verb = prefix.split_whitespace().nth(1).unwrap_or_default();
    let mut tokens: Vec<String> = rest.iter().map(|t| t.to_string()).collect();
    if matches!(verb, "is" | "was" | "are") {
        // Insert the copula after the word run that precedes the first verb-like
        // token; without such a token, after the first two words.
        let at = tokens
            .iter()
            .enumerate()
            .skip(1)
            .find(|(_, t)| is_verb_like(t))
            .map(|(i, _)| i)
            .unwrap_or_else(|| tokens.len().min(2));
        tokens.insert(at, verb.to_string());
    }
    let mut text = tokens.join(" ");
    if let Some(first) = text.chars().next() {
        text = first.to_lowercase().chain(text.chars().skip(1)).collect();
    }
    Declarative {
        text,
        fallback: false,
    }
}

/// Converts `(question, answer)` pairs into few-shot examples, skipping
/// questions the rewrite cannot handle.
pub fn examples_from_qa<Q: AsRef<str>, A: AsRef<str>>(pairs: &[(Q, A)]) -> Vec<FewShotExample> {
    pairs
        .iter()
        .filter_map(|(q, a)| {
            let decl = question_to_declarative(q.as_ref());
            if decl.fallback {
                return None;
            }
            FewShotExample::new(decl.text, a.as_ref().trim()).ok()
        })
        .collect()
}
