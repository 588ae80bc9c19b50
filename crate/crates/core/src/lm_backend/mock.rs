//! Deterministic offline providers.
//!
//! [`MockCompletionProvider`] answers from a keyword fixture table and pads
//! with a generic answer bank; [`MockEmbeddingProvider`] is a seeded
//! bag-of-words random projection. Both are pure functions of their inputs
//! and seed.

use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    CompletionProvider, CompletionRequest, CompletionResponse, EmbeddingProvider, EmbeddingVector,
    LmError,
};
use crate::analytics::tokenize;
use crate::seeding::{rng_from_seed, stable_hash};

pub const DEFAULT_EMBEDDING_DIM: usize = 64;

/// Answers drawn for prompts that match no fixture, and to pad short fixture lists.
/// A few entries are deliberately noisy so the cleaning and filtering rules get exercised.
const GENERIC_BANK: &[&str] = &[
    "to have fun",
    "to relax after a long day",
    "to entertain the audience",
    "to show off a new skill",
    "to make some money",
    "to stay healthy",
    "to impress friends",
    "to win the competition",
    "to learn something new",
    "to help other people",
    "to practice for an upcoming event",
    "to record a video for social media",
    "to get some exercise",
    "to celebrate a special occasion",
    "to teach the viewers",
    "to pass the time",
    "to share the experience with family",
    "to express their feelings",
    "to attract attention",
    "to prepare for the next step",
    "to finish the task quickly",
    "to demonstrate how it works",
    "to keep everyone safe",
    "to advertise a product",
    "to test the equipment",
    "1. to meet new people",
    "\"to enjoy the moment\"",
    "Output: to earn a living",
    "I don't know.",
    "to",
];

const SHARED_PROMPT_MARKER: &str = "what is the intention of ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub keyword: String,
    pub answers: Vec<String>,
}

/// Ordered keyword → answers table. The first keyword found in the prompt's
/// subject wins.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FixtureTable {
    pub entries: Vec<FixtureEntry>,
}

impl FixtureTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, keyword: impl Into<String>, answers: &[&str]) -> Self {
        self.entries.push(FixtureEntry {
            keyword: keyword.into(),
            answers: answers.iter().map(|a| a.to_string()).collect(),
        });
        self
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// The fixture table packaged with the crate.
    pub fn packaged() -> Self {
        serde_json::from_str(include_str!("../../data/mock_fixtures.json"))
            .expect("packaged fixture table is valid JSON")
    }

    fn lookup(&self, subject: &str) -> Option<&FixtureEntry> {
        let subject = subject.to_lowercase();
        self.entries
            .iter()
            .find(|e| subject.contains(&e.keyword.to_lowercase()))
    }
}

/// The part of a prompt that describes the event being asked about: the last
/// `Input:` line of a few-shot prompt, the `{caption}` of a question-style
/// prompt, or the whole prompt.
pub fn prompt_subject(prompt: &str) -> &str {
    if let Some(line) = prompt.lines().rev().find_map(|l| l.strip_prefix("Input:")) {
        return line.trim();
    }
    if let Some(start) = prompt.find(SHARED_PROMPT_MARKER) {
        let rest = &prompt[start + SHARED_PROMPT_MARKER.len()..];
        return rest.rsplit_once('?').map_or(rest, |(s, _)| s).trim();
    }
    prompt.trim()
}

#[derive(Debug, Clone)]
pub struct MockCompletionProvider {
    fixtures: FixtureTable,
    default_seed: u64,
    id: String,
}

impl MockCompletionProvider {
    pub fn new(fixtures: FixtureTable, default_seed: u64) -> Self {
        Self {
            fixtures,
            default_seed,
            id: format!("mock-completion:seed={default_seed}"),
        }
    }

    fn generic(&self, prompt: &str, seed: u64, slot: u32) -> String {
        let h = stable_hash(&[prompt.as_bytes(), &seed.to_le_bytes(), &slot.to_le_bytes()]);
        GENERIC_BANK[(h % GENERIC_BANK.len() as u64) as usize].to_string()
    }

    /// Pure function of `(prompt, seed, num_choices)`.
    pub fn answer(&self, prompt: &str, seed: u64, num_choices: u32) -> Vec<String> {
        let fixed = self
            .fixtures
            .lookup(prompt_subject(prompt))
            .map(|e| e.answers.as_slice())
            .unwrap_or(&[]);
        (0..num_choices)
            .map(|slot| match fixed.get(slot as usize) {
                Some(a) => a.clone(),
                None => self.generic(prompt, seed, slot),
            })
            .collect()
    }
}

#[async_trait]
impl CompletionProvider for MockCompletionProvider {
    fn id(&self) -> &str {
        &self.id
    }

    async fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LmError> {
        let seed = req.seed.unwrap_or(self.default_seed);
        Ok(CompletionResponse {
            choices: self.answer(&req.prompt, seed, req.num_choices),
            provider_id: self.id.clone(),
            raw_latency: Duration::ZERO,
        })
    }
}

/// Seeded hash projection: each token maps to a fixed pseudo-random direction
/// and a text embeds as the sum of its token directions. Texts sharing words
/// land close together, which is enough structure for pooling.
#[derive(Debug, Clone)]
pub struct MockEmbeddingProvider {
    dim: usize,
    seed: u64,
    id: String,
}

impl MockEmbeddingProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self {
            dim,
            seed,
            id: format!("mock-embedding:dim={dim}:seed={seed}"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn direction(&self, key: &str, out: &mut [f64]) {
        let mut rng = rng_from_seed(stable_hash(&[&self.seed.to_le_bytes(), key.as_bytes()]));
        for v in out.iter_mut() {
            *v += rng.gen_range(-1.0..1.0);
        }
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; self.dim];
        let tokens = tokenize(text);
        if tokens.is_empty() {
            self.direction(&format!("\u{0}raw:{text}"), &mut values);
        }
        for tok in &tokens {
            self.direction(tok, &mut values);
        }
        EmbeddingVector::new(values)
    }
}

impl Default for MockEmbeddingProvider {
    fn default() -> Self {
        Self::new(DEFAULT_EMBEDDING_DIM, 0)
    }
}

#[async_trait]
impl EmbeddingProvider for MockEmbeddingProvider {
    fn id(&self) -> &str {
        &self.id
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, LmError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm_backend::{complete, embed};

    fn kicking() -> MockCompletionProvider {
        MockCompletionProvider::new(
            FixtureTable::new().with("kicking ball", &["to score a goal", "1. to win the game"]),
            7,
        )
    }

    #[tokio::test]
    async fn fixture_lookup_drives_first_choices() {
        let p = kicking();
        let req = CompletionRequest {
            seed: Some(7),
            ..CompletionRequest::new("what is the intention of soccer players kicking ball?")
        };
        let resp = complete(&p, &req).await.unwrap();
        assert_eq!(resp.choices.len(), 5);
        assert_eq!(resp.choices[0], "to score a goal");
        assert_eq!(resp.choices[1], "1. to win the game");
    }

    #[tokio::test]
    async fn num_choices_respected() {
        let p = kicking();
        for n in [1, 3, 5, 9] {
            let req = CompletionRequest {
                num_choices: n,
                ..CompletionRequest::new("a cat sleeping")
            };
            assert_eq!(complete(&p, &req).await.unwrap().choices.len(), n as usize);
        }
    }

    #[test]
    fn answers_are_pure() {
        let p = kicking();
        assert_eq!(p.answer("a dog running", 3, 5), p.answer("a dog running", 3, 5));
        assert_ne!(p.answer("a dog running", 3, 5), p.answer("a dog running", 4, 5));
    }

    #[test]
    fn subject_extraction() {
        assert_eq!(prompt_subject("what is the intention of a man running?"), "a man running");
        assert_eq!(
            prompt_subject("what is the intention of a man running? Provide 5 answers within 20"),
            "a man running"
        );
        assert_eq!(
            prompt_subject("Input: a dog\nOutput: to eat\nInput: kicking ball\nOutput:"),
            "kicking ball"
        );
        // Few-shot example inputs must not trigger a fixture meant for the caption.
        let p = kicking();
        let prompt = "Input: kids kicking ball\nOutput: to play\nInput: a man cooking\nOutput:";
        assert_ne!(p.answer(prompt, 7, 1)[0], "to score a goal");
    }

    #[tokio::test]
    async fn embeddings_deterministic_and_sized() {
        let p = MockEmbeddingProvider::new(64, 1);
        let texts = vec!["to score a goal".to_string(), "to score a goal".to_string(), "x".into()];
        let v = embed(&p, &texts).await.unwrap();
        assert_eq!(v[0], v[1]);
        assert!(v.iter().all(|e| e.dim() == 64));
        assert!((v[0].cosine(&v[0]).unwrap() - 1.0).abs() < 1e-6);
    }

    #[tokio::test]
    async fn empty_text_rejected() {
        let p = MockEmbeddingProvider::default();
        let err = embed(&p, &["ok".into(), "  ".into()]).await.unwrap_err();
        assert!(matches!(err, LmError::InvalidRequest(_)));
        assert!(embed(&p, &[]).await.is_err());
    }

    #[test]
    fn packaged_fixtures_parse() {
        assert!(!FixtureTable::packaged().entries.is_empty());
    }
}
