//! Pipeline configuration.
//!
//! A single master seed derives every per-stage random stream, and the
//! canonical JSON form of the whole config is hashed into each manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::FilterConfig;
use crate::lm_backend::{
    CompletionProvider, CompletionRequest, EmbeddingProvider, FixtureTable, HttpCompletionProvider,
    HttpEmbeddingProvider, HttpSettings, MockCompletionProvider, MockEmbeddingProvider, RetryPolicy,
    DEFAULT_MAX_TOKENS, DEFAULT_NUM_CHOICES, DEFAULT_TEMPERATURE,
};
use crate::pooling::{PoolConfig, DEFAULT_NUM_DISTRACTORS};
use crate::prompting::{
    default_examples, load_examples, PromptKind, PromptSpec, DEFAULT_FEW_SHOT_COUNT,
    DEFAULT_MAX_LEN, DEFAULT_TOP_K,
};
use crate::question_gen::{CompletionCorrector, GrammarCorrector, RuleCorrector};
use crate::seeding::{derive_seed, rng_from_seed, sha256_hex};
use crate::trainer::TrainConfig;

/// Stage labels used to derive per-stage seeds from the master seed.
pub mod stage {
    pub const PROMPT: &str = "prompt";
    pub const COMPLETION: &str = "completion";
    pub const EMBEDDING: &str = "embedding";
    pub const POOL: &str = "pool";
    pub const QUESTION: &str = "question";
    pub const DISTRACTOR: &str = "distractor";
    pub const SPLIT: &str = "split";
    pub const TRAIN: &str = "train";
    pub const ALL: [&str; 8] = [
        PROMPT, COMPLETION, EMBEDDING, POOL, QUESTION, DISTRACTOR, SPLIT, TRAIN,
    ];
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub base_url: String,
    pub completion_model: String,
    pub embedding_model: String,
    /// Fixture table for the mock completion provider; the packaged table when unset.
    pub mock_fixtures: Option<PathBuf>,
    pub embedding_dim: usize,
    pub embed_batch_size: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            base_url: "http://localhost:8000/v1".into(),
            completion_model: "gpt-3.5-turbo-instruct".into(),
            embedding_model: "text-embedding-3-small".into(),
            mock_fixtures: None,
            embedding_dim: crate::lm_backend::mock::DEFAULT_EMBEDDING_DIM,
            embed_batch_size: 256,
            timeout_secs: 60,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub kind: PromptKind,
    /// JSON list of `{input, output}`; the packaged pack when unset.
    pub examples_path: Option<PathBuf>,
    pub num_examples: usize,
    pub top_k: u32,
    pub max_len: u32,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            kind: PromptKind::FewShot,
            examples_path: None,
            num_examples: DEFAULT_FEW_SHOT_COUNT,
            top_k: DEFAULT_TOP_K,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionConfig {
    pub temperature: f64,
    pub max_tokens: u32,
    pub num_choices: u32,
    pub stop_sequences: Option<Vec<String>>,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            num_choices: DEFAULT_NUM_CHOICES,
            stop_sequences: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolSettings {
    pub num_pools: Option<usize>,
    pub num_distractors: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for PoolSettings {
    fn default() -> Self {
        Self {
            num_pools: None,
            num_distractors: DEFAULT_NUM_DISTRACTORS,
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub margin: f64,
    pub plateau_patience: usize,
    pub lr_decay_factor: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            max_epochs: d.max_epochs,
            margin: d.margin,
            plateau_patience: d.plateau_patience,
            lr_decay_factor: d.lr_decay_factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectorKind {
    Rules,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectorConfig {
    pub kind: CorrectorKind,
    /// Model served by the provider's completion endpoint for `http`.
    pub model: String,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        Self {
            kind: CorrectorKind::Rules,
            model: "t5-base-grammar-correction".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub max_in_flight: usize,
    pub split_first_size: usize,
    pub provider: ProviderConfig,
    pub prompt: PromptConfig,
    pub completion: CompletionConfig,
    pub filter: FilterConfig,
    pub pool: PoolSettings,
    pub train: TrainSettings,
    pub corrector: CorrectorConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            max_in_flight: 8,
            split_first_size: 10_000,
            provider: ProviderConfig::default(),
            prompt: PromptConfig::default(),
            completion: CompletionConfig::default(),
            filter: FilterConfig::default(),
            pool: PoolSettings::default(),
            train: TrainSettings::default(),
            corrector: CorrectorConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let read_err = |message: String| ConfigError::Read {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| read_err(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_in_flight == 0 {
            return Err(ConfigError::Invalid("max_in_flight must be >= 1".into()));
        }
        if self.provider.embedding_dim == 0 || self.provider.embed_batch_size == 0 {
            return Err(ConfigError::Invalid(
                "embedding_dim and embed_batch_size must be >= 1".into(),
            ));
        }
        if self.pool.num_distractors != DEFAULT_NUM_DISTRACTORS {
            return Err(ConfigError::Invalid(format!(
                "num_distractors must be {DEFAULT_NUM_DISTRACTORS} for five-option records"
            )));
        }
        if self.prompt.num_examples == 0 && self.prompt.kind == PromptKind::FewShot {
            return Err(ConfigError::Invalid("few-shot prompts need num_examples >= 1".into()));
        }
        self.completion_defaults()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Canonical serialised form; field order is fixed by the struct definitions.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    pub fn stage_seeds(&self) -> BTreeMap<String, u64> {
        stage::ALL
            .iter()
            .map(|s| (s.to_string(), self.stage_seed(s)))
            .collect()
    }

    pub fn completion_defaults(&self) -> CompletionRequest {
        CompletionRequest {
            prompt: String::new(),
            temperature: self.completion.temperature,
            max_tokens: self.completion.max_tokens,
            num_choices: self.completion.num_choices,
            stop_sequences: self.completion.stop_sequences.clone(),
            seed: Some(self.stage_seed(stage::COMPLETION)),
        }
    }

    pub fn pool_config(&self) -> PoolConfig {
        PoolConfig {
            num_pools: self.pool.num_pools,
            num_distractors: self.pool.num_distractors,
            seed: self.stage_seed(stage::POOL),
            max_iterations: self.pool.max_iterations,
            tolerance: self.pool.tolerance,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            max_epochs: self.train.max_epochs,
            margin: self.train.margin,
            seed: self.stage_seed(stage::TRAIN),
            plateau_patience: self.train.plateau_patience,
            lr_decay_factor: self.train.lr_decay_factor,
        }
    }

    /// Prompt spec for the run. Few-shot example order is drawn once from the
    /// prompt stream.
    pub fn prompt_spec(&self) -> Result<PromptSpec, ConfigError> {
        let invalid = |e: crate::prompting::PromptError| ConfigError::Invalid(e.to_string());
        let spec = match self.prompt.kind {
            PromptKind::ZeroShot => PromptSpec {
                top_k: self.prompt.top_k,
                max_len: self.prompt.max_len,
                ..PromptSpec::zero_shot()
            },
            PromptKind::Instruct => PromptSpec::instruct(self.prompt.top_k, self.prompt.max_len),
            PromptKind::FewShot => {
                let pool = match &self.prompt.examples_path {
                    Some(p) => load_examples(p).map_err(invalid)?,
                    None => default_examples(),
                };
                let mut rng = rng_from_seed(self.stage_seed(stage::PROMPT));
                PromptSpec::few_shot_seeded(&pool, self.prompt.num_examples, &mut rng)
                    .map_err(invalid)?
            }
        };
        spec.validate().map_err(invalid)?;
        Ok(spec)
    }

    fn http_settings(&self, model: &str) -> HttpSettings {
        let mut s = HttpSettings::new(&self.provider.base_url, model)
            .with_env_key()
            .with_retry(self.provider.retry.clone());
        s.timeout_secs = self.provider.timeout_secs;
        s
    }

    pub fn completion_provider(&self) -> Result<Arc<dyn CompletionProvider>, ConfigError> {
        Ok(match self.provider.kind {
            ProviderKind::Mock => {
                let table = match &self.provider.mock_fixtures {
                    Some(p) => FixtureTable::load(p).map_err(|e| ConfigError::Read {
                        path: p.display().to_string(),
                        message: e.to_string(),
                    })?,
                    None => FixtureTable::packaged(),
                };
                Arc::new(MockCompletionProvider::new(
                    table,
                    self.stage_seed(stage::COMPLETION),
                ))
            }
            ProviderKind::Http => Arc::new(
                HttpCompletionProvider::new(self.http_settings(&self.provider.completion_model))
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            ),
        })
    }

    pub fn embedding_provider(&self) -> Result<Arc<dyn EmbeddingProvider>, ConfigError> {
        Ok(match self.provider.kind {
            ProviderKind::Mock => Arc::new(MockEmbeddingProvider::new(
                self.provider.embedding_dim,
                self.stage_seed(stage::EMBEDDING),
            )),
            ProviderKind::Http => Arc::new(
                HttpEmbeddingProvider::new(self.http_settings(&self.provider.embedding_model))
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            ),
        })
    }

    pub fn corrector(&self) -> Result<Arc<dyn GrammarCorrector>, ConfigError> {
        Ok(match self.corrector.kind {
            CorrectorKind::Rules => Arc::new(RuleCorrector),
            CorrectorKind::Http => Arc::new(CompletionCorrector::new(
                HttpCompletionProvider::new(self.http_settings(&self.corrector.model))
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            )),
        })
    }
}
