//! Synthesis of causal "why" multiple-choice QA data from video captions.
//!
//! Captions are turned into intention prompts, sent to a completion
//! provider, cleaned, pooled by embedding similarity and assembled into
//! five-option records. A linear hinge-loss probe checks the result is
//! learnable. Every stage is seeded from one master seed.

pub mod analytics;
pub mod config;
pub mod dataset;
pub mod extraction;
pub mod lm_backend;
pub mod manifest;
pub mod pipeline;
pub mod pooling;
pub mod prompting;
pub mod question_gen;
pub mod seeding;
pub mod trainer;

pub use config::PipelineConfig;
pub use dataset::McqRecord;
pub use extraction::{CaptionRecord, IntentionCandidate, ResponseRecord};
pub use lm_backend::{
    CompletionProvider, CompletionRequest, CompletionResponse, EmbeddingProvider, EmbeddingVector,
    LmError,
};
pub use pipeline::PipelineError;
pub use pooling::{PoolAssignment, PoolConfig};
pub use prompting::PromptSpec;
pub use trainer::{LinearScorer, TrainConfig};
