//! Linear multi-choice scorer trained with a multi-class hinge loss.
//!
//! Each option is featurised as `[question embedding ; answer embedding]`
//! and scored by `w · x + b`. The prediction is the highest-scoring option.
//! The learning rate is halved (by default) whenever the epoch loss stops
//! improving for `plateau_patience` epochs.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm_backend::EmbeddingVector;
use crate::seeding::rng_from_seed;

const MIN_LEARNING_RATE: f64 = 1e-6;
const SCORER_MAGIC: &str = "# cake-forge linear scorer v1";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("malformed scorer file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub margin: f64,
    pub seed: u64,
    pub plateau_patience: usize,
    pub lr_decay_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_epochs: 25,
            margin: 1.0,
            seed: 0,
            plateau_patience: 2,
            lr_decay_factor: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if [self.learning_rate, self.margin].iter().any(|v| v.is_nan() || *v <= 0.0) {
            return Err(TrainError::InvalidConfig(
                "learning_rate and margin must be positive".into(),
            ));
        }
        if self.max_epochs == 0 || self.plateau_patience == 0 {
            return Err(TrainError::InvalidConfig(
                "max_epochs and plateau_patience must be positive".into(),
            ));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(TrainError::InvalidConfig(
                "lr_decay_factor must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// `[question ; answer]`.
pub fn featurize(question: &EmbeddingVector, answer: &EmbeddingVector) -> Result<Vec<f64>, TrainError> {
    if question.dim() != answer.dim() {
        return Err(TrainError::DimMismatch(format!(
            "question dim {} vs answer dim {}",
            question.dim(),
            answer.dim()
        )));
    }
    Ok(question.values.iter().chain(&answer.values).copied().collect())
}

/// Sum-over-violators multi-class hinge loss:
/// `Σ_{j≠c} max(0, margin + s_j − s_c)`, with its subgradient w.r.t. the scores.
pub fn hinge_loss(scores: &[f64], correct: usize, margin: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; scores.len()];
    let mut loss = 0.0;
    let sc = scores[correct];
    for (j, &s) in scores.iter().enumerate() {
        if j == correct {
            continue;
        }
        let viol = margin + s - sc;
        if viol > 0.0 {
            loss += viol;
            grad[j] += 1.0;
            grad[correct] -= 1.0;
        }
    }
    (loss, grad)
}

/// Features of every option of one question plus the correct option index.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub options: Vec<Vec<f64>>,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScorer {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearScorer {
    pub fn zeros(feature_dim: usize) -> Self {
        Self {
            weights: vec![0.0; feature_dim],
            bias: 0.0,
        }
    }

    /// Embedding dimension this scorer expects (half the feature length).
    pub fn embedding_dim(&self) -> usize {
        self.weights.len() / 2
    }

    pub fn score(&self, features: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(features)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias
    }

    pub fn scores(&self, ex: &TrainExample) -> Vec<f64> {
        ex.options.iter().map(|o| self.score(o)).collect()
    }

    /// Highest score, ties to the lowest index.
    pub fn predict(&self, ex: &TrainExample) -> usize {
        let scores = self.scores(ex);
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<(), TrainError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{SCORER_MAGIC}")?;
        writeln!(f, "dim={}", self.embedding_dim())?;
        writeln!(f, "bias={}", self.bias)?;
        writeln!(f, "config_hash={config_hash}")?;
        for w in &self.weights {
            writeln!(f, "{w}")?;
        }
        f.flush()?;
        Ok(())
    }

    /// Returns the scorer and the config hash stored with it.
    pub fn load(path: &Path) -> Result<(Self, String), TrainError> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let mut next = |what: &str| -> Result<String, TrainError> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| TrainError::Format(format!("missing {what}")))
        };
        if next("header")? != SCORER_MAGIC {
            return Err(TrainError::Format("bad magic line".into()));
        }
        let field = |line: String, key: &str| -> Result<String, TrainError> {
            line.strip_prefix(&format!("{key}="))
                .map(str::to_string)
                .ok_or_else(|| TrainError::Format(format!("expected {key}=")))
        };
        let dim: usize = field(next("dim")?, "dim")?
            .parse()
            .map_err(|e| TrainError::Format(format!("dim: {e}")))?;
        let bias: f64 = field(next("bias")?, "bias")?
            .parse()
            .map_err(|e| TrainError::Format(format!("bias: {e}")))?;
        let hash = field(next("config_hash")?, "config_hash")?;
        let mut weights = Vec::with_capacity(2 * dim);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            weights.push(
                line.trim()
                    .parse()
                    .map_err(|e| TrainError::Format(format!("weight {}: {e}", weights.len())))?,
            );
        }
        if weights.len() != 2 * dim {
            return Err(TrainError::Format(format!(
                "expected {} weights, found {}",
                2 * dim,
                weights.len()
            )));
        }
        Ok((Self { weights, bias }, hash))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean hinge loss over the dataset after the epoch's updates.
    pub mean_loss: f64,
    pub accuracy: f64,
    /// Rate used during the epoch.
    pub learning_rate: f64,
}

pub fn write_log_csv(log: &[EpochLog], path: &Path) -> Result<(), TrainError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,mean_loss,accuracy,learning_rate")?;
    for e in log {
        writeln!(f, "{},{},{},{}", e.epoch, e.mean_loss, e.accuracy, e.learning_rate)?;
    }
    f.flush()?;
    Ok(())
}

fn check_dataset(data: &[TrainExample]) -> Result<usize, TrainError> {
    let first = data.first().ok_or(TrainError::EmptyDataset)?;
    let dim = first
        .options
        .first()
        .map(Vec::len)
        .ok_or_else(|| TrainError::DimMismatch("record 0 has no options".into()))?;
    for (i, ex) in data.iter().enumerate() {
        if ex.correct >= ex.options.len() {
            return Err(TrainError::DimMismatch(format!(
                "record {i}: correct index {} with {} options",
                ex.correct,
                ex.options.len()
            )));
        }
        if ex.options.iter().any(|o| o.len() != dim) {
            return Err(TrainError::DimMismatch(format!(
                "record {i} has features of a different length than {dim}"
            )));
        }
    }
    Ok(dim)
}

fn mean_loss(scorer: &LinearScorer, data: &[TrainExample], margin: f64) -> f64 {
    data.iter()
        .map(|ex| hinge_loss(&scorer.scores(ex), ex.correct, margin).0)
        .sum::<f64>()
        / data.len() as f64
}

/// Plain SGD from zero weights with a seeded per-epoch shuffle.
pub fn train(
    data: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<(LinearScorer, Vec<EpochLog>), TrainError> {
    cfg.validate()?;
    let dim = check_dataset(data)?;
    let mut scorer = LinearScorer::zeros(dim);
    let mut rng = rng_from_seed(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut lr = cfg.learning_rate;
    let mut best = f64::INFINITY;
    let mut bad_epochs = 0;
    let mut log = Vec::with_capacity(cfg.max_epochs);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let ex = &data[i];
            let (loss, grad) = hinge_loss(&scorer.scores(ex), ex.correct, cfg.margin);
            if loss == 0.0 {
                continue;
            }
            for (g, x) in grad.iter().zip(&ex.options) {
                if *g != 0.0 {
                    scorer
                        .weights
                        .iter_mut()
                        .zip(x)
                        .for_each(|(w, xi)| *w -= lr * g * xi);
                    scorer.bias -= lr * g;
                }
            }
        }
        let loss = mean_loss(&scorer, data, cfg.margin);
        log.push(EpochLog {
            epoch,
            mean_loss: loss,
            accuracy: evaluate(&scorer, data)?,
            learning_rate: lr,
        });
        if loss < best {
            best = loss;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.plateau_patience {
                lr *= cfg.lr_decay_factor;
                bad_epochs = 0;
            }
        }
        if lr < MIN_LEARNING_RATE {
            break;
        }
    }
    Ok((scorer, log))
}

pub fn evaluate(scorer: &LinearScorer, data: &[TrainExample]) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let correct = data
        .iter()
        .filter(|ex| scorer.predict(ex) == ex.correct)
        .count();
    Ok(correct as f64 / data.len() as f64)
}
