//! Distractor pools.
//!
//! All intention responses are clustered on their L2-normalised embeddings
//! (spherical k-means with k-means++ seeding). An answer's distractors come
//! from its own pool, topped up from the pools with the nearest centroids
//! when its pool is too small.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm_backend::EmbeddingVector;
use crate::seeding::rng_from_seed;

pub const DEFAULT_NUM_DISTRACTORS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum PoolError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("corpus has {distinct} distinct texts; need at least {needed}")]
    InsufficientCorpus { distinct: usize, needed: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    /// `None` picks [`default_num_pools`] for the corpus size.
    pub num_pools: Option<usize>,
    pub num_distractors: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            num_pools: None,
            num_distractors: DEFAULT_NUM_DISTRACTORS,
            seed: 0,
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }
}

impl PoolConfig {
    pub fn resolved_pools(&self, num_responses: usize) -> usize {
        self.num_pools
            .unwrap_or_else(|| default_num_pools(num_responses))
    }

    fn validate(&self, num_responses: usize) -> Result<usize, PoolError> {
        let k = self.resolved_pools(num_responses);
        if k == 0 {
            return Err(PoolError::InvalidConfig("num_pools must be >= 1".into()));
        }
        if self.num_distractors == 0 {
            return Err(PoolError::InvalidConfig("num_distractors must be >= 1".into()));
        }
        if self.max_iterations == 0 || self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(PoolError::InvalidConfig(
                "max_iterations and tolerance must be positive".into(),
            ));
        }
        if k > num_responses {
            return Err(PoolError::InvalidConfig(format!(
                "num_pools {k} exceeds the {num_responses} responses"
            )));
        }
        Ok(k)
    }
}

/// `max(2, floor(sqrt(n / 2)))`, capped at `n`.
pub fn default_num_pools(num_responses: usize) -> usize {
    let k = ((num_responses as f64 / 2.0).sqrt().floor() as usize).max(2);
    k.min(num_responses).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolAssignment {
    /// Pool id of each response, by response index.
    pub assignment: Vec<usize>,
    /// Unit-length centroid of each pool.
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Sum of squared distances to the assigned centroid, recorded after
    /// every assignment step.
    pub objective_history: Vec<f64>,
}

impl PoolAssignment {
    pub fn num_pools(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut pools = vec![Vec::new(); self.num_pools()];
        for (i, &p) in self.assignment.iter().enumerate() {
            pools[p].push(i);
        }
        pools
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn normalize_in_place(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // Every point coincides with a chosen centre.
            rng.gen_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Spherical k-means over normalised embeddings. Deterministic in
/// `(embeddings, cfg)`.
pub fn cluster_responses(
    embeddings: &[EmbeddingVector],
    cfg: &PoolConfig,
) -> Result<PoolAssignment, PoolError> {
    if embeddings.is_empty() {
        return Err(PoolError::InvalidInput("no embeddings to cluster".into()));
    }
    let dim = embeddings[0].dim();
    let mut points = Vec::with_capacity(embeddings.len());
    for (i, e) in embeddings.iter().enumerate() {
        if e.dim() != dim {
            return Err(PoolError::InvalidInput(format!(
                "embedding {i} has dim {} but expected {dim}",
                e.dim()
            )));
        }
        let mut v = e.values.clone();
        if !normalize_in_place(&mut v) {
            return Err(PoolError::InvalidInput(format!(
                "embedding {i} is zero and cannot be normalised"
            )));
        }
        points.push(v);
    }
    let k = cfg.validate(points.len())?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut centroids = kmeans_pp(&points, k, &mut rng);
    let mut assignment = vec![0usize; points.len()];
    let mut objective_history = Vec::new();
    let mut iterations = 0;

    loop {
        iterations += 1;
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            assignment[i] = c;
            dists[i] = d;
        }
        objective_history.push(dists.iter().sum());

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }

        let mut reseeded = false;
        let mut taken: HashSet<usize> = HashSet::new();
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let new = if counts[c] == 0 {
                // Re-seed an empty pool at the point farthest from its centroid,
                // provided that point is not already on top of its centroid.
                let far = (0..points.len())
                    .filter(|i| !taken.contains(i) && counts[assignment[*i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
                match far {
                    Some(i) if dists[i] > 0.0 => {
                        taken.insert(i);
                        counts[assignment[i]] -= 1;
                        reseeded = true;
                        points[i].clone()
                    }
                    _ => centroids[c].clone(),
                }
            } else {
                let mut m = sums[c].clone();
                if !normalize_in_place(&mut m) {
                    // Antipodal members cancel out; keep the old centre.
                    m = centroids[c].clone();
                }
                m
            };
            shift = shift.max(sq_dist(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }

        if (!reseeded && shift < cfg.tolerance) || iterations >= cfg.max_iterations {
            break;
        }
    }

    // Final assignment against the final centroids.
    for (i, p) in points.iter().enumerate() {
        assignment[i] = nearest(p, &centroids).0;
    }

    Ok(PoolAssignment {
        assignment,
        centroids,
        iterations,
        objective_history,
    })
}

fn norm_text(s: &str) -> String {
    s.trim().to_lowercase()
}

/// One sampled distractor and where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorPick {
    pub response_index: usize,
    pub pool_id: usize,
    /// Drawn from a neighbouring pool because the answer's own pool ran short.
    pub fallback: bool,
}

/// Precomputed pool membership and neighbour order for repeated sampling.
pub struct DistractorSampler<'a> {
    texts: &'a [String],
    pools: &'a PoolAssignment,
    members: Vec<Vec<usize>>,
    /// For each pool, the other pools ordered by centroid distance.
    neighbours: Vec<Vec<usize>>,
    num_distractors: usize,
}

impl<'a> DistractorSampler<'a> {
    pub fn new(
        texts: &'a [String],
        pools: &'a PoolAssignment,
        num_distractors: usize,
    ) -> Result<Self, PoolError> {
        if pools.assignment.len() != texts.len() {
            return Err(PoolError::InvalidInput(format!(
                "pool assignment covers {} responses but there are {} texts",
                pools.assignment.len(),
                texts.len()
            )));
        }
        let distinct: HashSet<String> = texts.iter().map(|t| norm_text(t)).collect();
        if distinct.len() < num_distractors + 1 {
            return Err(PoolError::InsufficientCorpus {
                distinct: distinct.len(),
                needed: num_distractors + 1,
            });
        }
        let k = pools.num_pools();
        let neighbours = (0..k)
            .map(|p| {
                let mut others: Vec<usize> = (0..k).filter(|&q| q != p).collect();
                others.sort_by(|&a, &b| {
                    sq_dist(&pools.centroids[p], &pools.centroids[a])
                        .total_cmp(&sq_dist(&pools.centroids[p], &pools.centroids[b]))
                        .then(a.cmp(&b))
                });
                others
            })
            .collect();
        Ok(Self {
            texts,
            pools,
            members: pools.members(),
            neighbours,
            num_distractors,
        })
    }

    /// Distinct eligible texts of `pool`, one representative (lowest index) each.
    fn eligible(&self, pool: usize, excluded: &HashSet<String>) -> Vec<usize> {
        let mut seen = HashSet::new();
        self.members[pool]
            .iter()
            .copied()
            .filter(|&i| {
                let t = norm_text(&self.texts[i]);
                !excluded.contains(&t) && seen.insert(t)
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        answer_index: usize,
        rng: &mut R,
    ) -> Result<Vec<DistractorPick>, PoolError> {
        if answer_index >= self.texts.len() {
            return Err(PoolError::InvalidInput(format!(
                "answer index {answer_index} out of range"
            )));
        }
        let home = self.pools.assignment[answer_index];
        let mut excluded: HashSet<String> = HashSet::new();
        excluded.insert(norm_text(&self.texts[answer_index]));
        let mut picks = Vec::with_capacity(self.num_distractors);

        for (pool, fallback) in std::iter::once((home, false))
            .chain(self.neighbours[home].iter().map(|&p| (p, true)))
        {
            let need = self.num_distractors - picks.len();
            if need == 0 {
                break;
            }
            let eligible = self.eligible(pool, &excluded);
            let chosen: Vec<usize> = if eligible.len() <= need {
                eligible
            } else {
                sample(rng, eligible.len(), need)
                    .into_iter()
                    .map(|j| eligible[j])
                    .collect()
            };
            for i in chosen {
                excluded.insert(norm_text(&self.texts[i]));
                picks.push(DistractorPick {
                    response_index: i,
                    pool_id: pool,
                    fallback,
                });
            }
        }
        if picks.len() < self.num_distractors {
            return Err(PoolError::InsufficientCorpus {
                distinct: picks.len() + 1,
                needed: self.num_distractors + 1,
            });
        }
        Ok(picks)
    }

    pub fn text(&self, pick: &DistractorPick) -> &str {
        &self.texts[pick.response_index]
    }
}

/// Sample `cfg.num_distractors` distinct texts for the answer at `answer_index`.
pub fn sample_distractors<R: Rng + ?Sized>(
    answer_index: usize,
    texts: &[String],
    pools: &PoolAssignment,
    cfg: &PoolConfig,
    rng: &mut R,
) -> Result<Vec<String>, PoolError> {
    let sampler = DistractorSampler::new(texts, pools, cfg.num_distractors)?;
    Ok(sampler
        .sample(answer_index, rng)?
        .iter()
        .map(|p| sampler.text(p).to_string())
        .collect())
}

/// Fisher-Yates shuffle of `[answer] ++ distractors`; returns the options and
/// the answer's position.
pub fn assemble_options<R: Rng + ?Sized>(
    answer: &str,
    distractors: &[String],
    rng: &mut R,
) -> Result<(Vec<String>, usize), PoolError> {
    let mut options: Vec<String> = std::iter::once(answer.to_string())
        .chain(distractors.iter().cloned())
        .collect();
    let mut seen = HashSet::new();
    for o in &options {
        if !seen.insert(norm_text(o)) {
            return Err(PoolError::InvalidInput(format!("duplicate option {o:?}")));
        }
    }
    let mut correct = 0;
    for i in (1..options.len()).rev() {
        let j = rng.gen_range(0..=i);
        options.swap(i, j);
        if correct == i {
            correct = j;
        } else if correct == j {
            correct = i;
        }
    }
    Ok((options, correct))
}
