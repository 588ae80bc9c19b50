//! Independent oracles and data generators shared by the integration suites.
#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cake_forge::EmbeddingVector;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Adjusted Rand index by brute-force pair counting over all `n(n-1)/2` pairs.
pub fn ari_pair_counting(truth: &[usize], pred: &[usize]) -> f64 {
    assert_eq!(truth.len(), pred.len());
    let (mut both, mut only_truth, mut only_pred, mut neither) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..truth.len() {
        for j in (i + 1)..truth.len() {
            match (truth[i] == truth[j], pred[i] == pred[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_truth += 1.0,
                (false, true) => only_pred += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let num = 2.0 * (both * neither - only_truth * only_pred);
    let den = (both + only_truth) * (only_truth + neither) + (both + only_pred) * (only_pred + neither);
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub struct Blobs {
    pub points: Vec<EmbeddingVector>,
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub radius: f64,
}

impl Blobs {
    /// Smallest centre distance divided by the blob radius.
    pub fn separation_ratio(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.centers.len() {
            for j in (i + 1)..self.centers.len() {
                best = best.min(dist(&self.centers[i], &self.centers[j]));
            }
        }
        best / self.radius
    }

    /// Largest distance of any point from its own centre.
    pub fn max_spread(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.labels)
            .map(|(p, &l)| dist(&p.values, &self.centers[l]))
            .fold(0.0, f64::max)
    }
}

/// `k` blobs of `n` points total around random unit centres, each point within
/// `radius` of its centre. Labels are interleaved so input order carries no signal.
pub fn blobs(seed: u64, n: usize, dim: usize, k: usize, radius: f64) -> Blobs {
    let mut r = rng(seed);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| random_unit(&mut r, dim)).collect();
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i * 7 + i / 3) % k;
        let dir = random_unit(&mut r, dim);
        let len = radius * r.gen::<f64>();
        let p: Vec<f64> = centers[label].iter().zip(&dir).map(|(c, d)| c + len * d).collect();
        points.push(EmbeddingVector::new(p));
        labels.push(label);
    }
    Blobs { points, labels, centers, radius }
}

/// Multi-class hinge loss evaluated straight from its definition.
pub fn hinge_oracle(scores: &[f64], correct: usize, margin: f64) -> f64 {
    let mut total = 0.0;
    for (j, s) in scores.iter().enumerate() {
        if j != correct {
            let v = margin + s - scores[correct];
            if v > 0.0 {
                total += v;
            }
        }
    }
    total
}

/// Central finite-difference gradient of [`hinge_oracle`].
pub fn hinge_fd(scores: &[f64], correct: usize, margin: f64, h: f64) -> Vec<f64> {
    (0..scores.len())
        .map(|i| {
            let mut up = scores.to_vec();
            let mut down = scores.to_vec();
            up[i] += h;
            down[i] -= h;
            (hinge_oracle(&up, correct, margin) - hinge_oracle(&down, correct, margin)) / (2.0 * h)
        })
        .collect()
}

const WORDS: &[&str] = &[
    "goal", "friend", "car", "dinner", "music", "park", "family", "money", "game", "door",
    "water", "guitar", "ball", "teacher", "crowd", "photo", "garden", "house", "street", "bike",
];

/// Random answers with known token counts in `1..=max_len`. Some tokens carry
/// edge punctuation, which the tokenizer strips without dropping the token.
pub fn answers_with_lengths(seed: u64, n: usize, max_len: usize) -> (Vec<String>, Vec<usize>) {
    let mut r = rng(seed);
    let mut texts = Vec::with_capacity(n);
    let mut lens = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.gen_range(1..=max_len);
        let words: Vec<String> = (0..len)
            .map(|_| {
                let w = WORDS[r.gen_range(0..WORDS.len())];
                match r.gen_range(0..6) {
                    0 => format!("{w}!"),
                    1 => format!("\"{w}\""),
                    2 => w.to_uppercase(),
                    _ => w.to_string(),
                }
            })
            .collect();
        let sep = if r.gen_bool(0.2) { "  " } else { " " };
        texts.push(words.join(sep));
        lens.push(len);
    }
    (texts, lens)
}

/// CDF by counting, for each distinct length `L`, the answers with length <= `L`.
pub fn cdf_oracle(lengths: &[usize]) -> Vec<(usize, f64)> {
    let mut distinct: Vec<usize> = lengths.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    distinct
        .into_iter()
        .map(|l| {
            let c = lengths.iter().filter(|&&x| x <= l).count();
            (l, c as f64 / lengths.len() as f64)
        })
        .collect()
}

/// Synthetic caption corpus with unique ids and captions.
pub fn synthetic_captions(n: usize) -> Vec<cake_forge::CaptionRecord> {
    let subjects = ["a man", "a woman", "a boy", "a girl", "an old man", "a chef", "a dog", "a player"];
    let actions = [
        "kicking ball", "fixing a car", "cooking dinner", "playing guitar", "running in a park",
        "painting a wall", "riding a bike", "washing dishes", "reading a book", "dancing on stage",
    ];
    let places = ["at home", "outside", "in the city", "near a lake", "in a gym"];
    (0..n)
        .map(|i| cake_forge::CaptionRecord {
            video_id: format!("syn{i:06}"),
            caption: format!(
                "{} is {} {} take {}",
                subjects[i % subjects.len()],
                actions[(i / subjects.len()) % actions.len()],
                places[(i / 80) % places.len()],
                i
            ),
        })
        .collect()
}
