//! Library results checked against brute-force oracles that live here.

mod common;

use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use rand::Rng;

use cake_forge::analytics::{length_cdf, tokenize, top_words};
use cake_forge::pooling::{cluster_responses, default_num_pools, DistractorSampler, PoolConfig};
use cake_forge::trainer::hinge_loss;

use common::*;

#[test]
fn ari_oracle_self_checks() {
    let truth = [0, 0, 1, 1, 2, 2];
    assert_eq!(ari_pair_counting(&truth, &[5, 5, 3, 3, 9, 9]), 1.0);
    // Known value: sklearn's adjusted_rand_score([0,0,1,1],[0,0,1,2]) = 0.5714...
    let v = ari_pair_counting(&[0, 0, 1, 1], &[0, 0, 1, 2]);
    assert!((v - 4.0 / 7.0).abs() < 1e-12, "{v}");
}

#[test]
fn two_antipodal_blobs_recovered() {
    let mut r = rng(3);
    let dir = random_unit(&mut r, 32);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for i in 0..120 {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let noise = random_unit(&mut r, 32);
        let p: Vec<f64> = dir.iter().zip(&noise).map(|(d, n)| sign * d + 0.05 * n).collect();
        points.push(cake_forge::EmbeddingVector::new(p));
        labels.push(i % 2);
    }
    let cfg = PoolConfig { num_pools: Some(2), seed: 1, ..PoolConfig::default() };
    let pools = cluster_responses(&points, &cfg).unwrap();
    assert_eq!(ari_pair_counting(&labels, &pools.assignment), 1.0);
}

#[test]
fn blobs_recovered_for_several_k() {
    for (k, seed) in [(2, 10u64), (4, 11), (6, 12)] {
        let b = blobs(seed, 60 * k, 48, k, 0.08);
        assert!(b.separation_ratio() >= 5.0);
        let cfg = PoolConfig { num_pools: Some(k), seed, ..PoolConfig::default() };
        let pools = cluster_responses(&b.points, &cfg).unwrap();
        assert_eq!(ari_pair_counting(&b.labels, &pools.assignment), 1.0, "k={k}");
    }
}

#[test]
fn default_pool_heuristic_matches_formula() {
    for n in 1..5000usize {
        let mut k = 2;
        while (k + 1) * (k + 1) * 2 <= n {
            k += 1;
        }
        assert_eq!(default_num_pools(n), k.min(n), "n={n}");
    }
}

#[test]
fn hinge_subgradient_matches_finite_differences() {
    let mut r = rng(99);
    let mut checked = 0;
    while checked < 500 {
        let scores: Vec<f64> = (0..5).map(|_| r.gen_range(-3.0..3.0)).collect();
        let c = r.gen_range(0..5);
        let margin = r.gen_range(0.1..2.0);
        if (0..5).any(|j| j != c && (margin + scores[j] - scores[c]).abs() < 1e-4) {
            continue;
        }
        let (loss, grad) = hinge_loss(&scores, c, margin);
        assert!((loss - hinge_oracle(&scores, c, margin)).abs() < 1e-12);
        let fd = hinge_fd(&scores, c, margin, 1e-6);
        for (a, f) in grad.iter().zip(&fd) {
            let scale = a.abs().max(f.abs());
            let err = if scale == 0.0 { 0.0 } else { (a - f).abs() / scale };
            assert!(err < 1e-5, "grad {grad:?} fd {fd:?}");
        }
        checked += 1;
    }
}

#[test]
fn length_cdf_matches_counting_oracle() {
    let (texts, lens) = answers_with_lengths(5, 3_000, 25);
    for (t, &l) in texts.iter().zip(&lens) {
        assert_eq!(tokenize(t).len(), l, "{t:?}");
    }
    assert_eq!(length_cdf(&texts).unwrap().points, cdf_oracle(&lens));
}

#[test]
fn cdf_small_example() {
    let cdf = length_cdf(&["to win", "to eat", "to score a goal"]).unwrap();
    assert_eq!(cdf.points.len(), 2);
    assert_eq!(cdf.points[0].0, 2);
    assert!((cdf.points[0].1 - 0.667).abs() < 1e-3);
    assert_eq!(cdf.points[1], (4, 1.0));
}

/// Counts by a naive nested scan, then a full sort.
fn top_words_oracle(texts: &[String], k: usize, stop: &HashSet<String>) -> Vec<(String, usize)> {
    let all: Vec<String> = texts.iter().flat_map(|t| tokenize(t)).filter(|w| !stop.contains(w)).collect();
    let mut vocab: Vec<String> = all.clone();
    vocab.sort();
    vocab.dedup();
    let mut counted: Vec<(String, usize)> = vocab
        .into_iter()
        .map(|w| {
            let c = all.iter().filter(|x| **x == w).count();
            (w, c)
        })
        .collect();
    counted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    counted.into_iter().take(k).collect()
}

#[test]
fn top_words_matches_oracle() {
    let (texts, _) = answers_with_lengths(8, 500, 12);
    let stop: HashSet<String> = ["goal", "car"].iter().map(|s| s.to_string()).collect();
    for k in [1, 3, 9, 15, 100] {
        assert_eq!(top_words(&texts, k, &stop).unwrap(), top_words_oracle(&texts, k, &stop));
    }
    let ex = top_words(&["to score a goal", "to win a game"], 3, &["to", "a"].iter().map(|s| s.to_string()).collect()).unwrap();
    assert_eq!(ex, vec![("game".into(), 1), ("goal".into(), 1), ("score".into(), 1)]);
}

#[test]
fn distractors_come_from_home_pool_then_nearest() {
    let b = blobs(21, 60, 16, 3, 0.05);
    let cfg = PoolConfig { num_pools: Some(3), seed: 2, ..PoolConfig::default() };
    let pools = cluster_responses(&b.points, &cfg).unwrap();
    let texts: Vec<String> = (0..60).map(|i| format!("text {i}")).collect();
    let sampler = DistractorSampler::new(&texts, &pools, 4).unwrap();
    let mut r = rng(4);
    for i in 0..60 {
        let picks = sampler.sample(i, &mut r).unwrap();
        assert_eq!(picks.len(), 4);
        for p in &picks {
            assert_eq!(p.pool_id, pools.assignment[i]);
            assert_eq!(pools.assignment[p.response_index], p.pool_id);
            assert!(!p.fallback);
            assert_ne!(p.response_index, i);
        }
    }
}

#[test]
fn uniform_distractor_sampling_within_pool() {
    let b = blobs(30, 12, 8, 2, 0.02);
    let cfg = PoolConfig { num_pools: Some(2), seed: 0, ..PoolConfig::default() };
    let pools = cluster_responses(&b.points, &cfg).unwrap();
    let texts: Vec<String> = (0..12).map(|i| format!("t{i}")).collect();
    let sampler = DistractorSampler::new(&texts, &pools, 4).unwrap();
    let answer = 0;
    let mut counts: HashMap<usize, usize> = HashMap::new();
    let mut r = rng(77);
    let draws = 20_000;
    for _ in 0..draws {
        for p in sampler.sample(answer, &mut r).unwrap() {
            *counts.entry(p.response_index).or_default() += 1;
        }
    }
    // Each of the other m pool members should appear with probability 4 / m.
    let m = pools.assignment.iter().filter(|&&p| p == pools.assignment[answer]).count() - 1;
    assert!(m > 4);
    assert_eq!(counts.len(), m);
    for (_, c) in counts {
        let f = c as f64 / draws as f64;
        assert!((f - 4.0 / m as f64).abs() < 0.02, "{f}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hinge_invariant_under_shift(scores in proptest::collection::vec(-5.0f64..5.0, 5), c in 0usize..5, shift in -10.0f64..10.0) {
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let (a, ga) = hinge_loss(&scores, c, 1.0);
        let (b, gb) = hinge_loss(&shifted, c, 1.0);
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert_eq!(ga, gb);
    }

    #[test]
    fn clustering_is_a_partition(seed in 0u64..1000, k in 1usize..6) {
        let b = blobs(seed, 40, 8, 3, 0.3);
        let cfg = PoolConfig { num_pools: Some(k), seed, ..PoolConfig::default() };
        let pools = cluster_responses(&b.points, &cfg).unwrap();
        prop_assert_eq!(pools.assignment.len(), 40);
        prop_assert!(pools.assignment.iter().all(|&p| p < k));
        for c in &pools.centroids {
            let n: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-6 || n == 0.0);
        }
        prop_assert_eq!(cluster_responses(&b.points, &cfg).unwrap(), pools);
    }
}
