use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ooskge::training::{adagrad_step, train_epoch_oos, AdaGrad, ADAGRAD_EPS};
use ooskge::{EmbeddingModel, KnowledgeGraph, TrainConfig};

fn random_graph(seed: u64, entities: usize, relations: usize, triples: usize) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut labeled = Vec::new();
    while labeled.len() < triples {
        let t = (
            rng.gen_range(0..entities),
            rng.gen_range(0..relations),
            rng.gen_range(0..entities),
        );
        if seen.insert(t) {
            labeled.push((format!("e{}", t.0), format!("r{}", t.1), format!("e{}", t.2)));
        }
    }
    KnowledgeGraph::from_labeled(labeled.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())))
        .unwrap()
}

// Uniform corruption is unfiltered, so a sampled negative is a true triple
// with probability about (degree + 1) / |V|. A perfect matching keeps that
// rate at its minimum for 20 triples.
#[test]
fn loss_falls_below_a_tenth_on_a_toy_graph() {
    let labeled: Vec<(String, String)> = (0..20).map(|i| (format!("a{i}"), format!("b{i}"))).collect();
    let g = KnowledgeGraph::from_labeled(labeled.iter().map(|(a, b)| (a.as_str(), "r", b.as_str()))).unwrap();
    let cfg = TrainConfig {
        lr: 0.1,
        psi: 0.0,
        dim: 32,
        epochs: 200,
        batch_size: 20,
        ..TrainConfig::default()
    };
    let mut m = EmbeddingModel::for_graph(&g, cfg.dim, cfg.seed).unwrap();
    let mut state = AdaGrad::new(&m);
    let mut losses = Vec::new();
    for epoch in 0..cfg.epochs {
        losses.push(train_epoch_oos(&g, &mut m, &mut state, &cfg, epoch).unwrap().loss);
    }
    let (first, last) = (losses[0], *losses.last().unwrap());
    assert!(last < 0.1 * first, "initial {first}, final {last}");
    assert!(m.is_finite());
}

#[test]
fn branch_counts_match_binomial_expectations() {
    // 5000 positives with one corruption each: 10 000 branch draws.
    let g = random_graph(2, 500, 10, 5000);
    let cfg = TrainConfig {
        psi: 0.5,
        dim: 4,
        batch_size: 1000,
        ..TrainConfig::default()
    };
    let mut m = EmbeddingModel::for_graph(&g, cfg.dim, cfg.seed).unwrap();
    let mut state = AdaGrad::new(&m);
    let stats = train_epoch_oos(&g, &mut m, &mut state, &cfg, 0).unwrap();
    let total = (stats.aggregated_head + stats.aggregated_tail + stats.lookup_both) as f64;
    assert_eq!(total, 10_000.0);
    for (count, p) in [
        (stats.aggregated_head, 0.25),
        (stats.aggregated_tail, 0.25),
        (stats.lookup_both, 0.5),
    ] {
        let sigma = (total * p * (1.0 - p)).sqrt();
        let z = (count as f64 - total * p) / sigma;
        assert!(z.abs() <= 3.0, "count {count}, expected {}, z {z}", total * p);
    }
}

#[test]
fn identical_configs_give_identical_checkpoints() {
    let g = random_graph(3, 30, 3, 80);
    let cfg = TrainConfig {
        dim: 8,
        epochs: 20,
        batch_size: 16,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = ooskge::train(&g, &cfg, None).unwrap();
    let b = ooskge::train(&g, &cfg, None).unwrap();
    assert_eq!(a.model.checkpoint_bytes(), b.model.checkpoint_bytes());
    let other = ooskge::train(&g, &TrainConfig { seed: 10, ..cfg }, None).unwrap();
    assert_ne!(a.model.checkpoint_bytes(), other.model.checkpoint_bytes());
}

#[test]
fn accumulators_never_decrease_during_training() {
    let g = random_graph(4, 20, 2, 40);
    let cfg = TrainConfig {
        dim: 6,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut m = EmbeddingModel::for_graph(&g, cfg.dim, cfg.seed).unwrap();
    let mut state = AdaGrad::new(&m);
    let snapshot = |s: &AdaGrad| -> Vec<f64> {
        g.entities()
            .labels()
            .iter()
            .flat_map(|l| s.entity_acc(g.entity_id(l).unwrap()).to_vec())
            .collect()
    };
    let mut prev = snapshot(&state);
    for epoch in 0..10 {
        train_epoch_oos(&g, &mut m, &mut state, &cfg, epoch).unwrap();
        let next = snapshot(&state);
        assert!(prev.iter().zip(&next).all(|(a, b)| *a >= 0.0 && b >= a));
        prev = next;
    }
}

proptest! {
    #[test]
    fn adagrad_matches_closed_form(
        grads in prop::collection::vec(-5.0f64..5.0, 1..20),
        lr in 0.001f64..1.0,
    ) {
        let (mut acc, mut theta) = ([0.0], [0.0]);
        let (mut sum_sq, mut want) = (0.0, 0.0);
        for g in &grads {
            adagrad_step(&mut acc, &mut theta, &[*g], lr, ADAGRAD_EPS);
            sum_sq += g * g;
            want -= lr * g / (sum_sq.sqrt() + ADAGRAD_EPS);
        }
        prop_assert!((acc[0] - sum_sq).abs() <= 1e-12 * sum_sq.max(1.0));
        prop_assert!((theta[0] - want).abs() <= 1e-12 * want.abs().max(1.0));
    }
}
