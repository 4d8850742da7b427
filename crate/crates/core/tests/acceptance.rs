//! Acceptance suite. Runs each criterion in sequence, prints one line per
//! criterion and exits non-zero if any fails.

use std::collections::{BTreeSet, HashSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ooskge::aggregation::Aggregator;
use ooskge::evaluation::{evaluate, rank_answer, Query, QueryDirection, RankingReport};
use ooskge::numerics::{ridge_solve, Mat};
use ooskge::synthetic::{block_graph, BlockGraphSpec};
use ooskge::training::{
    batch_objective, train_epoch_oos, train_epoch_transductive, AdaGrad, Branch, Labeled,
    LabeledBatch,
};
use ooskge::{
    build_split, train, write_split, Direction, EmbeddingModel, EntityId, KnowledgeGraph,
    Neighbor, RelationId, TrainConfig, Triple, Vocab,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut out = f();
    let elapsed = start.elapsed();
    if let Some(limit) = limit {
        if elapsed > limit {
            out.pass = false;
            out.detail.push_str(&format!("; over time limit {limit:?}"));
        }
    }
    println!(
        "criterion {id} [{name}]: {} ({}; {:.2?})",
        if out.pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed
    );
    out.pass
}

fn random_graph(rng: &mut impl Rng, entities: usize, relations: usize, triples: usize) -> KnowledgeGraph {
    let triples = triples.min(entities * entities * relations / 2);
    let mut seen = HashSet::new();
    let mut labeled = Vec::new();
    while labeled.len() < triples {
        let h = rng.gen_range(0..entities);
        let r = rng.gen_range(0..relations);
        let t = rng.gen_range(0..entities);
        if seen.insert((h, r, t)) {
            labeled.push((format!("e{h}"), format!("r{r}"), format!("e{t}")));
        }
    }
    KnowledgeGraph::from_labeled(labeled.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())))
        .unwrap()
}

// Criterion 1 oracle: minimize ||Ax - b||² + λ||x||² by forming the normal
// equations and eliminating with partial pivoting.
fn elimination_minimizer(a: &[Vec<f64>], b: &[f64], lambda: f64) -> Vec<f64> {
    let d = a[0].len();
    let mut m = vec![vec![0.0; d + 1]; d];
    for (i, row) in m.iter_mut().enumerate() {
        for j in 0..d {
            row[j] = a.iter().map(|x| x[i] * x[j]).sum::<f64>() + if i == j { lambda } else { 0.0 };
        }
        row[d] = a.iter().zip(b).map(|(x, y)| x[i] * y).sum();
    }
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&p, &q| m[p][col].abs().total_cmp(&m[q][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        for r in col + 1..d {
            let f = m[r][col] / m[col][col];
            for c in col..=d {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; d];
    for r in (0..d).rev() {
        let s: f64 = (r + 1..d).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][d] - s) / m[r][r];
    }
    x
}

fn ridge_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(1..=10);
        let d = rng.gen_range(1..=8);
        let a: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lambda = rng.gen_range(0.01..2.0);
        let got = ridge_solve(&Mat::from_rows(&a).unwrap(), &b, lambda).unwrap();
        let want = elimination_minimizer(&a, &b, lambda);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!("200 instances, max abs error {worst:.2e}"),
    }
}

fn gradient_checks() -> Outcome {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut aggregation_only_rows = 0usize;
    for config in 0..100 {
        let (ne, nr, nt) = (rng.gen_range(4..10), rng.gen_range(1..4), rng.gen_range(6..20));
        let g = random_graph(&mut rng, ne, nr, nt);
        let dim = rng.gen_range(2..7);
        let m = EmbeddingModel::for_graph(&g, dim, config).unwrap();
        let agg = if rng.gen_bool(0.5) {
            Aggregator::er_avg()
        } else {
            Aggregator::e_avg()
        };
        let lambda_reg = rng.gen_range(0.0..0.1);
        let ne = g.num_entities() as u32;
        let mut batch = LabeledBatch::default();
        for _ in 0..rng.gen_range(1..6) {
            let pos = g.triples()[rng.gen_range(0..g.len())];
            batch.examples.push(Labeled { triple: pos, label: 1 });
            let e = EntityId(rng.gen_range(0..ne));
            let neg = if rng.gen_bool(0.5) {
                Triple::new(e, pos.rel, pos.tail)
            } else {
                Triple::new(pos.head, pos.rel, e)
            };
            batch.examples.push(Labeled { triple: neg, label: -1 });
        }
        let branches: Vec<Branch> = (0..batch.len())
            .map(|_| Branch::from_draw(rng.gen(), 0.8))
            .collect();
        let base = batch_objective(&g, &m, &agg, &batch, &branches, lambda_reg).unwrap();

        let looked_up: BTreeSet<EntityId> = batch
            .examples
            .iter()
            .zip(&branches)
            .flat_map(|(ex, br)| {
                let t = ex.triple;
                match br {
                    Branch::AggregateHead => vec![t.tail],
                    Branch::AggregateTail => vec![t.head],
                    Branch::LookupBoth => vec![t.head, t.tail],
                }
            })
            .collect();
        aggregation_only_rows += base
            .grads
            .entities
            .keys()
            .filter(|v| !looked_up.contains(v))
            .count();

        let loss_at = |m: &EmbeddingModel| batch_objective(&g, m, &agg, &batch, &branches, lambda_reg).unwrap().loss;
        let mut compare = |analytic: f64, plus: f64, minus: f64| {
            let fd = (plus - minus) / (2.0 * H);
            let rel = (fd - analytic).abs() / analytic.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
            checked += 1;
        };
        for (&v, grad) in &base.grads.entities {
            for i in 0..dim {
                let mut p = m.clone();
                p.entity_mut(v)[i] += H;
                let mut q = m.clone();
                q.entity_mut(v)[i] -= H;
                compare(grad[i], loss_at(&p), loss_at(&q));
            }
        }
        for (&r, grad) in &base.grads.relations {
            for i in 0..dim {
                let mut p = m.clone();
                p.relation_mut(r)[i] += H;
                let mut q = m.clone();
                q.relation_mut(r)[i] -= H;
                compare(grad[i], loss_at(&p), loss_at(&q));
            }
        }
    }
    Outcome {
        pass: worst <= 1e-4 && aggregation_only_rows > 0,
        detail: format!(
            "100 configs, {checked} coordinates, {aggregation_only_rows} aggregation-only rows, max rel error {worst:.2e}"
        ),
    }
}

fn algorithm_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let g = random_graph(&mut rng, 30, 4, 100);
    let cfg = TrainConfig {
        psi: 0.0,
        dim: 16,
        epochs: 50,
        batch_size: 16,
        neg_ratio: 2,
        seed: 7,
        ..TrainConfig::default()
    };
    let init = EmbeddingModel::for_graph(&g, cfg.dim, cfg.seed).unwrap();
    let (mut a, mut b) = (init.clone(), init);
    let (mut sa, mut sb) = (AdaGrad::new(&a), AdaGrad::new(&b));
    let mut losses_equal = true;
    for epoch in 0..cfg.epochs {
        let la = train_epoch_oos(&g, &mut a, &mut sa, &cfg, epoch).unwrap().loss;
        let lb = train_epoch_transductive(&g, &mut b, &mut sb, &cfg, epoch).unwrap();
        losses_equal &= la.to_bits() == lb.to_bits();
    }
    let same_bytes = a.checkpoint_bytes() == b.checkpoint_bytes();
    let same_f64 = a
        .entity_table()
        .iter()
        .chain(a.relation_table())
        .zip(b.entity_table().iter().chain(b.relation_table()))
        .all(|(x, y)| x.to_bits() == y.to_bits());
    Outcome {
        pass: same_bytes && same_f64 && losses_equal,
        detail: format!(
            "{} triples, 50 epochs: checkpoint bytes equal {same_bytes}, f64 tables equal {same_f64}, losses equal {losses_equal}",
            g.len()
        ),
    }
}

fn metric_oracle() -> Outcome {
    // d = 1 and a unit relation make every candidate's score its table value
    // (negated when the probe is -1). e_i = 40 - i for i < 40; e40..e42 tie e2.
    let mut values: Vec<f64> = (0..40).map(|i| 40.0 - i as f64).collect();
    values.extend([38.0; 3]);
    let entities = Vocab::from_labels((0..values.len()).map(|i| format!("e{i}"))).unwrap();
    let relations = Vocab::from_labels(["r"]).unwrap();
    let m = EmbeddingModel::from_tables(entities, relations, 1, values, vec![1.0]).unwrap();

    let e = |i: u32| EntityId(i);
    let query = |answer: u32, filtered: &[u32]| Query {
        entity: "x".into(),
        direction: QueryDirection::Tail,
        rel: RelationId(0),
        answer: e(answer),
        context: vec![Neighbor::new(Direction::Outgoing, RelationId(0), e(answer))],
        filtered: filtered.iter().map(|&i| e(i)).collect(),
    };
    // (query, probe, hand rank)
    let fixture = [
        (query(0, &[]), 1.0, 1),
        (query(1, &[]), 1.0, 2),
        // two above, three ties: 1 + 2 + 3/2
        (query(2, &[]), 1.0, 4),
        // ten above, three of them filtered
        (query(7, &[0, 1, 5]), 1.0, 8),
        (query(39, &[]), -1.0, 1),
        (
            Query {
                direction: QueryDirection::Head,
                ..query(38, &[])
            },
            -1.0,
            2,
        ),
        // eighteen above, three filtered
        (query(15, &[1, 2, 40]), 1.0, 16),
        (query(40, &[]), 1.0, 4),
        // thirty-three above, two filtered
        (query(30, &[0, 1]), 1.0, 32),
        // six above, five filtered
        (query(3, &[0, 1, 2, 40, 41]), 1.0, 2),
    ];
    let mut ranks = Vec::new();
    let mut mismatches = Vec::new();
    for (i, (q, probe, want)) in fixture.iter().enumerate() {
        let r = rank_answer(q, &[*probe], &m).unwrap();
        if r.rank != *want {
            mismatches.push(format!("query {i}: rank {} != {want}", r.rank));
        }
        ranks.push(r);
    }
    let report = RankingReport::from_ranks(ranks).unwrap();
    // ranks 1,2,4,8,1,2,16,4,32,2
    let (mrr, h1, h3, h10) = (4.21875 / 10.0, 0.2, 0.5, 0.8);
    let exact = report.mrr == mrr && report.hits1 == h1 && report.hits3 == h3 && report.hits10 == h10;

    let pair = RankingReport::from_ranks(
        [1, 4]
            .map(|rank| ooskge::evaluation::QueryRank {
                rank,
                candidates: 10,
                neighborhood_size: 1,
            })
            .to_vec(),
    )
    .unwrap();
    let pair_ok = pair.mrr == 0.625;
    Outcome {
        pass: mismatches.is_empty() && exact && pair_ok,
        detail: format!(
            "mrr {} hits@1 {} hits@3 {} hits@10 {}, ranks {{1,4}} mrr {}{}",
            report.mrr,
            report.hits1,
            report.hits3,
            report.hits10,
            pair.mrr,
            if mismatches.is_empty() {
                String::new()
            } else {
                format!("; {}", mismatches.join(", "))
            }
        ),
    }
}

fn split_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut violations = Vec::new();
    let mut built = 0;
    for case in 0..100u64 {
        let entities = rng.gen_range(10..60);
        let (relations, triples) = (rng.gen_range(1..6), rng.gen_range(entities..entities * 4));
        let g = random_graph(&mut rng, entities, relations, triples);
        let frac = rng.gen_range(0.1..0.5);
        let Ok(split) = build_split(&g, frac, case) else {
            continue;
        };
        built += 1;
        let train = &split.train;
        let mut fail = |what: &str| violations.push(format!("case {case}: {what}"));
        let train_entities: HashSet<&str> = train
            .triples()
            .iter()
            .flat_map(|t| [train.entity_label(t.head), train.entity_label(t.tail)])
            .collect();
        let train_relations: HashSet<RelationId> = train.triples().iter().map(|t| t.rel).collect();
        for group in split.all_groups() {
            if train.entity_id(&group.entity).is_some() || train_entities.contains(group.entity.as_str()) {
                fail("out-of-sample entity in train");
            }
            if group.len() < 2 {
                fail("group with fewer than two triples");
            }
            for n in &group.triples {
                // `other` is a train handle, so the triple has exactly one
                // out-of-sample endpoint unless `other` is itself held out.
                let other = train.entity_label(n.other);
                if split.all_groups().any(|h| h.entity == other) {
                    fail("triple with two out-of-sample entities");
                }
                if !train_entities.contains(other) {
                    fail("in-sample entity missing from train triples");
                }
                if !train_relations.contains(&n.rel) {
                    fail("relation missing from train triples");
                }
            }
        }
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        write_split(&split, dir_a.path()).unwrap();
        write_split(&build_split(&g, frac, case).unwrap(), dir_b.path()).unwrap();
        for file in ["train.txt", "valid.txt", "test.txt", "stats.txt"] {
            let a = std::fs::read(dir_a.path().join(file)).unwrap();
            let b = std::fs::read(dir_b.path().join(file)).unwrap();
            if a != b {
                fail(&format!("{file} differs between runs"));
            }
        }
    }
    Outcome {
        pass: violations.is_empty() && built >= 90,
        detail: format!(
            "{built}/100 graphs produced a split, {} violations{}",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    }
}

fn psi_effect() -> Outcome {
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..5u64 {
        let g = block_graph(&BlockGraphSpec::default(), seed).unwrap();
        let split = build_split(&g, 0.2, seed).unwrap();
        let mut mrr = [0.0; 2];
        for (slot, psi) in [0.0, 0.5].into_iter().enumerate() {
            let cfg = TrainConfig {
                psi,
                dim: 32,
                epochs: 500,
                batch_size: 64,
                seed,
                ..TrainConfig::default()
            };
            let out = train(&split.train, &cfg, Some(&split.valid)).unwrap();
            mrr[slot] = evaluate(&split.test, &out.model, &cfg.aggregator().unwrap()).unwrap().mrr;
        }
        if mrr[1] > mrr[0] {
            wins += 1;
        }
        rows.push(format!("{:.3}/{:.3}", mrr[0], mrr[1]));
    }
    Outcome {
        pass: wins >= 4,
        detail: format!("psi 0.5 wins on {wins}/5 seeds (psi0/psi0.5 MRR: {})", rows.join(" ")),
    }
}

fn single_neighbor_cosine() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for case in 0..200u64 {
        let g = random_graph(&mut rng, 8, 3, 12);
        let m = EmbeddingModel::for_graph(&g, rng.gen_range(1..40), case).unwrap();
        let t = g.triples()[rng.gen_range(0..g.len())];
        let n = Neighbor::new(Direction::Outgoing, t.rel, t.tail);
        let z = Aggregator::er_avg().aggregate(&[n], &m).unwrap();
        let target: Vec<f64> = m
            .lookup_relation(t.rel)
            .unwrap()
            .iter()
            .zip(m.lookup_entity(t.tail).unwrap())
            .map(|(a, b)| a * b)
            .collect();
        let dot: f64 = z.iter().zip(&target).map(|(a, b)| a * b).sum();
        let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let cos = dot / (norm(&z) * norm(&target));
        worst = worst.max((cos - 1.0).abs());
    }
    Outcome {
        pass: worst <= 1e-9,
        detail: format!("200 cases, max |cos - 1| {worst:.2e}"),
    }
}

fn random_model_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let g = random_graph(&mut rng, 400, 30, 2400);
    let split = build_split(&g, 0.2, 3).unwrap();
    let m = EmbeddingModel::for_graph(&split.train, 32, 5).unwrap();
    let groups: Vec<_> = split.all_groups().cloned().collect();
    let report = evaluate(&groups, &m, &Aggregator::er_avg()).unwrap();
    // Uniform rank over n candidates: E[1/R] = H_n / n, E[1/R²] = H2_n / n.
    let (mut mean, mut var) = (0.0, 0.0);
    for r in &report.ranks {
        let n = r.candidates;
        let h1: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
        let h2: f64 = (1..=n).map(|k| 1.0 / (k * k) as f64).sum();
        let e = h1 / n as f64;
        mean += e;
        var += h2 / n as f64 - e * e;
    }
    let q = report.ranks.len() as f64;
    let expected = mean / q;
    let sigma = var.sqrt() / q;
    let z = (report.mrr - expected) / sigma;
    Outcome {
        pass: z.abs() <= 3.0,
        detail: format!(
            "{} queries, MRR {:.5} vs expected {expected:.5} (sigma {sigma:.5}, z {z:+.2})",
            report.ranks.len(),
            report.mrr
        ),
    }
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let results = [
        run(1, "ridge solve vs elimination oracle", Some(secs(1)), ridge_oracle),
        run(2, "gradient vs finite differences", Some(secs(10)), gradient_checks),
        run(3, "psi = 0 reduces to transductive training", Some(secs(30)), algorithm_reduction),
        run(4, "metric oracle", None, metric_oracle),
        run(5, "split invariants and determinism", Some(secs(30)), split_invariants),
        run(6, "directional psi effect", Some(secs(300)), psi_effect),
        run(7, "single-neighbor ERAvg cosine", None, single_neighbor_cosine),
        run(8, "random-model sanity", None, random_model_sanity),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
