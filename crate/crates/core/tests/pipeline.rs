use ooskge::evaluation::{baseline_oov, baseline_popularity};
use ooskge::synthetic::{block_graph, BlockGraphSpec};
use ooskge::{
    build_split, evaluate, read_split, train, write_split, Aggregator, AggregatorKind,
    EmbeddingModel, TrainConfig,
};

#[test]
fn split_train_save_load_evaluate() {
    let g = block_graph(&BlockGraphSpec::default(), 1).unwrap();
    let split = build_split(&g, 0.2, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_split(&split, dir.path()).unwrap();
    let reread = read_split(dir.path()).unwrap();
    assert_eq!(reread.stats, split.stats);
    assert_eq!(reread.train.triples(), split.train.triples());

    let cfg = TrainConfig {
        dim: 16,
        epochs: 50,
        batch_size: 64,
        eval_every: 10,
        ..TrainConfig::default()
    };
    let out = train(&reread.train, &cfg, Some(&reread.valid)).unwrap();
    assert_eq!(out.log.len(), 50);
    assert!(out.log.iter().filter(|l| l.valid_mrr.is_some()).count() >= 5);

    let path = dir.path().join("checkpoint.bin");
    out.model.save(&path).unwrap();
    let loaded = EmbeddingModel::load(&path).unwrap();
    assert!(loaded.is_bound_to(&reread.train));

    let agg = cfg.aggregator().unwrap();
    let report = evaluate(&reread.test, &loaded, &agg).unwrap();
    assert_eq!(report.queries(), reread.stats.test_queries);
    assert!(report.mrr > 0.0 && report.mrr <= 1.0);
    assert!(report.hits1 <= report.hits3 && report.hits3 <= report.hits10);
    assert_eq!(report.bins.iter().map(|b| b.queries).sum::<usize>(), report.queries());

    // f32 storage rounds the tables; rankings may shift only on near-ties.
    let direct = evaluate(&reread.test, &out.model, &agg).unwrap();
    assert!((direct.mrr - report.mrr).abs() < 1e-3);
}

#[test]
fn every_aggregator_and_baseline_evaluates() {
    let g = block_graph(&BlockGraphSpec::default(), 2).unwrap();
    let split = build_split(&g, 0.2, 2).unwrap();
    let m = EmbeddingModel::for_graph(&split.train, 8, 0).unwrap();
    for kind in AggregatorKind::ALL {
        let agg = Aggregator::new(kind, 0.01).unwrap();
        let r = evaluate(&split.test, &m, &agg).unwrap();
        assert_eq!(r.queries(), split.stats.test_queries, "{kind}");
    }
    let pop = baseline_popularity(&split.train, &split.test, 0).unwrap();
    let oov = baseline_oov(&m, &split.test).unwrap();
    assert_eq!(pop.queries(), oov.queries());
}
