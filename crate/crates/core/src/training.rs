//! Mini-batch DistMult training with aggregation-aware epochs.
//!
//! Each labeled triple in a batch picks one of three branches from a uniform
//! draw `u`: `u < ψ/2` embeds the head by aggregating its other triples,
//! `ψ/2 <= u < ψ` does the same for the tail, and otherwise both sides are
//! looked up. With `ψ = 0` every triple takes the lookup branch and an epoch is
//! ordinary transductive training.
//!
//! The loss of a batch is `Σ softplus(-l·φ) + λ Σ ‖θ‖²`, where the L2 sum runs
//! over the table rows looked up in the batch (each counted once). Parameters
//! are updated with per-element AdaGrad.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{Aggregator, AggregatorKind, RowGrad};
use crate::error::{Error, Result};
use crate::evaluation;
use crate::graph::{EntityId, KnowledgeGraph, Neighbor, RelationId, Triple};
use crate::model::EmbeddingModel;
use crate::numerics;
use crate::rng::{self, Stream};
use crate::split::OosGroup;

pub const ADAGRAD_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub lambda_reg: f64,
    pub neg_ratio: usize,
    pub psi: f64,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub aggregator: AggregatorKind,
    /// Ridge regularizer for the least-squares aggregators; falls back to
    /// `lambda_reg` when unset.
    pub agg_lambda: Option<f64>,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            lambda_reg: 0.001,
            neg_ratio: 1,
            psi: 0.5,
            dim: 200,
            epochs: 1000,
            batch_size: 1000,
            seed: 0,
            aggregator: AggregatorKind::ErAvg,
            agg_lambda: None,
            eval_every: 100,
        }
    }
}

pub const CONFIG_KEYS: [&str; 11] = [
    "lr",
    "lambda",
    "neg_ratio",
    "psi",
    "dim",
    "epochs",
    "batch_size",
    "seed",
    "aggregator",
    "agg_lambda",
    "eval_every",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda_reg));
        }
        if self.neg_ratio == 0 {
            return bad("neg_ratio must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.psi) {
            return bad(format!("psi must lie in [0, 1], got {}", self.psi));
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        self.aggregator()?;
        Ok(())
    }

    pub fn aggregator(&self) -> Result<Aggregator> {
        Aggregator::new(self.aggregator, self.agg_lambda.unwrap_or(self.lambda_reg))
    }

    /// Sets one `key=value` field.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "lr" => self.lr = num(key, value)?,
            "lambda" => self.lambda_reg = num(key, value)?,
            "neg_ratio" => self.neg_ratio = num(key, value)?,
            "psi" => self.psi = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "aggregator" => self.aggregator = value.parse()?,
            "agg_lambda" => self.agg_lambda = Some(num(key, value)?),
            "eval_every" => self.eval_every = num(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Every field as `key=value` lines, in [`CONFIG_KEYS`] order.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let value = match key {
                "lr" => self.lr.to_string(),
                "lambda" => self.lambda_reg.to_string(),
                "neg_ratio" => self.neg_ratio.to_string(),
                "psi" => self.psi.to_string(),
                "dim" => self.dim.to_string(),
                "epochs" => self.epochs.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "seed" => self.seed.to_string(),
                "aggregator" => self.aggregator.to_string(),
                "agg_lambda" => self.agg_lambda.unwrap_or(self.lambda_reg).to_string(),
                "eval_every" => self.eval_every.to_string(),
                _ => unreachable!(),
            };
            writeln!(out, "{key}={value}").unwrap();
        }
        out
    }
}

/// Per-element squared-gradient accumulators shaped like the embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGrad {
    dim: usize,
    ent: Vec<f64>,
    rel: Vec<f64>,
    pub eps: f64,
}

impl AdaGrad {
    pub fn new(m: &EmbeddingModel) -> Self {
        Self {
            dim: m.dim(),
            ent: vec![0.0; m.entity_table().len()],
            rel: vec![0.0; m.relation_table().len()],
            eps: ADAGRAD_EPS,
        }
    }

    pub fn entity_acc(&self, v: EntityId) -> &[f64] {
        &self.ent[v.index() * self.dim..(v.index() + 1) * self.dim]
    }

    pub fn relation_acc(&self, r: RelationId) -> &[f64] {
        &self.rel[r.index() * self.dim..(r.index() + 1) * self.dim]
    }

    pub fn apply(&mut self, m: &mut EmbeddingModel, grads: &Gradients, lr: f64) {
        let d = self.dim;
        for (v, g) in &grads.entities {
            let acc = &mut self.ent[v.index() * d..(v.index() + 1) * d];
            adagrad_step(acc, m.entity_mut(*v), g, lr, self.eps);
        }
        for (r, g) in &grads.relations {
            let acc = &mut self.rel[r.index() * d..(r.index() + 1) * d];
            adagrad_step(acc, m.relation_mut(*r), g, lr, self.eps);
        }
    }
}

/// `acc += g²; θ -= lr·g / (√acc + ε)`, elementwise.
pub fn adagrad_step(acc: &mut [f64], param: &mut [f64], grad: &[f64], lr: f64, eps: f64) {
    debug_assert!(acc.len() == param.len() && param.len() == grad.len());
    for ((a, p), g) in acc.iter_mut().zip(param.iter_mut()).zip(grad) {
        *a += g * g;
        *p -= lr * g / (a.sqrt() + eps);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Labeled {
    pub triple: Triple,
    /// `+1` for observed triples, `-1` for corruptions.
    pub label: i8,
}

/// Positives, each immediately followed by its corruptions.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledBatch {
    pub examples: Vec<Labeled>,
}

impl LabeledBatch {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Triple indices of `g` in the order they are visited during `epoch`.
pub fn epoch_order(g: &KnowledgeGraph, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.shuffle(&mut rng::stream(seed, Stream::Shuffle, epoch as u64, 0));
    order
}

pub fn num_batches(g: &KnowledgeGraph, batch_size: usize) -> usize {
    g.len().div_ceil(batch_size)
}

/// Takes the `batch_index`-th slice of `order` and adds `n` corruptions per
/// positive. A corruption replaces the head (probability ½) or the tail with
/// an entity drawn uniformly from the whole vocabulary; it is not checked
/// against known triples.
pub fn next_batch(
    g: &KnowledgeGraph,
    order: &[usize],
    batch_index: usize,
    batch_size: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> LabeledBatch {
    let start = (batch_index * batch_size).min(order.len());
    let end = (start + batch_size).min(order.len());
    let num_entities = g.num_entities() as u32;
    let mut examples = Vec::with_capacity((end - start) * (n + 1));
    for &i in &order[start..end] {
        let pos = g.triples()[i];
        examples.push(Labeled {
            triple: pos,
            label: 1,
        });
        for _ in 0..n {
            let e = EntityId(rng.gen_range(0..num_entities));
            let triple = if rng.gen_bool(0.5) {
                Triple::new(e, pos.rel, pos.tail)
            } else {
                Triple::new(pos.head, pos.rel, e)
            };
            examples.push(Labeled { triple, label: -1 });
        }
    }
    LabeledBatch { examples }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `Σ softplus(-l·s) + λ Σ ‖θ‖²` over the given rows.
pub fn batch_loss<'a>(
    scores: &[f64],
    labels: &[i8],
    lambda_reg: f64,
    touched: impl IntoIterator<Item = &'a [f64]>,
) -> f64 {
    debug_assert_eq!(scores.len(), labels.len());
    let data: f64 = scores
        .iter()
        .zip(labels)
        .map(|(s, l)| softplus(-(*l as f64) * s))
        .sum();
    let reg: f64 = touched
        .into_iter()
        .map(|row| row.iter().map(|x| x * x).sum::<f64>())
        .sum();
    data + lambda_reg * reg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    AggregateHead,
    AggregateTail,
    LookupBoth,
}

impl Branch {
    pub fn from_draw(u: f64, psi: f64) -> Self {
        if u < psi / 2.0 {
            Branch::AggregateHead
        } else if u < psi {
            Branch::AggregateTail
        } else {
            Branch::LookupBoth
        }
    }
}

/// Sparse gradient over table rows, keyed in handle order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub entities: BTreeMap<EntityId, Vec<f64>>,
    pub relations: BTreeMap<RelationId, Vec<f64>>,
}

impl Gradients {
    fn add(&mut self, g: RowGrad<'_>) {
        match g {
            RowGrad::Entity(v, x) => add_into(self.entities.entry(v), x),
            RowGrad::Relation(r, x) => add_into(self.relations.entry(r), x),
        }
    }
}

fn add_into<K: Ord>(slot: std::collections::btree_map::Entry<'_, K, Vec<f64>>, x: &[f64]) {
    let row = slot.or_insert_with(|| vec![0.0; x.len()]);
    for (r, v) in row.iter_mut().zip(x) {
        *r += v;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchOutcome {
    pub loss: f64,
    pub grads: Gradients,
    /// Aggregation branches that found an empty neighborhood and used lookup.
    pub fallbacks: usize,
}

enum Side {
    Lookup(EntityId),
    Aggregated(Vec<Neighbor>, Vec<f64>),
}

impl Side {
    fn embedding<'a>(&'a self, m: &'a EmbeddingModel) -> &'a [f64] {
        match self {
            Side::Lookup(v) => m.entity(*v),
            Side::Aggregated(_, z) => z,
        }
    }
}

/// Loss and gradient of one batch for fixed branch decisions. The model is
/// read, not updated.
///
/// An aggregated side uses the entity's neighborhood in `g` minus the scored
/// triple itself (when that triple is in `g`). An empty neighborhood falls
/// back to lookup.
pub fn batch_objective(
    g: &KnowledgeGraph,
    m: &EmbeddingModel,
    agg: &Aggregator,
    batch: &LabeledBatch,
    branches: &[Branch],
    lambda_reg: f64,
) -> Result<BatchOutcome> {
    if branches.len() != batch.len() {
        return Err(Error::LengthMismatch {
            left: batch.len(),
            right: branches.len(),
        });
    }
    let mut out = BatchOutcome::default();
    let mut looked_up_ent = BTreeSet::new();
    let mut looked_up_rel = BTreeSet::new();
    let mut resolve = |v: EntityId, aggregate: bool, t: &Triple, fallbacks: &mut usize| -> Result<Side> {
        if aggregate {
            let nbrs = g.neighborhood(v, g.find(t));
            if !nbrs.is_empty() {
                let z = agg.aggregate(&nbrs, m)?;
                return Ok(Side::Aggregated(nbrs, z));
            }
            *fallbacks += 1;
        }
        looked_up_ent.insert(v);
        Ok(Side::Lookup(v))
    };
    let mut data_loss = 0.0;
    let mut buf = vec![0.0; m.dim()];
    for (ex, branch) in batch.examples.iter().zip(branches) {
        let t = ex.triple;
        let head = resolve(t.head, *branch == Branch::AggregateHead, &t, &mut out.fallbacks)?;
        let tail = resolve(t.tail, *branch == Branch::AggregateTail, &t, &mut out.fallbacks)?;
        looked_up_rel.insert(t.rel);
        let zh = head.embedding(m);
        let zr = m.relation(t.rel);
        let zt = tail.embedding(m);
        let l = ex.label as f64;
        let s = numerics::triple_dot_unchecked(zh, zr, zt);
        data_loss += softplus(-l * s);
        let c = -l * sigmoid(-l * s);

        for ((b, r), u) in buf.iter_mut().zip(zr).zip(zt) {
            *b = c * (r * u);
        }
        push_side(&head, m, agg, &buf, &mut out.grads);
        for ((b, h), u) in buf.iter_mut().zip(zh).zip(zt) {
            *b = c * (h * u);
        }
        out.grads.add(RowGrad::Relation(t.rel, &buf));
        for ((b, h), r) in buf.iter_mut().zip(zh).zip(zr) {
            *b = c * (h * r);
        }
        push_side(&tail, m, agg, &buf, &mut out.grads);
    }

    let mut reg = 0.0;
    for v in &looked_up_ent {
        let row = m.entity(*v);
        reg += row.iter().map(|x| x * x).sum::<f64>();
        for (b, x) in buf.iter_mut().zip(row) {
            *b = 2.0 * lambda_reg * x;
        }
        out.grads.add(RowGrad::Entity(*v, &buf));
    }
    for r in &looked_up_rel {
        let row = m.relation(*r);
        reg += row.iter().map(|x| x * x).sum::<f64>();
        for (b, x) in buf.iter_mut().zip(row) {
            *b = 2.0 * lambda_reg * x;
        }
        out.grads.add(RowGrad::Relation(*r, &buf));
    }
    out.loss = data_loss + lambda_reg * reg;
    Ok(out)
}

fn push_side(side: &Side, m: &EmbeddingModel, agg: &Aggregator, grad: &[f64], sink: &mut Gradients) {
    match side {
        Side::Lookup(v) => sink.add(RowGrad::Entity(*v, grad)),
        Side::Aggregated(nbrs, _) => agg.backprop(nbrs, m, grad, |g| sink.add(g)),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub aggregated_head: usize,
    pub aggregated_tail: usize,
    pub lookup_both: usize,
    pub fallbacks: usize,
}

/// One epoch of aggregation-aware training.
pub fn train_epoch_oos(
    g: &KnowledgeGraph,
    m: &mut EmbeddingModel,
    state: &mut AdaGrad,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    if !m.is_bound_to(g) {
        return Err(Error::VocabMismatch(
            "model vocabulary differs from the training graph".into(),
        ));
    }
    let agg = cfg.aggregator()?;
    let order = epoch_order(g, cfg.seed, epoch);
    let mut stats = EpochStats::default();
    let mut branches = Vec::new();
    for b in 0..num_batches(g, cfg.batch_size) {
        let mut corrupt = rng::stream(cfg.seed, Stream::Corruption, epoch as u64, b as u64);
        let batch = next_batch(g, &order, b, cfg.batch_size, cfg.neg_ratio, &mut corrupt);
        let mut draws = rng::stream(cfg.seed, Stream::Branch, epoch as u64, b as u64);
        branches.clear();
        for _ in 0..batch.len() {
            let branch = Branch::from_draw(draws.gen::<f64>(), cfg.psi);
            match branch {
                Branch::AggregateHead => stats.aggregated_head += 1,
                Branch::AggregateTail => stats.aggregated_tail += 1,
                Branch::LookupBoth => stats.lookup_both += 1,
            }
            branches.push(branch);
        }
        let outcome = batch_objective(g, m, &agg, &batch, &branches, cfg.lambda_reg)?;
        stats.loss += outcome.loss;
        stats.fallbacks += outcome.fallbacks;
        state.apply(m, &outcome.grads, cfg.lr);
    }
    Ok(stats)
}

/// One epoch of plain transductive training: every triple is scored from
/// looked-up embeddings. Shares batching with [`train_epoch_oos`] but not the
/// branch or aggregation machinery.
pub fn train_epoch_transductive(
    g: &KnowledgeGraph,
    m: &mut EmbeddingModel,
    state: &mut AdaGrad,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let order = epoch_order(g, cfg.seed, epoch);
    let mut total = 0.0;
    for b in 0..num_batches(g, cfg.batch_size) {
        let mut corrupt = rng::stream(cfg.seed, Stream::Corruption, epoch as u64, b as u64);
        let batch = next_batch(g, &order, b, cfg.batch_size, cfg.neg_ratio, &mut corrupt);
        let mut grads = Gradients::default();
        let mut scores = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        let mut ents = BTreeSet::new();
        let mut rels = BTreeSet::new();
        for ex in &batch.examples {
            let t = ex.triple;
            let (zh, zr, zt) = (m.entity(t.head), m.relation(t.rel), m.entity(t.tail));
            let s = numerics::triple_dot_unchecked(zh, zr, zt);
            let l = ex.label as f64;
            let c = -l * sigmoid(-l * s);
            let gh: Vec<f64> = zr.iter().zip(zt).map(|(r, u)| c * (r * u)).collect();
            let gr: Vec<f64> = zh.iter().zip(zt).map(|(h, u)| c * (h * u)).collect();
            let gt: Vec<f64> = zh.iter().zip(zr).map(|(h, r)| c * (h * r)).collect();
            add_into(grads.entities.entry(t.head), &gh);
            add_into(grads.relations.entry(t.rel), &gr);
            add_into(grads.entities.entry(t.tail), &gt);
            ents.insert(t.head);
            ents.insert(t.tail);
            rels.insert(t.rel);
            scores.push(s);
            labels.push(ex.label);
        }
        let lambda = cfg.lambda_reg;
        for v in &ents {
            let g: Vec<f64> = m.entity(*v).iter().map(|x| 2.0 * lambda * x).collect();
            add_into(grads.entities.entry(*v), &g);
        }
        for r in &rels {
            let g: Vec<f64> = m.relation(*r).iter().map(|x| 2.0 * lambda * x).collect();
            add_into(grads.relations.entry(*r), &g);
        }
        let touched = ents
            .iter()
            .map(|v| m.entity(*v))
            .chain(rels.iter().map(|r| m.relation(*r)));
        total += batch_loss(&scores, &labels, lambda, touched);
        state.apply(m, &grads, cfg.lr);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub valid_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best checkpoint by validation MRR, or the last one without validation.
    pub model: EmbeddingModel,
    pub best_epoch: usize,
    pub best_valid_mrr: Option<f64>,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    /// `epoch<TAB>loss<TAB>valid_mrr` lines (the last column empty when no
    /// validation pass ran that epoch).
    pub fn log_tsv(&self) -> String {
        let mut out = String::from("epoch\tloss\tvalid_mrr\n");
        for e in &self.log {
            let mrr = e.valid_mrr.map(|x| format!("{x:.6}")).unwrap_or_default();
            writeln!(out, "{}\t{:.6}\t{mrr}", e.epoch, e.loss).unwrap();
        }
        out
    }
}

pub fn train(
    g: &KnowledgeGraph,
    cfg: &TrainConfig,
    validation: Option<&[OosGroup]>,
) -> Result<TrainOutcome> {
    train_with_observer(g, cfg, validation, |_| {})
}

/// Like [`train`], calling `observe` after every epoch. Validation runs every
/// `eval_every` epochs and after the final epoch.
pub fn train_with_observer(
    g: &KnowledgeGraph,
    cfg: &TrainConfig,
    validation: Option<&[OosGroup]>,
    mut observe: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let agg = cfg.aggregator()?;
    let validation = validation.filter(|v| !v.is_empty());
    let mut model = EmbeddingModel::for_graph(g, cfg.dim, cfg.seed)?;
    let mut state = AdaGrad::new(&model);
    let mut best: Option<(f64, usize, EmbeddingModel)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let stats = train_epoch_oos(g, &mut model, &mut state, cfg, epoch)?;
        let done = epoch + 1;
        let mut valid_mrr = None;
        if let Some(groups) = validation {
            if done % cfg.eval_every == 0 || done == cfg.epochs {
                let mrr = evaluation::evaluate(groups, &model, &agg)?.mrr;
                if best.as_ref().is_none_or(|(b, _, _)| mrr > *b) {
                    best = Some((mrr, done, model.clone()));
                }
                valid_mrr = Some(mrr);
            }
        }
        let entry = EpochLog {
            epoch: done,
            loss: stats.loss,
            valid_mrr,
        };
        observe(&entry);
        log.push(entry);
    }
    Ok(match best {
        Some((mrr, epoch, model)) => TrainOutcome {
            model,
            best_epoch: epoch,
            best_valid_mrr: Some(mrr),
            log,
        },
        None => TrainOutcome {
            best_epoch: cfg.epochs,
            model,
            best_valid_mrr: None,
            log,
        },
    })
}
