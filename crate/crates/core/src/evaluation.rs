//! Leave-one-out link prediction for out-of-sample entities.
//!
//! Each triple of a held-out entity becomes one query whose context is the
//! entity's remaining triples. Candidates that would complete another triple
//! of the same entity (same side, same relation) are filtered out before
//! ranking.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::aggregation::Aggregator;
use crate::error::{Error, Result};
use crate::graph::{Direction, EntityId, KnowledgeGraph, Neighbor, RelationId};
use crate::model::EmbeddingModel;
use crate::numerics;
use crate::rng::{self, Stream};
use crate::split::OosGroup;

pub const NUM_BINS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryDirection {
    /// `(v, r, ?)`
    Tail,
    /// `(?, r, v)`
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub entity: String,
    pub direction: QueryDirection,
    pub rel: RelationId,
    pub answer: EntityId,
    /// The entity's other triples; input to the aggregator.
    pub context: Vec<Neighbor>,
    /// Candidates removed by the filter (never contains `answer`).
    pub filtered: Vec<EntityId>,
}

impl Query {
    pub fn neighborhood_size(&self) -> usize {
        self.context.len()
    }
}

/// One query per triple of the group.
pub fn make_queries(group: &OosGroup) -> Result<Vec<Query>> {
    if group.len() < 2 {
        return Err(Error::InvalidGroup {
            entity: group.entity.clone(),
            size: group.len(),
        });
    }
    Ok(group
        .triples
        .iter()
        .enumerate()
        .map(|(i, held)| {
            let context: Vec<Neighbor> = group
                .triples
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, n)| *n)
                .collect();
            let mut filtered: Vec<EntityId> = context
                .iter()
                .filter(|n| n.direction == held.direction && n.rel == held.rel)
                .map(|n| n.other)
                .filter(|u| *u != held.other)
                .collect();
            filtered.sort_unstable();
            filtered.dedup();
            Query {
                entity: group.entity.clone(),
                direction: match held.direction {
                    Direction::Outgoing => QueryDirection::Tail,
                    Direction::Incoming => QueryDirection::Head,
                },
                rel: held.rel,
                answer: held.other,
                context,
                filtered,
            }
        })
        .collect())
}

/// `1 + #greater + ⌊#ties / 2⌋`, where ties exclude the answer itself.
pub fn halved_tie_rank(answer_score: f64, others: impl IntoIterator<Item = f64>) -> usize {
    let (mut greater, mut ties) = (0usize, 0usize);
    for s in others {
        if s > answer_score {
            greater += 1;
        } else if s == answer_score {
            ties += 1;
        }
    }
    1 + greater + ties / 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryRank {
    pub rank: usize,
    pub candidates: usize,
    pub neighborhood_size: usize,
}

/// Ranks the answer among all in-sample entities that survive the filter,
/// scoring each candidate with the held-out embedding on the query's side.
pub fn rank_answer(q: &Query, embed: &[f64], m: &EmbeddingModel) -> Result<QueryRank> {
    if embed.len() != m.dim() {
        return Err(Error::LengthMismatch {
            left: embed.len(),
            right: m.dim(),
        });
    }
    let zr = m.lookup_relation(q.rel)?;
    m.lookup_entity(q.answer)?;
    // DistMult is symmetric in head and tail, so both query directions score
    // a candidate u as <embed ⊙ z_r, z_u>.
    let probe: Vec<f64> = embed.iter().zip(zr).map(|(a, b)| a * b).collect();
    let filtered: HashSet<EntityId> = q.filtered.iter().copied().collect();
    let score = |u: EntityId| numerics::dot_unchecked(&probe, m.entity(u));
    let answer_score = score(q.answer);
    let others = (0..m.num_entities() as u32)
        .map(EntityId)
        .filter(|u| *u != q.answer && !filtered.contains(u))
        .map(score);
    let rank = halved_tie_rank(answer_score, others);
    Ok(QueryRank {
        rank,
        candidates: m.num_entities() - filtered.len(),
        neighborhood_size: q.neighborhood_size(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborBin {
    pub min_size: usize,
    pub max_size: usize,
    pub queries: usize,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub ranks: Vec<QueryRank>,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub bins: Vec<NeighborBin>,
}

fn mean_reciprocal_rank<'a>(ranks: impl Iterator<Item = &'a QueryRank>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in ranks {
        sum += 1.0 / r.rank as f64;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl RankingReport {
    pub fn from_ranks(ranks: Vec<QueryRank>) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let hits = |k: usize| ranks.iter().filter(|r| r.rank <= k).count() as f64 / ranks.len() as f64;
        let sizes: Vec<usize> = ranks.iter().map(|r| r.neighborhood_size).collect();
        let bins = equal_count_bins(&sizes, NUM_BINS)
            .into_iter()
            .map(|(lo, hi)| {
                let members = ranks
                    .iter()
                    .filter(|r| (lo..=hi).contains(&r.neighborhood_size));
                let queries = members.clone().count();
                NeighborBin {
                    min_size: lo,
                    max_size: hi,
                    queries,
                    mrr: mean_reciprocal_rank(members),
                }
            })
            .collect();
        Ok(Self {
            mrr: mean_reciprocal_rank(ranks.iter()),
            hits1: hits(1),
            hits3: hits(3),
            hits10: hits(10),
            bins,
            ranks,
        })
    }

    pub fn queries(&self) -> usize {
        self.ranks.len()
    }

    /// `metric<TAB>value` lines.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "metric\tvalue")?;
        writeln!(w, "mrr\t{:.6}", self.mrr)?;
        writeln!(w, "hits@1\t{:.6}", self.hits1)?;
        writeln!(w, "hits@3\t{:.6}", self.hits3)?;
        writeln!(w, "hits@10\t{:.6}", self.hits10)?;
        writeln!(w, "queries\t{}", self.queries())
    }

    pub fn write_bins_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bin_range\tqueries\tmrr")?;
        for b in &self.bins {
            writeln!(w, "{}-{}\t{}\t{:.6}", b.min_size, b.max_size, b.queries, b.mrr)?;
        }
        Ok(())
    }
}

impl fmt::Display for RankingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "queries   {}", self.queries())?;
        writeln!(f, "MRR       {:.4}", self.mrr)?;
        writeln!(f, "Hit@1     {:.4}", self.hits1)?;
        writeln!(f, "Hit@3     {:.4}", self.hits3)?;
        writeln!(f, "Hit@10    {:.4}", self.hits10)?;
        writeln!(f, "neighbors  queries  MRR")?;
        for b in &self.bins {
            writeln!(
                f,
                "{:>9}  {:>7}  {:.4}",
                format!("{}-{}", b.min_size, b.max_size),
                b.queries,
                b.mrr
            )?;
        }
        Ok(())
    }
}

/// Splits the sorted multiset `sizes` into at most `k` contiguous ranges of
/// roughly equal population. Equal sizes always share a range. Returns
/// inclusive `(min, max)` bounds.
///
/// Boundaries minimize the squared deviation of each range's population from
/// `len / k` (dynamic program over the distinct values).
pub fn equal_count_bins(sizes: &[usize], k: usize) -> Vec<(usize, usize)> {
    let mut values: Vec<usize> = sizes.to_vec();
    values.sort_unstable();
    let mut classes: Vec<(usize, usize)> = Vec::new();
    for v in values {
        match classes.last_mut() {
            Some((x, c)) if *x == v => *c += 1,
            _ => classes.push((v, 1)),
        }
    }
    let c = classes.len();
    let k = k.min(c);
    if k == 0 {
        return Vec::new();
    }
    let target = sizes.len() as f64 / k as f64;
    let mut prefix = vec![0usize; c + 1];
    for (i, (_, n)) in classes.iter().enumerate() {
        prefix[i + 1] = prefix[i] + n;
    }
    let cost = |i: usize, j: usize| {
        let d = (prefix[j] - prefix[i]) as f64 - target;
        d * d
    };
    // best[b][j]: first j classes in b non-empty bins.
    let mut best = vec![vec![f64::INFINITY; c + 1]; k + 1];
    let mut cut = vec![vec![0usize; c + 1]; k + 1];
    best[0][0] = 0.0;
    for b in 1..=k {
        for j in b..=c {
            for i in (b - 1)..j {
                let v = best[b - 1][i] + cost(i, j);
                if v < best[b][j] {
                    best[b][j] = v;
                    cut[b][j] = i;
                }
            }
        }
    }
    let mut bounds = Vec::with_capacity(k);
    let mut j = c;
    for b in (1..=k).rev() {
        let i = cut[b][j];
        bounds.push((classes[i].0, classes[j - 1].0));
        j = i;
    }
    bounds.reverse();
    bounds
}

/// Ranks every query, embedding the held-out entity with `embed`.
pub fn evaluate_with<F>(groups: &[OosGroup], m: &EmbeddingModel, embed: F) -> Result<RankingReport>
where
    F: Fn(&Query) -> Result<Vec<f64>> + Sync,
{
    let queries = groups
        .iter()
        .map(make_queries)
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    let ranks = queries
        .par_iter()
        .map(|q| rank_answer(q, &embed(q)?, m))
        .collect::<Result<Vec<_>>>()?;
    RankingReport::from_ranks(ranks)
}

/// Filtered MRR / Hit@k with the held-out embedding computed by `agg` from
/// each query's context.
pub fn evaluate(groups: &[OosGroup], m: &EmbeddingModel, agg: &Aggregator) -> Result<RankingReport> {
    evaluate_with(groups, m, |q| agg.aggregate(&q.context, m))
}

/// Answers every query with one fixed entity ordering: descending frequency in
/// the training triples, ties broken by a seeded shuffle.
pub fn baseline_popularity(
    train: &KnowledgeGraph,
    groups: &[OosGroup],
    seed: u64,
) -> Result<RankingReport> {
    let ordering = popularity_order(train, seed);
    let mut position = vec![0usize; train.num_entities()];
    for (p, e) in ordering.iter().enumerate() {
        position[e.index()] = p;
    }
    let mut ranks = Vec::new();
    for group in groups {
        for q in make_queries(group)? {
            if q.answer.index() >= train.num_entities() {
                return Err(Error::OutOfRange {
                    kind: "entity",
                    index: q.answer.index(),
                    size: train.num_entities(),
                });
            }
            let at = position[q.answer.index()];
            let skipped = q.filtered.iter().filter(|f| position[f.index()] < at).count();
            ranks.push(QueryRank {
                rank: 1 + at - skipped,
                candidates: train.num_entities() - q.filtered.len(),
                neighborhood_size: q.neighborhood_size(),
            });
        }
    }
    RankingReport::from_ranks(ranks)
}

pub fn popularity_order(train: &KnowledgeGraph, seed: u64) -> Vec<EntityId> {
    let mut counts = vec![0usize; train.num_entities()];
    for t in train.triples() {
        counts[t.head.index()] += 1;
        counts[t.tail.index()] += 1;
    }
    let mut order: Vec<EntityId> = (0..train.num_entities() as u32).map(EntityId).collect();
    order.shuffle(&mut rng::stream(seed, Stream::TieBreak, 0, 0));
    order.sort_by(|a, b| counts[b.index()].cmp(&counts[a.index()]));
    order
}

/// Uses the mean in-sample entity embedding for every held-out entity.
pub fn baseline_oov(m: &EmbeddingModel, groups: &[OosGroup]) -> Result<RankingReport> {
    let mean = m.mean_entity();
    evaluate_with(groups, m, |_| Ok(mean.clone()))
}
