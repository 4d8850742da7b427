//! Small block-structured graphs with known community structure.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockGraphSpec {
    pub entities: usize,
    pub relations: usize,
    pub blocks: usize,
    /// Probability of a second edge per (entity, relation) pair; one edge is
    /// always drawn.
    pub extra_edge_prob: f64,
}

impl Default for BlockGraphSpec {
    fn default() -> Self {
        Self {
            entities: 50,
            relations: 3,
            blocks: 5,
            extra_edge_prob: 0.5,
        }
    }
}

/// Entity `i` lives in block `i % blocks`. Relation `k` links an entity in
/// block `b` to uniformly chosen entities of block `(b + k) % blocks`.
pub fn block_graph(spec: &BlockGraphSpec, seed: u64) -> Result<KnowledgeGraph> {
    if spec.blocks == 0 || spec.entities < spec.blocks || spec.relations == 0 {
        return Err(Error::InvalidConfig(format!("bad block graph spec {spec:?}")));
    }
    let mut rng = rng::stream(seed, Stream::Synthetic, 0, 0);
    let names: Vec<String> = (0..spec.entities).map(|i| format!("e{i}")).collect();
    let rels: Vec<String> = (0..spec.relations).map(|k| format!("r{k}")).collect();
    let members: Vec<Vec<usize>> = (0..spec.blocks)
        .map(|b| (b..spec.entities).step_by(spec.blocks).collect())
        .collect();
    let mut triples: Vec<(usize, usize, usize)> = Vec::new();
    for v in 0..spec.entities {
        for k in 0..spec.relations {
            let target = &members[(v % spec.blocks + k) % spec.blocks];
            let edges = 1 + rng.gen_bool(spec.extra_edge_prob) as usize;
            for _ in 0..edges {
                let u = target[rng.gen_range(0..target.len())];
                if u != v && !triples.contains(&(v, k, u)) {
                    triples.push((v, k, u));
                }
            }
        }
    }
    KnowledgeGraph::from_labeled(
        triples
            .iter()
            .map(|&(h, r, t)| (names[h].as_str(), rels[r].as_str(), names[t].as_str())),
    )
}
