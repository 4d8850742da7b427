//! DistMult embedding tables.
//!
//! The score of a triple is `sum_i z_head[i] * z_rel[i] * z_tail[i]`, which is
//! symmetric in head and tail.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Vocab};
use crate::numerics;
use crate::rng::{self, Stream};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OOSKGE1\n";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    dim: usize,
    entities: Vocab,
    relations: Vocab,
    ent: Vec<f64>,
    rel: Vec<f64>,
}

impl EmbeddingModel {
    /// Entries drawn i.i.d. from `U[-sqrt(6/d), sqrt(6/d)]`, entity rows first.
    pub fn init(entities: Vocab, relations: Vocab, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        let bound = (6.0 / dim as f64).sqrt();
        let mut rng = rng::stream(seed, Stream::Init, 0, 0);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
        };
        let ent = draw(entities.len() * dim);
        let rel = draw(relations.len() * dim);
        Ok(Self {
            dim,
            entities,
            relations,
            ent,
            rel,
        })
    }

    pub fn for_graph(g: &KnowledgeGraph, dim: usize, seed: u64) -> Result<Self> {
        Self::init(g.entities().clone(), g.relations().clone(), dim, seed)
    }

    pub fn from_tables(
        entities: Vocab,
        relations: Vocab,
        dim: usize,
        ent: Vec<f64>,
        rel: Vec<f64>,
    ) -> Result<Self> {
        if ent.len() != entities.len() * dim {
            return Err(Error::LengthMismatch {
                left: entities.len() * dim,
                right: ent.len(),
            });
        }
        if rel.len() != relations.len() * dim {
            return Err(Error::LengthMismatch {
                left: relations.len() * dim,
                right: rel.len(),
            });
        }
        Ok(Self {
            dim,
            entities,
            relations,
            ent,
            rel,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    /// True when both vocabularies match `g`'s exactly, handle for handle.
    pub fn is_bound_to(&self, g: &KnowledgeGraph) -> bool {
        self.entities == *g.entities() && self.relations == *g.relations()
    }

    pub fn lookup_entity(&self, v: EntityId) -> Result<&[f64]> {
        if v.index() >= self.num_entities() {
            return Err(Error::OutOfRange {
                kind: "entity",
                index: v.index(),
                size: self.num_entities(),
            });
        }
        Ok(self.entity(v))
    }

    pub fn lookup_relation(&self, r: RelationId) -> Result<&[f64]> {
        if r.index() >= self.num_relations() {
            return Err(Error::OutOfRange {
                kind: "relation",
                index: r.index(),
                size: self.num_relations(),
            });
        }
        Ok(self.relation(r))
    }

    #[inline]
    pub(crate) fn entity(&self, v: EntityId) -> &[f64] {
        let d = self.dim;
        &self.ent[v.index() * d..(v.index() + 1) * d]
    }

    #[inline]
    pub(crate) fn relation(&self, r: RelationId) -> &[f64] {
        let d = self.dim;
        &self.rel[r.index() * d..(r.index() + 1) * d]
    }

    pub fn entity_mut(&mut self, v: EntityId) -> &mut [f64] {
        let d = self.dim;
        &mut self.ent[v.index() * d..(v.index() + 1) * d]
    }

    pub fn relation_mut(&mut self, r: RelationId) -> &mut [f64] {
        let d = self.dim;
        &mut self.rel[r.index() * d..(r.index() + 1) * d]
    }

    pub fn entity_table(&self) -> &[f64] {
        &self.ent
    }

    pub fn relation_table(&self) -> &[f64] {
        &self.rel
    }

    pub fn is_finite(&self) -> bool {
        self.ent.iter().chain(&self.rel).all(|x| x.is_finite())
    }

    /// Column mean of the entity table.
    pub fn mean_entity(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let n = self.num_entities();
        if n == 0 {
            return out;
        }
        for row in self.ent.chunks_exact(self.dim) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        out
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        for n in [self.num_entities(), self.num_relations(), self.dim] {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        for label in self.entities.labels().iter().chain(self.relations.labels()) {
            w.write_all(&(label.len() as u32).to_le_bytes())?;
            w.write_all(label.as_bytes())?;
        }
        for x in self.ent.iter().chain(&self.rel) {
            w.write_all(&(*x as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let bad = |e: std::io::Error| Error::Checkpoint(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut u32s = [0usize; 3];
        for slot in &mut u32s {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(bad)?;
            *slot = u32::from_le_bytes(b) as usize;
        }
        let [nv, nr, dim] = u32s;
        if dim == 0 {
            return Err(Error::Checkpoint("zero dimension".into()));
        }
        let mut read_labels = |n: usize| -> Result<Vec<String>> {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 4];
                r.read_exact(&mut b).map_err(bad)?;
                let mut s = vec![0u8; u32::from_le_bytes(b) as usize];
                r.read_exact(&mut s).map_err(bad)?;
                out.push(
                    String::from_utf8(s).map_err(|e| Error::Checkpoint(e.to_string()))?,
                );
            }
            Ok(out)
        };
        let entities = Vocab::from_labels(read_labels(nv)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let relations = Vocab::from_labels(read_labels(nr)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut read_table = |n: usize| -> Result<Vec<f64>> {
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw).map_err(bad)?;
            Ok(raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect())
        };
        let ent = read_table(nv * dim)?;
        let rel = read_table(nr * dim)?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(bad)? != 0 {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Self::from_tables(entities, relations, dim, ent, rel)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_checkpoint(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(BufReader::new(file))
    }
}

/// DistMult score.
pub fn score(head: &[f64], rel: &[f64], tail: &[f64]) -> Result<f64> {
    numerics::triple_dot(head, rel, tail)
}

/// Partial derivatives of the score w.r.t. head, relation and tail.
pub fn score_gradients(
    head: &[f64],
    rel: &[f64],
    tail: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    Ok((
        numerics::hadamard(rel, tail)?,
        numerics::hadamard(head, tail)?,
        numerics::hadamard(head, rel)?,
    ))
}
