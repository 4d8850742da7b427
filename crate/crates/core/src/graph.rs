//! Interned knowledge graphs with a per-entity adjacency index.
//!
//! Entities and relations are interned into dense `u32` handles in
//! first-appearance order. Every triple contributes one outgoing entry to its
//! head's adjacency list and one incoming entry to its tail's list; a self-loop
//! therefore shows up twice in the same list.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, rel: RelationId, tail: EntityId) -> Self {
        Self { head, rel, tail }
    }
}

/// Which side of a triple the anchor entity sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    /// Anchor is the head: `(anchor, rel, other)`.
    Outgoing,
    /// Anchor is the tail: `(other, rel, anchor)`.
    Incoming,
}

/// One triple seen from an anchor entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Neighbor {
    pub direction: Direction,
    pub rel: RelationId,
    pub other: EntityId,
}

impl Neighbor {
    pub fn new(direction: Direction, rel: RelationId, other: EntityId) -> Self {
        Self {
            direction,
            rel,
            other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct AdjEntry {
    neighbor: Neighbor,
    triple: usize,
}

/// Bidirectional label <-> handle table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::new();
        for label in labels {
            let label = label.into();
            if vocab.get(&label).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate vocabulary label `{label}`"
                )));
            }
            vocab.intern(&label);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Returns the existing handle or appends a new one.
    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(id) = self.index.get(label) {
            return *id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }
}

/// What to do with labels missing from a base vocabulary while loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabPolicy {
    Extend,
    Frozen,
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
    adjacency: Vec<Vec<AdjEntry>>,
    lookup: HashMap<Triple, usize>,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities
            && self.relations == other.relations
            && self.triples == other.triples
    }
}

impl KnowledgeGraph {
    pub fn empty() -> Self {
        Self {
            entities: Vocab::new(),
            relations: Vocab::new(),
            triples: Vec::new(),
            adjacency: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    /// Assembles a graph from already-interned parts, rejecting invalid handles
    /// and exact duplicates.
    pub fn from_parts(entities: Vocab, relations: Vocab, triples: Vec<Triple>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(triples.len());
        for (i, t) in triples.iter().enumerate() {
            for e in [t.head, t.tail] {
                if e.index() >= entities.len() {
                    return Err(Error::OutOfRange {
                        kind: "entity",
                        index: e.index(),
                        size: entities.len(),
                    });
                }
            }
            if t.rel.index() >= relations.len() {
                return Err(Error::OutOfRange {
                    kind: "relation",
                    index: t.rel.index(),
                    size: relations.len(),
                });
            }
            if lookup.insert(*t, i).is_some() {
                return Err(Error::DuplicateTriple {
                    line: i + 1,
                    head: entities.label(t.head.0).to_owned(),
                    relation: relations.label(t.rel.0).to_owned(),
                    tail: entities.label(t.tail.0).to_owned(),
                });
            }
        }
        let mut adjacency = vec![Vec::new(); entities.len()];
        for (i, t) in triples.iter().enumerate() {
            adjacency[t.head.index()].push(AdjEntry {
                neighbor: Neighbor::new(Direction::Outgoing, t.rel, t.tail),
                triple: i,
            });
            adjacency[t.tail.index()].push(AdjEntry {
                neighbor: Neighbor::new(Direction::Incoming, t.rel, t.head),
                triple: i,
            });
        }
        Ok(Self {
            entities,
            relations,
            triples,
            adjacency,
            lookup,
        })
    }

    /// Interns string triples in order. Convenient for fixtures and for
    /// rebuilding graphs out of label-level data.
    pub fn from_labeled<'a, I>(triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let mut out = Vec::new();
        for (h, r, t) in triples {
            let head = EntityId(entities.intern(h));
            let rel = RelationId(relations.intern(r));
            let tail = EntityId(entities.intern(t));
            out.push(Triple::new(head, rel, tail));
        }
        Self::from_parts(entities, relations, out)
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn entity_label(&self, e: EntityId) -> &str {
        self.entities.label(e.0)
    }

    pub fn relation_label(&self, r: RelationId) -> &str {
        self.relations.label(r.0)
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    /// Index of `t` in the triple list, if present.
    pub fn find(&self, t: &Triple) -> Option<usize> {
        self.lookup.get(t).copied()
    }

    /// Adjacency entries of `v` in triple order, minus every entry that
    /// belongs to triple `exclude`.
    pub fn neighborhood(&self, v: EntityId, exclude: Option<usize>) -> Vec<Neighbor> {
        self.neighbors(v, exclude).collect()
    }

    pub fn neighbors(
        &self,
        v: EntityId,
        exclude: Option<usize>,
    ) -> impl Iterator<Item = Neighbor> + '_ {
        self.adjacency[v.index()]
            .iter()
            .filter(move |e| Some(e.triple) != exclude)
            .map(|e| e.neighbor)
    }

    /// Out-degree plus in-degree (a self-loop counts twice).
    pub fn degree(&self, v: EntityId) -> usize {
        self.adjacency[v.index()].len()
    }

    /// Reads a tab-separated triple file, interning labels into fresh vocabularies.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_triples(path, None)
    }

    pub fn read_tsv<R: BufRead>(
        reader: R,
        base: Option<(&KnowledgeGraph, VocabPolicy)>,
    ) -> Result<Self> {
        let (mut entities, mut relations, policy) = match base {
            Some((g, policy)) => (g.entities.clone(), g.relations.clone(), policy),
            None => (Vocab::new(), Vocab::new(), VocabPolicy::Extend),
        };
        let mut triples = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Parse {
                    line: lineno,
                    message: "empty field".into(),
                });
            }
            let mut entity = |label: &str| -> Result<EntityId> {
                match (entities.get(label), policy) {
                    (Some(id), _) => Ok(EntityId(id)),
                    (None, VocabPolicy::Extend) => Ok(EntityId(entities.intern(label))),
                    (None, VocabPolicy::Frozen) => Err(Error::UnknownSymbol {
                        kind: "entity",
                        label: label.to_owned(),
                    }),
                }
            };
            let head = entity(fields[0])?;
            let tail = entity(fields[2])?;
            let rel = match (relations.get(fields[1]), policy) {
                (Some(id), _) => RelationId(id),
                (None, VocabPolicy::Extend) => RelationId(relations.intern(fields[1])),
                (None, VocabPolicy::Frozen) => {
                    return Err(Error::UnknownSymbol {
                        kind: "relation",
                        label: fields[1].to_owned(),
                    })
                }
            };
            let t = Triple::new(head, rel, tail);
            if !seen.insert(t) {
                return Err(Error::DuplicateTriple {
                    line: lineno,
                    head: fields[0].to_owned(),
                    relation: fields[1].to_owned(),
                    tail: fields[2].to_owned(),
                });
            }
            triples.push(t);
        }
        Self::from_parts(entities, relations, triples)
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.triples {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entity_label(t.head),
                self.relation_label(t.rel),
                self.entity_label(t.tail)
            )?;
        }
        Ok(())
    }

    pub fn display_triple(&self, t: &Triple) -> impl fmt::Display + '_ {
        let t = *t;
        DisplayTriple { g: self, t }
    }
}

struct DisplayTriple<'a> {
    g: &'a KnowledgeGraph,
    t: Triple,
}

impl fmt::Display for DisplayTriple<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.g.entity_label(self.t.head),
            self.g.relation_label(self.t.rel),
            self.g.entity_label(self.t.tail)
        )
    }
}

/// Loads a triple TSV file. With `base`, its vocabularies are reused and
/// either extended or treated as closed depending on the policy.
pub fn load_triples(
    path: impl AsRef<Path>,
    base: Option<(&KnowledgeGraph, VocabPolicy)>,
) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    KnowledgeGraph::read_tsv(BufReader::new(file), base)
}

pub fn write_triples(g: &KnowledgeGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    g.write_tsv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
