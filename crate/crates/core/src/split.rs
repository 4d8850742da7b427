//! Out-of-sample benchmark construction.
//!
//! Starting from a merged triple set, a random subset of entities with at
//! least two triples is held out. Their triples to the remaining (in-sample)
//! entities become evaluation groups; everything else that survives cleanup is
//! the training graph.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::{index, SliceRandom};

use crate::error::{Error, Result};
use crate::graph::{self, Direction, EntityId, KnowledgeGraph, Neighbor, Triple};
use crate::rng::{self, Stream};

pub const DEFAULT_OOS_FRACTION: f64 = 0.2;

/// One out-of-sample entity and its triples to in-sample entities, expressed
/// against the training graph's handles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OosGroup {
    pub entity: String,
    pub triples: Vec<Neighbor>,
}

impl OosGroup {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitStats {
    pub in_sample_entities: usize,
    pub oos_valid: usize,
    pub oos_test: usize,
    pub relations: usize,
    pub train_triples: usize,
    pub valid_queries: usize,
    pub test_queries: usize,
}

impl SplitStats {
    pub fn recount(train: &KnowledgeGraph, valid: &[OosGroup], test: &[OosGroup]) -> Self {
        Self {
            in_sample_entities: train.num_entities(),
            oos_valid: valid.len(),
            oos_test: test.len(),
            relations: train.num_relations(),
            train_triples: train.len(),
            valid_queries: valid.iter().map(OosGroup::len).sum(),
            test_queries: test.iter().map(OosGroup::len).sum(),
        }
    }

    fn fields(&self) -> [(&'static str, usize); 7] {
        [
            ("in_sample_entities", self.in_sample_entities),
            ("oos_valid", self.oos_valid),
            ("oos_test", self.oos_test),
            ("relations", self.relations),
            ("train_triples", self.train_triples),
            ("valid_queries", self.valid_queries),
            ("test_queries", self.test_queries),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutOfSampleSplit {
    pub train: KnowledgeGraph,
    pub valid: Vec<OosGroup>,
    pub test: Vec<OosGroup>,
    pub seed: u64,
    pub stats: SplitStats,
}

/// Holds out `⌊oos_fraction · |eligible|⌋` entities drawn uniformly from the
/// entities that occur in at least two triples, then builds the split.
pub fn build_split(all: &KnowledgeGraph, oos_fraction: f64, seed: u64) -> Result<OutOfSampleSplit> {
    if !(oos_fraction > 0.0 && oos_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "oos fraction must lie in (0, 1), got {oos_fraction}"
        )));
    }
    if all.is_empty() {
        return Err(Error::DegenerateSplit("input graph has no triples".into()));
    }
    let eligible: Vec<EntityId> = triple_counts(all)
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c >= 2)
        .map(|(i, _)| EntityId(i as u32))
        .collect();
    let k = (oos_fraction * eligible.len() as f64).floor() as usize;
    if k == 0 {
        return Err(Error::DegenerateSplit(format!(
            "no entity sampled ({} eligible entities with >= 2 triples)",
            eligible.len()
        )));
    }
    let mut rng = rng::stream(seed, Stream::Split, 0, 0);
    let mut candidates: Vec<EntityId> = index::sample(&mut rng, eligible.len(), k)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    candidates.sort_unstable();
    build_split_with_candidates(all, &candidates, seed)
}

/// Number of distinct triples each entity occurs in.
fn triple_counts(g: &KnowledgeGraph) -> Vec<usize> {
    let mut counts = vec![0usize; g.num_entities()];
    for t in g.triples() {
        counts[t.head.index()] += 1;
        if t.tail != t.head {
            counts[t.tail.index()] += 1;
        }
    }
    counts
}

/// Builds a split from an explicit set of out-of-sample candidates. The seed
/// only drives the valid/test partition.
pub fn build_split_with_candidates(
    all: &KnowledgeGraph,
    candidates: &[EntityId],
    seed: u64,
) -> Result<OutOfSampleSplit> {
    let mut is_oos = vec![false; all.num_entities()];
    for c in candidates {
        is_oos[c.index()] = true;
    }

    // Route triples by how many out-of-sample endpoints they have. A
    // self-loop on a held-out entity counts twice and is dropped.
    let mut train: Vec<Triple> = Vec::new();
    let mut pool: Vec<Triple> = Vec::new();
    for t in all.triples() {
        match is_oos[t.head.index()] as u8 + is_oos[t.tail.index()] as u8 {
            0 => train.push(*t),
            1 => pool.push(*t),
            _ => {}
        }
    }

    let mut ent_train = vec![0usize; all.num_entities()];
    let mut rel_train = vec![0usize; all.num_relations()];
    for t in &train {
        ent_train[t.head.index()] += 1;
        ent_train[t.tail.index()] += 1;
        rel_train[t.rel.index()] += 1;
    }
    // Drop pool triples touching in-sample entities or relations that have no
    // training triple; repeat until nothing changes.
    loop {
        let before = pool.len();
        pool.retain(|t| {
            let in_sample = if is_oos[t.head.index()] { t.tail } else { t.head };
            ent_train[in_sample.index()] > 0 && rel_train[t.rel.index()] > 0
        });
        if pool.len() == before {
            break;
        }
    }

    let oos_of = |t: &Triple| if is_oos[t.head.index()] { t.head } else { t.tail };
    let mut pool_counts = vec![0usize; all.num_entities()];
    for t in &pool {
        pool_counts[oos_of(t).index()] += 1;
    }
    pool.retain(|t| pool_counts[oos_of(t).index()] >= 2);
    let mut survivors: Vec<EntityId> = candidates
        .iter()
        .copied()
        .filter(|c| pool_counts[c.index()] >= 2)
        .collect();
    survivors.sort_unstable();
    survivors.dedup();
    if survivors.is_empty() {
        return Err(Error::DegenerateSplit(
            "no out-of-sample entity kept at least 2 triples".into(),
        ));
    }

    let mut shuffled = survivors.clone();
    shuffled.shuffle(&mut rng::stream(seed, Stream::Split, 1, 0));
    let n_valid = shuffled.len() / 2;
    let mut is_valid = vec![false; all.num_entities()];
    for e in &shuffled[..n_valid] {
        is_valid[e.index()] = true;
    }

    let train_graph = KnowledgeGraph::from_labeled(train.iter().map(|t| {
        (
            all.entity_label(t.head),
            all.relation_label(t.rel),
            all.entity_label(t.tail),
        )
    }))?;

    let mut groups: HashMap<EntityId, Vec<Neighbor>> = HashMap::new();
    for t in &pool {
        let (oos, direction, other) = if is_oos[t.head.index()] {
            (t.head, Direction::Outgoing, t.tail)
        } else {
            (t.tail, Direction::Incoming, t.head)
        };
        let rel = train_graph
            .relation_id(all.relation_label(t.rel))
            .expect("pool relations occur in train");
        let other = train_graph
            .entity_id(all.entity_label(other))
            .expect("pool in-sample entities occur in train");
        groups
            .entry(oos)
            .or_default()
            .push(Neighbor::new(direction, rel, other));
    }
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for e in survivors {
        let group = OosGroup {
            entity: all.entity_label(e).to_owned(),
            triples: groups.remove(&e).unwrap_or_default(),
        };
        if is_valid[e.index()] {
            valid.push(group);
        } else {
            test.push(group);
        }
    }
    let stats = SplitStats::recount(&train_graph, &valid, &test);
    Ok(OutOfSampleSplit {
        train: train_graph,
        valid,
        test,
        seed,
        stats,
    })
}

impl OutOfSampleSplit {
    pub fn all_groups(&self) -> impl Iterator<Item = &OosGroup> {
        self.valid.iter().chain(&self.test)
    }
}

fn group_lines(train: &KnowledgeGraph, groups: &[OosGroup]) -> String {
    let mut out = String::new();
    for g in groups {
        for n in &g.triples {
            let rel = train.relation_label(n.rel);
            let other = train.entity_label(n.other);
            match n.direction {
                Direction::Outgoing => writeln!(out, "{}\t{rel}\t{other}", g.entity),
                Direction::Incoming => writeln!(out, "{other}\t{rel}\t{}", g.entity),
            }
            .expect("writing to a String cannot fail");
        }
    }
    out
}

fn stats_text(split: &OutOfSampleSplit) -> String {
    let mut out = String::new();
    for (k, v) in split.stats.fields() {
        writeln!(out, "{k}={v}").unwrap();
    }
    writeln!(out, "seed={}", split.seed).unwrap();
    out
}

/// Writes `train.txt`, `valid.txt`, `test.txt` and `stats.txt` into `dir`.
pub fn write_split(split: &OutOfSampleSplit, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    graph::write_triples(&split.train, dir.join("train.txt"))?;
    for (name, body) in [
        ("valid.txt", group_lines(&split.train, &split.valid)),
        ("test.txt", group_lines(&split.train, &split.test)),
        ("stats.txt", stats_text(split)),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn read_groups(train: &KnowledgeGraph, path: &Path) -> Result<Vec<OosGroup>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let format = |line: usize, message: String| Error::Format {
        path: path.to_owned(),
        line,
        message,
    };
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Neighbor>> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [h, r, t] = fields[..] else {
            return Err(format(
                lineno,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        };
        let rel = train
            .relation_id(r)
            .ok_or_else(|| format(lineno, format!("relation `{r}` not in training graph")))?;
        let (oos, neighbor) = match (train.entity_id(h), train.entity_id(t)) {
            (None, Some(u)) => (h, Neighbor::new(Direction::Outgoing, rel, u)),
            (Some(u), None) => (t, Neighbor::new(Direction::Incoming, rel, u)),
            (None, None) => {
                return Err(format(lineno, "both entities are out-of-sample".into()))
            }
            (Some(_), Some(_)) => {
                return Err(format(lineno, "no out-of-sample entity on this line".into()))
            }
        };
        let entry = groups.entry(oos.to_owned()).or_insert_with(|| {
            order.push(oos.to_owned());
            Vec::new()
        });
        if entry.contains(&neighbor) {
            return Err(format(lineno, "duplicate triple".into()));
        }
        entry.push(neighbor);
    }
    Ok(order
        .into_iter()
        .map(|entity| {
            let triples = groups.remove(&entity).unwrap_or_default();
            OosGroup { entity, triples }
        })
        .collect())
}

fn parse_stats(path: &Path) -> Result<(SplitStats, u64)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kv = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
            path: path.to_owned(),
            line: i + 1,
            message: "expected key=value".into(),
        })?;
        let v: u64 = v.trim().parse().map_err(|_| Error::Format {
            path: path.to_owned(),
            line: i + 1,
            message: format!("`{}` is not a non-negative integer", v.trim()),
        })?;
        kv.insert(k.trim().to_owned(), v);
    }
    let get = |k: &str| -> Result<u64> {
        kv.get(k).copied().ok_or_else(|| Error::Format {
            path: path.to_owned(),
            line: 0,
            message: format!("missing key `{k}`"),
        })
    };
    let stats = SplitStats {
        in_sample_entities: get("in_sample_entities")? as usize,
        oos_valid: get("oos_valid")? as usize,
        oos_test: get("oos_test")? as usize,
        relations: get("relations")? as usize,
        train_triples: get("train_triples")? as usize,
        valid_queries: get("valid_queries")? as usize,
        test_queries: get("test_queries")? as usize,
    };
    Ok((stats, get("seed")?))
}

/// Reads a dataset directory written by [`write_split`]. Evaluation lines are
/// grouped on the one entity absent from the training vocabulary.
pub fn read_split(dir: impl AsRef<Path>) -> Result<OutOfSampleSplit> {
    let dir = dir.as_ref();
    let train = graph::load_triples(dir.join("train.txt"), None)?;
    let valid = read_groups(&train, &dir.join("valid.txt"))?;
    let test = read_groups(&train, &dir.join("test.txt"))?;
    let stats_path = dir.join("stats.txt");
    let (stats, seed) = parse_stats(&stats_path)?;
    let recount = SplitStats::recount(&train, &valid, &test);
    if recount != stats {
        return Err(Error::Format {
            path: stats_path,
            line: 0,
            message: format!("recorded statistics {stats:?} disagree with recount {recount:?}"),
        });
    }
    Ok(OutOfSampleSplit {
        train,
        valid,
        test,
        seed,
        stats,
    })
}
