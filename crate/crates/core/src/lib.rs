//! Out-of-sample entity embeddings for non-attributed knowledge graphs.
//!
//! DistMult embeddings are trained so that an entity unseen at training time
//! can be embedded from its triples to known entities with a parameter-free
//! aggregation function, then evaluated by filtered leave-one-out ranking.

pub mod aggregation;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod split;
pub mod synthetic;
pub mod training;

pub use aggregation::{Aggregator, AggregatorKind};
pub use error::{Error, Result};
pub use evaluation::{evaluate, RankingReport};
pub use graph::{Direction, EntityId, KnowledgeGraph, Neighbor, RelationId, Triple, Vocab};
pub use model::EmbeddingModel;
pub use split::{build_split, read_split, write_split, OosGroup, OutOfSampleSplit, SplitStats};
pub use training::{train, TrainConfig};
