//! Embeddings for entities that have no table row of their own, computed from
//! the trained embeddings of their neighborhood.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::Neighbor;
use crate::model::EmbeddingModel;
use crate::numerics::{self, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggregatorKind {
    /// Mean of `z_r ⊙ z_u` over the neighborhood.
    ErAvg,
    /// Ridge least squares with unit-normalized targets `b[i] = ‖z_r ⊙ z_u‖`.
    Ls,
    /// Ridge least squares with `b[i] = 1`.
    LsU,
    /// Mean of the neighbor entity embeddings.
    EAvg,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 4] = [Self::ErAvg, Self::Ls, Self::LsU, Self::EAvg];

    pub fn token(self) -> &'static str {
        match self {
            Self::ErAvg => "eravg",
            Self::Ls => "ls",
            Self::LsU => "ls-u",
            Self::EAvg => "eavg",
        }
    }

    pub fn is_least_squares(self) -> bool {
        matches!(self, Self::Ls | Self::LsU)
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.token().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown aggregator `{s}` (expected eravg, ls, ls-u or eavg)"
                ))
            })
    }
}

/// An aggregation function together with its ridge regularizer (only read by
/// the least-squares variants).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregator {
    pub kind: AggregatorKind,
    pub lambda: f64,
}

impl Aggregator {
    pub fn new(kind: AggregatorKind, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "aggregation regularizer must be finite and non-negative, got {lambda}"
            )));
        }
        Ok(Self { kind, lambda })
    }

    pub fn er_avg() -> Self {
        Self {
            kind: AggregatorKind::ErAvg,
            lambda: 0.0,
        }
    }

    pub fn e_avg() -> Self {
        Self {
            kind: AggregatorKind::EAvg,
            lambda: 0.0,
        }
    }

    pub fn aggregate(&self, nbrs: &[Neighbor], m: &EmbeddingModel) -> Result<Vec<f64>> {
        if nbrs.is_empty() {
            return Err(Error::EmptyNeighborhood);
        }
        let d = m.dim();
        match self.kind {
            AggregatorKind::ErAvg => {
                let mut out = vec![0.0; d];
                for n in nbrs {
                    let zr = m.lookup_relation(n.rel)?;
                    let zu = m.lookup_entity(n.other)?;
                    for ((o, r), u) in out.iter_mut().zip(zr).zip(zu) {
                        *o += r * u;
                    }
                }
                scale(&mut out, nbrs.len());
                Ok(out)
            }
            AggregatorKind::EAvg => {
                let mut out = vec![0.0; d];
                for n in nbrs {
                    let zu = m.lookup_entity(n.other)?;
                    for (o, u) in out.iter_mut().zip(zu) {
                        *o += u;
                    }
                }
                scale(&mut out, nbrs.len());
                Ok(out)
            }
            AggregatorKind::Ls | AggregatorKind::LsU => {
                let (a, b) = self.least_squares_system(nbrs, m)?;
                numerics::ridge_solve(&a, &b, self.lambda)
            }
        }
    }

    /// Design matrix rows `z_r ⊙ z_u` and targets for the least-squares variants.
    pub fn least_squares_system(
        &self,
        nbrs: &[Neighbor],
        m: &EmbeddingModel,
    ) -> Result<(Mat, Vec<f64>)> {
        let d = m.dim();
        let mut data = Vec::with_capacity(nbrs.len() * d);
        let mut b = Vec::with_capacity(nbrs.len());
        for n in nbrs {
            let row = numerics::hadamard(m.lookup_relation(n.rel)?, m.lookup_entity(n.other)?)?;
            b.push(match self.kind {
                AggregatorKind::LsU => 1.0,
                _ => numerics::norm2(&row),
            });
            data.extend(row);
        }
        Ok((Mat::from_vec(nbrs.len(), d, data)?, b))
    }

    /// Pushes `∂L/∂θ` for every table row the aggregate read, given
    /// `grad_out = ∂L/∂aggregate`.
    ///
    /// The averaging variants are differentiated exactly. The least-squares
    /// variants stop the gradient at their output and emit nothing.
    pub fn backprop(
        &self,
        nbrs: &[Neighbor],
        m: &EmbeddingModel,
        grad_out: &[f64],
        mut sink: impl FnMut(RowGrad<'_>),
    ) {
        if nbrs.is_empty() {
            return;
        }
        let inv = 1.0 / nbrs.len() as f64;
        match self.kind {
            AggregatorKind::ErAvg => {
                let mut buf = vec![0.0; grad_out.len()];
                for n in nbrs {
                    let zr = m.relation(n.rel);
                    let zu = m.entity(n.other);
                    for ((b, g), u) in buf.iter_mut().zip(grad_out).zip(zu) {
                        *b = g * u * inv;
                    }
                    sink(RowGrad::Relation(n.rel, &buf));
                    for ((b, g), r) in buf.iter_mut().zip(grad_out).zip(zr) {
                        *b = g * r * inv;
                    }
                    sink(RowGrad::Entity(n.other, &buf));
                }
            }
            AggregatorKind::EAvg => {
                let buf: Vec<f64> = grad_out.iter().map(|g| g * inv).collect();
                for n in nbrs {
                    sink(RowGrad::Entity(n.other, &buf));
                }
            }
            AggregatorKind::Ls | AggregatorKind::LsU => {}
        }
    }
}

/// Gradient contribution for one parameter row.
#[derive(Debug, Clone, Copy)]
pub enum RowGrad<'a> {
    Entity(crate::graph::EntityId, &'a [f64]),
    Relation(crate::graph::RelationId, &'a [f64]),
}

fn scale(v: &mut [f64], n: usize) {
    let inv = 1.0 / n as f64;
    v.iter_mut().for_each(|x| *x *= inv);
}

/// Convenience wrapper over [`Aggregator::aggregate`].
pub fn aggregate(agg: &Aggregator, nbrs: &[Neighbor], m: &EmbeddingModel) -> Result<Vec<f64>> {
    agg.aggregate(nbrs, m)
}
