//! Exhaustive cosine-similarity index with average query expansion.

use std::collections::HashSet;

use serde::Serialize;

use crate::aggregation::{normalize_in_place, Descriptor, Stage};
use crate::error::{CrowError, Result};
use crate::norm::NormOrder;

/// Maximum deviation from unit L2 norm accepted for indexed vectors and queries.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

pub const DEFAULT_QE_DEPTH: usize = 10;

/// Flat index of unit-norm descriptors in insertion order.
#[derive(Debug, Clone, Default)]
pub struct Index {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f64>,
    skipped: Vec<String>,
}

impl Index {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Vector dimensionality; 0 for an empty index.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Ids of zero-flagged descriptors left out of the index.
    pub fn skipped(&self) -> &[String] {
        &self.skipped
    }

    pub fn vector(&self, pos: usize) -> &[f64] {
        &self.vectors[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    fn scores(&self, q: &[f64]) -> Vec<f64> {
        self.vectors
            .chunks_exact(self.dim.max(1))
            .map(|v| v.iter().zip(q).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Expansion {
    pub requested: usize,
    pub used: usize,
}

impl Expansion {
    pub fn clamped(&self) -> bool {
        self.used < self.requested
    }
}

/// Retrieval result, best first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<Hit>,
    pub expansion: Option<Expansion>,
}

impl RankedList {
    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.hits.iter().map(|h| h.id.as_str())
    }
}

fn check_unit(d: &Descriptor) -> Result<()> {
    if !matches!(d.stage, Stage::Normalized | Stage::Final) {
        return Err(CrowError::Precondition(format!(
            "descriptor '{}' is at stage {:?}; only normalized or final descriptors can be searched",
            d.id, d.stage
        )));
    }
    let n = d.l2_norm();
    if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(CrowError::Precondition(format!(
            "descriptor '{}' has L2 norm {n}, expected 1",
            d.id
        )));
    }
    Ok(())
}

/// Builds an index over all non-zero descriptors, keeping input order.
pub fn build_index(descriptors: &[Descriptor]) -> Result<Index> {
    let mut seen = HashSet::new();
    let mut index = Index::default();
    for d in descriptors {
        if !seen.insert(d.id.as_str()) {
            return Err(CrowError::DuplicateId(d.id.clone()));
        }
        if d.zero {
            index.skipped.push(d.id.clone());
            continue;
        }
        if index.ids.is_empty() {
            index.dim = d.dim();
        } else if d.dim() != index.dim {
            return Err(CrowError::Dimension {
                axis: "descriptor dim",
                expected: index.dim,
                actual: d.dim(),
            });
        }
        check_unit(d)?;
        index.ids.push(d.id.clone());
        index.vectors.extend_from_slice(&d.values);
    }
    Ok(index)
}

fn order_by_score(idx: &Index, q: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let scores = idx.scores(q);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps insertion order among exactly equal scores.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    (scores, order)
}

fn rank(idx: &Index, query_id: &str, q: &[f64], top: Option<usize>) -> RankedList {
    let (scores, order) = order_by_score(idx, q);
    let take = top.unwrap_or(order.len()).min(order.len());
    RankedList {
        query_id: query_id.to_string(),
        hits: order[..take]
            .iter()
            .map(|&p| Hit {
                id: idx.ids[p].clone(),
                score: scores[p],
            })
            .collect(),
        expansion: None,
    }
}

fn check_query(idx: &Index, q: &Descriptor) -> Result<()> {
    if q.zero {
        return Err(CrowError::Precondition(format!(
            "query '{}' is a zero descriptor",
            q.id
        )));
    }
    if !idx.is_empty() && q.dim() != idx.dim {
        return Err(CrowError::Dimension {
            axis: "query dim",
            expected: idx.dim,
            actual: q.dim(),
        });
    }
    check_unit(q)
}

/// Exhaustive ranking by cosine similarity; `top` truncates the list.
pub fn query(idx: &Index, q: &Descriptor, top: Option<usize>) -> Result<RankedList> {
    check_query(idx, q)?;
    Ok(rank(idx, &q.id, &q.values, top))
}

/// Average query expansion: sums the vectors of the top `depth` results,
/// L2-normalizes the sum and queries again. `depth` is clamped to the
/// index size.
pub fn query_expand(
    idx: &Index,
    q: &Descriptor,
    depth: usize,
    top: Option<usize>,
) -> Result<RankedList> {
    if depth == 0 {
        return Err(CrowError::Parameter(
            "query expansion depth must be at least 1".into(),
        ));
    }
    if idx.is_empty() {
        return Err(CrowError::Precondition(
            "query expansion needs a non-empty index".into(),
        ));
    }
    check_query(idx, q)?;
    let (_, first) = order_by_score(idx, &q.values);
    let used = depth.min(idx.len());
    let mut expanded = vec![0.0f64; idx.dim];
    for &pos in &first[..used] {
        for (acc, v) in expanded.iter_mut().zip(idx.vector(pos)) {
            *acc += v;
        }
    }
    let mut result = if normalize_in_place(&mut expanded, NormOrder::L2) {
        rank(idx, &q.id, &expanded, top)
    } else {
        rank(idx, &q.id, &q.values, top)
    };
    result.expansion = Some(Expansion {
        requested: depth,
        used,
    });
    Ok(result)
}
