//! Dense retrieval backends: the exact top-K scan (the oracle every
//! approximate path is measured against), brute-force scoring of candidate
//! sets, and an HNSW graph index.

mod hnsw;

pub use hnsw::{HnswIndex, HnswParams};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::embedding::Matrix;
use crate::error::{MeviError, Result};

/// Similarity used for document scoring. Scores are always higher-is-better;
/// L2 reports negated distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    InnerProduct,
    Cosine,
    L2,
}

impl Metric {
    pub fn score(self, q: &[f32], x: &[f32]) -> f64 {
        match self {
            Metric::InnerProduct => dot(q, x),
            Metric::Cosine => {
                let qn = dot(q, q).sqrt();
                let xn = dot(x, x).sqrt();
                if qn == 0.0 || xn == 0.0 {
                    0.0
                } else {
                    dot(q, x) / (qn * xn)
                }
            }
            Metric::L2 => -crate::quantizer::l2_sq(q, x).sqrt(),
        }
    }

    /// Graph-traversal distance: smaller is closer. Exactly `-score`, so
    /// graph order and score order agree for every metric.
    pub(crate) fn distance(self, q: &[f32], x: &[f32]) -> f64 {
        -self.score(q, x)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Metric::InnerProduct => "ip",
            Metric::Cosine => "cosine",
            Metric::L2 => "l2",
        };
        write!(f, "{name}")
    }
}

impl FromStr for Metric {
    type Err = MeviError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ip" | "inner-product" | "dot" => Ok(Metric::InnerProduct),
            "cosine" | "cos" => Ok(Metric::Cosine),
            "l2" | "euclidean" => Ok(Metric::L2),
            other => Err(MeviError::InvalidArgument(format!(
                "unknown metric: {other}"
            ))),
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += (*x as f64) * (*y as f64);
    }
    acc
}

/// Ranked (ordinal, score) pairs; scores non-increasing and every ordinal
/// live at scoring time.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDocs {
    pub metric: Metric,
    pub entries: Vec<(usize, f64)>,
}

impl ScoredDocs {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ordinals(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|(o, _)| *o)
    }
}

fn sort_entries(entries: &mut [(usize, f64)]) {
    entries.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// True top-K over all live documents, ties by lower ordinal.
pub fn exact_search(
    vectors: &Matrix,
    alive: &[bool],
    q: &[f32],
    top_k: usize,
    metric: Metric,
) -> Result<ScoredDocs> {
    if top_k == 0 {
        return Err(MeviError::InvalidArgument("K must be at least 1".into()));
    }
    if q.len() != vectors.dim() {
        return Err(MeviError::DimensionMismatch {
            expected: vectors.dim(),
            got: q.len(),
        });
    }
    let mut entries: Vec<(usize, f64)> = (0..vectors.rows())
        .into_par_iter()
        .filter(|&o| alive[o])
        .map(|o| (o, metric.score(q, vectors.row(o))))
        .collect();
    if entries.is_empty() {
        return Err(MeviError::EmptyCorpus);
    }
    if entries.len() > top_k {
        entries.select_nth_unstable_by(top_k - 1, |a, b| {
            b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
        });
        entries.truncate(top_k);
    }
    sort_entries(&mut entries);
    Ok(ScoredDocs { metric, entries })
}

/// Exact scores over exactly the given candidate set, sorted. Errors on a
/// tombstoned ordinal.
pub fn score_candidates(
    vectors: &Matrix,
    alive: &[bool],
    q: &[f32],
    ordinals: &[usize],
    metric: Metric,
) -> Result<ScoredDocs> {
    if q.len() != vectors.dim() {
        return Err(MeviError::DimensionMismatch {
            expected: vectors.dim(),
            got: q.len(),
        });
    }
    let mut entries = Vec::with_capacity(ordinals.len());
    for &o in ordinals {
        if !alive.get(o).copied().unwrap_or(false) {
            return Err(MeviError::DeadDocument(o));
        }
        entries.push((o, metric.score(q, vectors.row(o))));
    }
    sort_entries(&mut entries);
    Ok(ScoredDocs { metric, entries })
}
