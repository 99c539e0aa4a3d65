//! Fusing cluster retrieval with dense retrieval.
//!
//! Two strategies: restrict the search to documents inside the top-k ranked
//! clusters, or union those candidates with a dense top-K' result and
//! re-rank everything by `s = s0 + alpha * s_c`, where `s0` is the exact
//! similarity score and `s_c = 1 / (beta * rank + 1)` decays with the rank
//! of the document's cluster.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Instant;

use rayon::prelude::*;

use crate::cluster_search::RankedClusters;
use crate::dense::ScoredDocs;
use crate::embedding::EmbeddingSet;
use crate::error::{MeviError, Result};
use crate::eval::MetricSpec;
use crate::trec::Qrels;
use crate::index::MeviIndex;
use crate::quantizer::Code;

/// Cluster score for documents outside every returned cluster: zero, or just
/// below the worst returned cluster's score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    #[default]
    Zero,
    BelowMin,
}

impl std::str::FromStr for MissingPolicy {
    type Err = MeviError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(MissingPolicy::Zero),
            "below-min" => Ok(MissingPolicy::BelowMin),
            other => Err(MeviError::InvalidArgument(format!(
                "unknown missing policy: {other}"
            ))),
        }
    }
}

const BELOW_MIN_MARGIN: f64 = 1e-6;

/// Rank-decayed cluster score. `rank` is the 0-based position of the
/// document's cluster among the `ranked_len` returned clusters, so the best
/// cluster always scores exactly 1.
pub fn cluster_score(
    rank: Option<usize>,
    ranked_len: usize,
    beta: f64,
    missing: MissingPolicy,
) -> f64 {
    match rank {
        Some(r) => 1.0 / (beta * r as f64 + 1.0),
        None => match missing {
            MissingPolicy::Zero => 0.0,
            MissingPolicy::BelowMin => {
                let min = 1.0 / (beta * (ranked_len.saturating_sub(1)) as f64 + 1.0);
                min - BELOW_MIN_MARGIN
            }
        },
    }
}

/// Convenience over [`cluster_score`] that looks the document's cluster up
/// in the ranking.
pub fn doc_cluster_score(
    index: &MeviIndex,
    ordinal: usize,
    ranked: &RankedClusters,
    beta: f64,
    missing: MissingPolicy,
) -> f64 {
    let rank = ranked.rank_of(index.clusters().code_of(ordinal));
    cluster_score(rank, ranked.k(), beta, missing)
}

/// Ensemble hyperparameters: `alpha` weights the cluster score, `beta`
/// controls its rank decay, `clusters_k` is how many clusters to retrieve,
/// `top_docs` how many documents to return, and `dense_depth` how deep the
/// dense candidate list goes (defaults to `top_docs`).
#[derive(Debug, Clone, Copy)]
pub struct EnsembleParams {
    pub alpha: f64,
    pub beta: f64,
    pub clusters_k: usize,
    pub top_docs: usize,
    pub missing: MissingPolicy,
    pub dense_depth: Option<usize>,
}

impl EnsembleParams {
    pub fn new(clusters_k: usize, top_docs: usize) -> Self {
        Self {
            alpha: 0.5,
            beta: 0.02,
            clusters_k,
            top_docs,
            missing: MissingPolicy::Zero,
            dense_depth: None,
        }
    }
}

/// Beam-search knobs for cluster ranking. `width` defaults to
/// `max(k, 100)`.
#[derive(Debug, Clone, Copy)]
pub struct BeamParams {
    pub width: Option<usize>,
    pub constrained: bool,
}

impl Default for BeamParams {
    fn default() -> Self {
        Self {
            width: None,
            constrained: true,
        }
    }
}

/// Dense backend used for the embedding-search side of the ensemble.
#[derive(Debug, Clone, Copy)]
pub enum DenseMode {
    Exact,
    Hnsw { ef: usize },
}

fn dense_search(index: &MeviIndex, q: &[f32], top: usize, mode: DenseMode) -> Result<ScoredDocs> {
    match mode {
        DenseMode::Exact => index.exact_search(q, top),
        DenseMode::Hnsw { ef } => index.hnsw_search(q, top, ef),
    }
}

/// Ranks clusters for one query, clamping `k` to the number of non-empty
/// clusters (with a warning) in constrained mode.
pub fn rank_clusters_for(
    index: &MeviIndex,
    q: &[f32],
    k: usize,
    beam: &BeamParams,
) -> Result<RankedClusters> {
    let mut k = k;
    if beam.constrained {
        let non_empty = index.clusters().non_empty_clusters();
        if k > non_empty {
            log::warn!("requested {k} clusters but only {non_empty} are non-empty; clamping");
            k = non_empty.max(1);
        }
    }
    let width = beam.width.unwrap_or_else(|| k.max(100)).max(k);
    index.rank_clusters(q, k, width, beam.constrained)
}

/// Search restricted to the members of pre-ranked clusters, ordered by the
/// exact similarity score. May return fewer than `top_docs` when the
/// clusters are small.
pub fn search_in_clusters(
    index: &MeviIndex,
    q: &[f32],
    ranked: &RankedClusters,
    top_docs: usize,
) -> Result<ScoredDocs> {
    let candidates = index.cluster_candidates(ranked)?;
    let mut scored = index.score_candidates(q, &candidates)?;
    scored.entries.truncate(top_docs);
    Ok(scored)
}

/// Cluster-only retrieval: rank clusters, then brute-force score their
/// members.
pub fn search_clusters_only(
    index: &MeviIndex,
    q: &[f32],
    k: usize,
    top_docs: usize,
    beam: &BeamParams,
) -> Result<ScoredDocs> {
    let ranked = rank_clusters_for(index, q, k, beam)?;
    search_in_clusters(index, q, &ranked, top_docs)
}

fn ensemble_impl(
    index: &MeviIndex,
    q: &[f32],
    ranked: &RankedClusters,
    params: &EnsembleParams,
    dense: DenseMode,
) -> Result<(ScoredDocs, f64, f64)> {
    let depth = params.dense_depth.unwrap_or(params.top_docs);

    let dense_start = Instant::now();
    let dense_docs = dense_search(index, q, depth, dense)?;
    let dense_ms = dense_start.elapsed().as_secs_f64() * 1e3;

    let fusion_start = Instant::now();
    let mut candidates = index.cluster_candidates(ranked)?;
    let mut seen: HashSet<usize> = candidates.iter().copied().collect();
    for ordinal in dense_docs.ordinals() {
        if seen.insert(ordinal) {
            candidates.push(ordinal);
        }
    }

    let rank_map: HashMap<&Code, usize> = ranked
        .iter()
        .enumerate()
        .map(|(r, (code, _))| (code, r))
        .collect();

    // (ordinal, fused score, s0) — ties break by higher s0, then ordinal.
    let mut fused: Vec<(usize, f64, f64)> = candidates
        .into_iter()
        .map(|ordinal| {
            let s0 = index
                .metric()
                .score(q, index.vectors().row(ordinal));
            let rank = rank_map.get(index.clusters().code_of(ordinal)).copied();
            let sc = cluster_score(rank, ranked.k(), params.beta, params.missing);
            (ordinal, s0 + params.alpha * sc, s0)
        })
        .collect();
    fused.sort_unstable_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(b.2.total_cmp(&a.2))
            .then(a.0.cmp(&b.0))
    });
    fused.truncate(params.top_docs);
    let fusion_ms = fusion_start.elapsed().as_secs_f64() * 1e3;

    Ok((
        ScoredDocs {
            metric: index.metric(),
            entries: fused.into_iter().map(|(o, s, _)| (o, s)).collect(),
        },
        dense_ms,
        fusion_ms,
    ))
}

/// Ensemble retrieval against a pre-computed cluster ranking (e.g. loaded
/// from an external model's output).
pub fn ensemble_search_with(
    index: &MeviIndex,
    q: &[f32],
    ranked: &RankedClusters,
    params: &EnsembleParams,
    dense: DenseMode,
) -> Result<ScoredDocs> {
    ensemble_impl(index, q, ranked, params, dense).map(|(docs, _, _)| docs)
}

/// Full ensemble retrieval: beam-search the clusters, union their members
/// with the dense top-K', and re-rank by the fused score.
pub fn ensemble_search(
    index: &MeviIndex,
    q: &[f32],
    params: &EnsembleParams,
    dense: DenseMode,
    beam: &BeamParams,
) -> Result<ScoredDocs> {
    let ranked = rank_clusters_for(index, q, params.clusters_k, beam)?;
    ensemble_search_with(index, q, &ranked, params, dense)
}

/// One retrieval pipeline, selectable per query batch.
#[derive(Debug, Clone)]
pub enum SearchMode {
    Exact {
        top_docs: usize,
    },
    Hnsw {
        top_docs: usize,
        ef: usize,
    },
    Clusters {
        k: usize,
        top_docs: usize,
        beam: BeamParams,
    },
    Ensemble {
        params: EnsembleParams,
        dense: DenseMode,
        beam: BeamParams,
    },
}

/// Wall-clock milliseconds spent in each pipeline stage for one query.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseBreakdown {
    pub cluster_ms: f64,
    pub dense_ms: f64,
    pub fusion_ms: f64,
}

/// Runs one query through `mode`. `external` supplies the cluster ranking
/// for the cluster and ensemble modes instead of beam search when given.
pub fn run_query(
    index: &MeviIndex,
    mode: &SearchMode,
    external: Option<&RankedClusters>,
    q: &[f32],
) -> Result<(ScoredDocs, PhaseBreakdown)> {
    let mut phases = PhaseBreakdown::default();
    match mode {
        SearchMode::Exact { top_docs } => {
            let start = Instant::now();
            let docs = index.exact_search(q, *top_docs)?;
            phases.dense_ms = start.elapsed().as_secs_f64() * 1e3;
            Ok((docs, phases))
        }
        SearchMode::Hnsw { top_docs, ef } => {
            let start = Instant::now();
            let docs = index.hnsw_search(q, *top_docs, *ef)?;
            phases.dense_ms = start.elapsed().as_secs_f64() * 1e3;
            Ok((docs, phases))
        }
        SearchMode::Clusters { k, top_docs, beam } => {
            let start = Instant::now();
            let ranked = match external {
                Some(r) => r.truncated(*k),
                None => rank_clusters_for(index, q, *k, beam)?,
            };
            phases.cluster_ms = start.elapsed().as_secs_f64() * 1e3;

            let start = Instant::now();
            let docs = search_in_clusters(index, q, &ranked, *top_docs)?;
            phases.dense_ms = start.elapsed().as_secs_f64() * 1e3;
            Ok((docs, phases))
        }
        SearchMode::Ensemble {
            params,
            dense,
            beam,
        } => {
            let start = Instant::now();
            let ranked = match external {
                Some(r) => r.truncated(params.clusters_k),
                None => rank_clusters_for(index, q, params.clusters_k, beam)?,
            };
            phases.cluster_ms = start.elapsed().as_secs_f64() * 1e3;

            let (docs, dense_ms, fusion_ms) = ensemble_impl(index, q, &ranked, params, *dense)?;
            phases.dense_ms = dense_ms;
            phases.fusion_ms = fusion_ms;
            Ok((docs, phases))
        }
    }
}

/// One evaluated grid cell.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct GridCell {
    pub alpha: f64,
    pub beta: f64,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best_alpha: f64,
    pub best_beta: f64,
    pub best_value: f64,
    pub table: Vec<GridCell>,
    pub evaluated_queries: usize,
}

/// Where per-query cluster rankings come from.
pub enum ClusterSource<'a> {
    Beam(BeamParams),
    External(&'a BTreeMap<String, RankedClusters>),
}

struct PreparedQuery {
    /// (s0, cluster rank, relevant) per candidate.
    candidates: Vec<(f64, Option<usize>, bool)>,
    ranked_len: usize,
    relevant_total: usize,
}

/// Evaluates `target` for every (alpha, beta) pair over the query set and
/// returns the argmax (ties to smaller alpha, then smaller beta) plus the
/// full table.
///
/// Candidate sets and exact scores are shared across cells, so the grid
/// costs one retrieval pass plus a re-rank per cell.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    index: &MeviIndex,
    queries: &EmbeddingSet,
    qrels: &Qrels,
    alphas: &[f64],
    betas: &[f64],
    params: &EnsembleParams,
    dense: DenseMode,
    source: &ClusterSource<'_>,
    target: MetricSpec,
) -> Result<GridSearchResult> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(MeviError::InvalidArgument("empty grid".into()));
    }
    if queries.is_empty() {
        return Err(MeviError::EmptyInput);
    }

    let depth = params.dense_depth.unwrap_or(params.top_docs);
    let prepared: Vec<PreparedQuery> = (0..queries.count())
        .into_par_iter()
        .map(|qi| -> Result<Option<PreparedQuery>> {
            let qid = queries.id(qi);
            let Some(relevant) = qrels.relevant(qid).filter(|r| !r.is_empty()) else {
                log::warn!("query {qid} has no relevance judgments; skipped");
                return Ok(None);
            };
            let q = queries.vector(qi);
            let ranked = match source {
                ClusterSource::Beam(beam) => {
                    rank_clusters_for(index, q, params.clusters_k, beam)?
                }
                ClusterSource::External(map) => map
                    .get(qid)
                    .ok_or_else(|| {
                        MeviError::InvalidArgument(format!(
                            "no external cluster ranking for query {qid}"
                        ))
                    })?
                    .truncated(params.clusters_k),
            };
            let dense_docs = dense_search(index, q, depth, dense)?;
            let mut ordinals = index.cluster_candidates(&ranked)?;
            let mut seen: HashSet<usize> = ordinals.iter().copied().collect();
            for o in dense_docs.ordinals() {
                if seen.insert(o) {
                    ordinals.push(o);
                }
            }
            let rank_map: HashMap<&Code, usize> = ranked
                .iter()
                .enumerate()
                .map(|(r, (code, _))| (code, r))
                .collect();
            let candidates = ordinals
                .into_iter()
                .map(|o| {
                    let s0 = index.metric().score(q, index.vectors().row(o));
                    let rank = rank_map.get(index.clusters().code_of(o)).copied();
                    (s0, rank, relevant.contains(index.doc_id(o)))
                })
                .collect();
            Ok(Some(PreparedQuery {
                candidates,
                ranked_len: ranked.k(),
                relevant_total: relevant.len(),
            }))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    if prepared.is_empty() {
        return Err(MeviError::EmptyEvaluation);
    }

    let mut alphas = alphas.to_vec();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let mut betas = betas.to_vec();
    betas.sort_by(f64::total_cmp);
    betas.dedup();

    let cells: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| betas.iter().map(move |&b| (a, b)))
        .collect();

    let table: Vec<GridCell> = cells
        .par_iter()
        .map(|&(alpha, beta)| {
            let mut sum = 0.0f64;
            for pq in &prepared {
                let mut scored: Vec<(f64, f64, bool)> = pq
                    .candidates
                    .iter()
                    .map(|&(s0, rank, rel)| {
                        let sc = cluster_score(rank, pq.ranked_len, beta, params.missing);
                        (s0 + alpha * sc, s0, rel)
                    })
                    .collect();
                scored.sort_unstable_by(|a, b| {
                    b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1))
                });
                scored.truncate(params.top_docs);
                let flags: Vec<bool> = scored.iter().map(|(_, _, rel)| *rel).collect();
                sum += target.from_flags(&flags, pq.relevant_total);
            }
            GridCell {
                alpha,
                beta,
                value: sum / prepared.len() as f64,
            }
        })
        .collect();

    let mut best = table[0];
    for cell in &table[1..] {
        if cell.value > best.value {
            best = *cell;
        }
    }

    Ok(GridSearchResult {
        best_alpha: best.alpha,
        best_beta: best.beta,
        best_value: best.value,
        table,
        evaluated_queries: prepared.len(),
    })
}
