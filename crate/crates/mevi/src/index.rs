//! The assembled index: vector storage, the frozen codebook, cluster
//! postings, and an optional HNSW graph, kept consistent across document
//! adds and removes.
//!
//! Concurrency contract: searches take `&self` and may run concurrently;
//! `add_document` / `remove_document` take `&mut self`, so Rust's borrow
//! rules enforce the single-writer / multi-reader protocol.

use std::collections::HashMap;

use crate::cluster_index::ClusterIndex;
use crate::cluster_search::{beam_search_clusters, RankedClusters};
use crate::dense::{self, HnswIndex, HnswParams, Metric, ScoredDocs};
use crate::embedding::{EmbeddingSet, Matrix};
use crate::error::{MeviError, Result};
use crate::quantizer::{
    build_hierarchical_kmeans, build_rq, Code, Codebook, KmeansParams, QuantizationReport,
};

/// Which codebook builder to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builder {
    Rq,
    HierarchicalKmeans,
}

impl std::str::FromStr for Builder {
    type Err = MeviError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rq" => Ok(Builder::Rq),
            "hkmeans" => Ok(Builder::HierarchicalKmeans),
            other => Err(MeviError::InvalidArgument(format!(
                "unknown builder: {other}"
            ))),
        }
    }
}

/// A searchable collection. Row `i` of `vectors` belongs to ordinal `i`;
/// removed ordinals keep their rows (tombstoned) and ids are unique among
/// live documents only.
#[derive(Debug)]
pub struct MeviIndex {
    vectors: Matrix,
    ids: Vec<String>,
    codebook: Codebook,
    clusters: ClusterIndex,
    metric: Metric,
    hnsw: Option<HnswIndex>,
    id_to_ordinal: HashMap<String, usize>,
}

impl MeviIndex {
    /// Builds the codebook over `corpus` and indexes every document.
    pub fn build(
        corpus: EmbeddingSet,
        builder: Builder,
        m: usize,
        b: usize,
        params: &KmeansParams,
        metric: Metric,
    ) -> Result<(Self, QuantizationReport)> {
        let built = match builder {
            Builder::Rq => build_rq(&corpus, m, b, params)?,
            Builder::HierarchicalKmeans => build_hierarchical_kmeans(&corpus, m, b, params)?,
        };
        let clusters = ClusterIndex::build_index(built.codes)?;
        let (ids, vectors) = corpus.into_parts();
        let id_to_ordinal = ids
            .iter()
            .enumerate()
            .map(|(o, id)| (id.clone(), o))
            .collect();
        Ok((
            Self {
                vectors,
                ids,
                codebook: built.codebook,
                clusters,
                metric,
                hnsw: None,
                id_to_ordinal,
            },
            built.report,
        ))
    }

    /// Reassembles an index from persisted parts. `live` lists the ordinals
    /// that are not tombstoned, paired with their codes; `codes` covers every
    /// ordinal including dead ones.
    pub fn from_parts(
        vectors: Matrix,
        ids: Vec<String>,
        codebook: Codebook,
        codes: Vec<Code>,
        live: &[(usize, Code)],
        metric: Metric,
    ) -> Result<Self> {
        if ids.len() != vectors.rows() || codes.len() != vectors.rows() {
            return Err(MeviError::InvalidArgument(
                "ids, codes, and vectors must cover the same ordinals".into(),
            ));
        }
        let mut clusters = ClusterIndex::build_index(codes)?;
        let live_set: std::collections::HashSet<usize> = live.iter().map(|(o, _)| *o).collect();
        for ordinal in 0..vectors.rows() {
            if !live_set.contains(&ordinal) {
                clusters.tombstone(ordinal)?;
            }
        }
        for (ordinal, code) in live {
            if clusters.code_of(*ordinal) != code {
                return Err(MeviError::InvalidArgument(format!(
                    "code mismatch for ordinal {ordinal}"
                )));
            }
        }
        let id_to_ordinal = (0..vectors.rows())
            .filter(|o| clusters.is_live(*o))
            .map(|o| (ids[o].clone(), o))
            .collect();
        Ok(Self {
            vectors,
            ids,
            codebook,
            clusters,
            metric,
            hnsw: None,
            id_to_ordinal,
        })
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn clusters(&self) -> &ClusterIndex {
        &self.clusters
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.vectors.dim()
    }

    pub fn live_count(&self) -> usize {
        self.clusters.live_count()
    }

    pub fn total_count(&self) -> usize {
        self.clusters.total_count()
    }

    pub fn doc_id(&self, ordinal: usize) -> &str {
        &self.ids[ordinal]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn ordinal_of(&self, id: &str) -> Option<usize> {
        self.id_to_ordinal.get(id).copied()
    }

    pub fn is_live(&self, ordinal: usize) -> bool {
        self.clusters.is_live(ordinal)
    }

    pub fn hnsw(&self) -> Option<&HnswIndex> {
        self.hnsw.as_ref()
    }

    /// Builds (or rebuilds) the HNSW graph over every stored vector,
    /// including tombstoned rows, which keep routing and are filtered from
    /// results.
    pub fn build_hnsw(&mut self, params: HnswParams) -> Result<()> {
        self.hnsw = Some(HnswIndex::build(&self.vectors, self.metric, params)?);
        Ok(())
    }

    /// Encodes `v` against the frozen codebook and registers the document
    /// everywhere: vector store, posting list, trie, and the HNSW graph if
    /// one is attached.
    pub fn add_document(&mut self, id: &str, v: &[f32]) -> Result<usize> {
        if self.id_to_ordinal.contains_key(id) {
            return Err(MeviError::DuplicateId(id.to_string()));
        }
        if v.len() != self.dim() {
            return Err(MeviError::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(MeviError::NonFinite);
        }
        let code = self.codebook.encode(v)?;
        let ordinal = self.clusters.insert(code)?;
        self.vectors.push_row(v);
        self.ids.push(id.to_string());
        self.id_to_ordinal.insert(id.to_string(), ordinal);
        if let Some(hnsw) = self.hnsw.as_mut() {
            hnsw.insert(&self.vectors, ordinal)?;
        }
        Ok(ordinal)
    }

    /// Tombstones a live document. Its ordinal never comes back; re-adding
    /// the same id creates a fresh ordinal.
    pub fn remove_document(&mut self, id: &str) -> Result<()> {
        let ordinal = self
            .id_to_ordinal
            .remove(id)
            .ok_or_else(|| MeviError::UnknownId(id.to_string()))?;
        self.clusters.tombstone(ordinal)
    }

    /// True top-K by the index metric over live documents.
    pub fn exact_search(&self, q: &[f32], top_k: usize) -> Result<ScoredDocs> {
        dense::exact_search(&self.vectors, self.clusters.alive(), q, top_k, self.metric)
    }

    /// Exact scores over a caller-supplied candidate set.
    pub fn score_candidates(&self, q: &[f32], ordinals: &[usize]) -> Result<ScoredDocs> {
        dense::score_candidates(&self.vectors, self.clusters.alive(), q, ordinals, self.metric)
    }

    /// Approximate top-K through the attached HNSW graph.
    pub fn hnsw_search(&self, q: &[f32], top_k: usize, ef: usize) -> Result<ScoredDocs> {
        let hnsw = self
            .hnsw
            .as_ref()
            .ok_or_else(|| MeviError::InvalidArgument("no hnsw index attached".into()))?;
        hnsw.search(&self.vectors, self.clusters.alive(), q, top_k, ef)
    }

    /// Top-k clusters for a query via beam search over the codebook.
    pub fn rank_clusters(
        &self,
        q: &[f32],
        k: usize,
        beam_width: usize,
        constrained: bool,
    ) -> Result<RankedClusters> {
        beam_search_clusters(q, &self.codebook, &self.clusters, beam_width, k, constrained)
    }

    /// Live members of every cluster in `ranked`, in ranking order,
    /// deduplicated.
    pub fn cluster_candidates(&self, ranked: &RankedClusters) -> Result<Vec<usize>> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for (code, _) in ranked.iter() {
            for ordinal in self.clusters.members(code)? {
                if seen.insert(ordinal) {
                    out.push(ordinal);
                }
            }
        }
        Ok(out)
    }
}
