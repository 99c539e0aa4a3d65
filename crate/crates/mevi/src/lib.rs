//! Model-enhanced vector index: residual-quantization clustering of document
//! embeddings, beam search over cluster codes, exact and approximate dense
//! retrieval, and rank-based ensemble fusion.
//!
//! The index couples two retrieval routes over one embedding corpus. A
//! residual-quantization codebook assigns every document a short cluster
//! code; queries rank clusters by beam search over code prefixes (or via
//! rankings produced by an external model) and score the members of the top
//! clusters exactly. A dense route (exact scan or HNSW) retrieves by
//! embedding similarity alone. The ensemble unions both candidate sets and
//! re-ranks by `s0 + alpha / (beta * cluster_rank + 1)`.

pub mod cluster_index;
pub mod cluster_search;
pub mod dense;
pub mod embedding;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod index;
pub mod quantizer;
pub mod store;
pub mod trec;

#[cfg(test)]
pub(crate) mod test_util;

pub use cluster_index::{ClusterIndex, CodeTrie};
pub use cluster_search::{
    beam_search_clusters, exhaustive_cluster_ranking, load_external_rankings,
    write_external_rankings, RankedClusters,
};
pub use dense::{exact_search, score_candidates, HnswIndex, HnswParams, Metric, ScoredDocs};
pub use embedding::{EmbeddingSet, Matrix};
pub use ensemble::{
    cluster_score, ensemble_search, ensemble_search_with, grid_search, search_clusters_only,
    BeamParams, DenseMode, EnsembleParams, MissingPolicy, SearchMode,
};
pub use error::{MeviError, Result};
pub use eval::{
    bench_latency, gen_synthetic, mrr_at_k, recall_at_k, run_experiment, run_queries,
    ExperimentConfig, MetricSpec, Scenario, SyntheticSpec,
};
pub use index::{Builder, MeviIndex};
pub use quantizer::{
    build_hierarchical_kmeans, build_rq, kmeans, quantization_error, Code, Codebook,
    CodebookBuild, KmeansParams, KmeansResult, QuantizationReport, RqCodebook, TreeCodebook,
};
pub use trec::{read_qrels, read_run, write_qrels, write_run, Qrels, TrecRun};
