//! Retrieval evaluation: Recall@K and MRR@K over TREC runs, synthetic corpus
//! generation, the latency harness, and the canned experiment scenarios.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::cluster_search::RankedClusters;
use crate::dense::{HnswParams, Metric};
use crate::embedding::{EmbeddingSet, Matrix};
use crate::ensemble::{
    rank_clusters_for, run_query, BeamParams, DenseMode, EnsembleParams, SearchMode,
};
use crate::error::{MeviError, Result};
use crate::index::{Builder, MeviIndex};
use crate::quantizer::KmeansParams;
use crate::trec::{Qrels, TrecRun};

/// A metric request in `name@K` form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricSpec {
    RecallAt(usize),
    MrrAt(usize),
}

impl MetricSpec {
    /// Evaluates one query from the relevance flags of its ranked list.
    /// `relevant_total` is the full size of the query's relevant set.
    pub fn from_flags(&self, flags: &[bool], relevant_total: usize) -> f64 {
        match self {
            MetricSpec::RecallAt(k) => {
                if relevant_total == 0 {
                    return 0.0;
                }
                let hits = flags.iter().take(*k).filter(|f| **f).count();
                hits as f64 / relevant_total as f64
            }
            MetricSpec::MrrAt(k) => flags
                .iter()
                .take(*k)
                .position(|f| *f)
                .map(|i| 1.0 / (i as f64 + 1.0))
                .unwrap_or(0.0),
        }
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpec::RecallAt(k) => write!(f, "recall@{k}"),
            MetricSpec::MrrAt(k) => write!(f, "mrr@{k}"),
        }
    }
}

impl FromStr for MetricSpec {
    type Err = MeviError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, k) = s
            .split_once('@')
            .ok_or_else(|| MeviError::InvalidArgument(format!("metric must be name@K: {s:?}")))?;
        let k: usize = k
            .parse()
            .map_err(|_| MeviError::InvalidArgument(format!("bad metric cutoff in {s:?}")))?;
        if k == 0 {
            return Err(MeviError::InvalidArgument("metric cutoff must be >= 1".into()));
        }
        match name {
            "recall" | "r" => Ok(MetricSpec::RecallAt(k)),
            "mrr" => Ok(MetricSpec::MrrAt(k)),
            other => Err(MeviError::InvalidArgument(format!(
                "unknown metric: {other}"
            ))),
        }
    }
}

/// Mean of `spec` over the queries shared by the run and the qrels. Run
/// queries without judgments are skipped with a warning; judged queries with
/// zero relevant docs are excluded from the mean and counted.
pub fn evaluate(run: &TrecRun, qrels: &Qrels, spec: MetricSpec) -> Result<f64> {
    let mut sum = 0.0f64;
    let mut evaluated = 0usize;
    let mut zero_relevant = 0usize;
    for (qid, ranking) in &run.rankings {
        match qrels.relevant(qid) {
            None => log::warn!("query {qid} missing from qrels; skipped"),
            Some(rel) if rel.is_empty() => zero_relevant += 1,
            Some(rel) => {
                let flags: Vec<bool> = ranking.iter().map(|(doc, _)| rel.contains(doc)).collect();
                sum += spec.from_flags(&flags, rel.len());
                evaluated += 1;
            }
        }
    }
    if zero_relevant > 0 {
        log::info!("{zero_relevant} queries had no relevant documents and were excluded");
    }
    if evaluated == 0 {
        return Err(MeviError::EmptyEvaluation);
    }
    Ok(sum / evaluated as f64)
}

/// Proportion of each query's relevant documents found in its top-K.
pub fn recall_at_k(run: &TrecRun, qrels: &Qrels, k: usize) -> Result<f64> {
    evaluate(run, qrels, MetricSpec::RecallAt(k))
}

/// Reciprocal rank of the first relevant document within the top-K.
pub fn mrr_at_k(run: &TrecRun, qrels: &Qrels, k: usize) -> Result<f64> {
    evaluate(run, qrels, MetricSpec::MrrAt(k))
}

/// Shape of a synthetic corpus: Gaussian cluster mixture for documents,
/// noisy copies of documents as queries.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_docs: usize,
    pub dim: usize,
    pub n_clusters: usize,
    pub noise_sigma: f64,
    pub n_queries: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_docs: 10_000,
            dim: 32,
            n_clusters: 64,
            noise_sigma: 0.1,
            n_queries: 500,
            seed: 42,
        }
    }
}

/// A generated corpus: documents, queries, and the qrels marking each
/// query's source document as its single relevant result.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub docs: EmbeddingSet,
    pub queries: EmbeddingSet,
    pub qrels: Qrels,
}

fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if norm > 0.0 {
        let inv = (1.0 / norm) as f32;
        for x in v.iter_mut() {
            *x *= inv;
        }
    }
}

/// Draws documents from a mixture of unit-normalized Gaussians and queries
/// as renormalized noisy copies of uniformly chosen documents. Deterministic
/// per seed.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.n_docs == 0 || spec.dim == 0 || spec.n_clusters == 0 || spec.n_queries == 0 {
        return Err(MeviError::InvalidArgument(
            "all synthetic sizes must be at least 1".into(),
        ));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(MeviError::InvalidArgument(
            "noise_sigma must be finite and non-negative".into(),
        ));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut centers = Matrix::with_capacity(spec.dim, spec.n_clusters);
    for _ in 0..spec.n_clusters {
        let row: Vec<f32> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
        centers.push_row(&row);
    }

    let mut docs = Matrix::with_capacity(spec.dim, spec.n_docs);
    for i in 0..spec.n_docs {
        let center = centers.row(i % spec.n_clusters);
        let mut row: Vec<f32> = center
            .iter()
            .map(|c| c + rng.sample::<f32, _>(StandardNormal))
            .collect();
        normalize(&mut row);
        docs.push_row(&row);
    }

    let sigma = spec.noise_sigma as f32;
    let mut queries = Matrix::with_capacity(spec.dim, spec.n_queries);
    let mut qrels = Qrels::default();
    let mut qids = Vec::with_capacity(spec.n_queries);
    for j in 0..spec.n_queries {
        let target = rng.random_range(0..spec.n_docs);
        let mut row: Vec<f32> = docs
            .row(target)
            .iter()
            .map(|x| x + sigma * rng.sample::<f32, _>(StandardNormal))
            .collect();
        normalize(&mut row);
        queries.push_row(&row);
        let qid = format!("q{j}");
        qrels.add(&qid, &format!("d{target}"));
        qids.push(qid);
    }

    let doc_ids = (0..spec.n_docs).map(|i| format!("d{i}")).collect();
    Ok(SyntheticData {
        docs: EmbeddingSet::new(doc_ids, docs)?,
        queries: EmbeddingSet::new(qids, queries)?,
        qrels,
    })
}

/// Runs every query through one pipeline in parallel and collects a run.
pub fn run_queries(
    index: &MeviIndex,
    mode: &SearchMode,
    external: Option<&BTreeMap<String, RankedClusters>>,
    queries: &EmbeddingSet,
    tag: &str,
) -> Result<TrecRun> {
    let rankings: Vec<(String, Vec<(String, f64)>)> = (0..queries.count())
        .into_par_iter()
        .map(|qi| {
            let qid = queries.id(qi);
            let ranked = match external {
                Some(map) => Some(map.get(qid).ok_or_else(|| {
                    MeviError::InvalidArgument(format!("no external ranking for query {qid}"))
                })?),
                None => None,
            };
            let (docs, _) = run_query(index, mode, ranked, queries.vector(qi))?;
            let ranking = docs
                .entries
                .iter()
                .map(|(o, s)| (index.doc_id(*o).to_string(), *s))
                .collect();
            Ok((qid.to_string(), ranking))
        })
        .collect::<Result<_>>()?;
    let mut run = TrecRun::new(tag);
    run.rankings = rankings.into_iter().collect();
    Ok(run)
}

/// Wall-clock latency summary with a per-stage breakdown, all in
/// milliseconds.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub samples: usize,
    pub queries: usize,
    pub iters: usize,
    /// Mean milliseconds per stage: cluster search, dense search, fusion.
    pub components: BTreeMap<String, f64>,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times per-query latency over `iters` passes of the query set, after
/// `warmup` unmeasured passes.
pub fn bench_latency(
    index: &MeviIndex,
    mode: &SearchMode,
    external: Option<&BTreeMap<String, RankedClusters>>,
    queries: &EmbeddingSet,
    warmup: usize,
    iters: usize,
) -> Result<LatencyStats> {
    if iters == 0 {
        return Err(MeviError::InvalidArgument("iters must be at least 1".into()));
    }
    if queries.is_empty() {
        return Err(MeviError::EmptyInput);
    }
    let lookup = |qi: usize| -> Result<Option<&RankedClusters>> {
        match external {
            Some(map) => {
                let qid = queries.id(qi);
                Ok(Some(map.get(qid).ok_or_else(|| {
                    MeviError::InvalidArgument(format!("no external ranking for query {qid}"))
                })?))
            }
            None => Ok(None),
        }
    };

    for _ in 0..warmup {
        for qi in 0..queries.count() {
            run_query(index, mode, lookup(qi)?, queries.vector(qi))?;
        }
    }

    let mut samples = Vec::with_capacity(iters * queries.count());
    let mut cluster_ms = 0.0f64;
    let mut dense_ms = 0.0f64;
    let mut fusion_ms = 0.0f64;
    for _ in 0..iters {
        for qi in 0..queries.count() {
            let ranked = lookup(qi)?;
            let start = Instant::now();
            let (_, phases) = run_query(index, mode, ranked, queries.vector(qi))?;
            samples.push(start.elapsed().as_secs_f64() * 1e3);
            cluster_ms += phases.cluster_ms;
            dense_ms += phases.dense_ms;
            fusion_ms += phases.fusion_ms;
        }
    }

    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let components = BTreeMap::from([
        ("cluster".to_string(), cluster_ms / n),
        ("dense".to_string(), dense_ms / n),
        ("fusion".to_string(), fusion_ms / n),
    ]);
    Ok(LatencyStats {
        mean_ms: mean,
        p50_ms: percentile(&sorted, 50.0),
        p95_ms: percentile(&sorted, 95.0),
        p99_ms: percentile(&sorted, 99.0),
        samples: samples.len(),
        queries: queries.count(),
        iters,
        components,
    })
}

/// Canned experiment shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    ClusterOnly,
    Ensemble,
    Dynamic10Pct,
    RqVsKmeans,
    RqConfigSweep,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Scenario::ClusterOnly => "cluster-only",
            Scenario::Ensemble => "ensemble",
            Scenario::Dynamic10Pct => "dynamic-10pct",
            Scenario::RqVsKmeans => "rq-vs-kmeans",
            Scenario::RqConfigSweep => "rq-config-sweep",
        };
        write!(f, "{name}")
    }
}

impl FromStr for Scenario {
    type Err = MeviError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cluster-only" => Ok(Scenario::ClusterOnly),
            "ensemble" => Ok(Scenario::Ensemble),
            "dynamic-10pct" => Ok(Scenario::Dynamic10Pct),
            "rq-vs-kmeans" => Ok(Scenario::RqVsKmeans),
            "rq-config-sweep" => Ok(Scenario::RqConfigSweep),
            other => Err(MeviError::UnknownScenario(other.to_string())),
        }
    }
}

/// Experiment knobs, loadable from a TOML file. Every field has a default,
/// so an empty config runs the standard desk-scale setup.
#[derive(Debug, Clone, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticSpec,
    pub m: usize,
    pub b: usize,
    pub build_seed: u64,
    pub ks: Vec<usize>,
    pub top_docs: usize,
    pub alpha: f64,
    pub beta: f64,
    pub metric: String,
    pub beam_width: Option<usize>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticSpec::default(),
            m: 4,
            b: 32,
            build_seed: 0,
            ks: vec![10, 100, 1000],
            top_docs: 1000,
            alpha: 0.5,
            beta: 0.02,
            metric: "ip".to_string(),
            beam_width: None,
            seeds: vec![0, 1, 2],
        }
    }
}

/// One reported figure: a metric name, its value, and the parameters that
/// produced it.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ReportRecord {
    pub scenario: String,
    pub name: String,
    pub value: f64,
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    pub records: Vec<ReportRecord>,
}

impl ExperimentReport {
    fn push(&mut self, scenario: Scenario, name: &str, value: f64, params: &[(&str, String)]) {
        self.records.push(ReportRecord {
            scenario: scenario.to_string(),
            name: name.to_string(),
            value,
            params: params
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        });
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("report serializes"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let name_w = self
            .records
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(4)
            .max(4);
        out.push_str(&format!("{:<name_w$}  {:>12}  params\n", "name", "value"));
        for r in &self.records {
            let params = r
                .params
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(" ");
            out.push_str(&format!("{:<name_w$}  {:>12.4}  {params}\n", r.name, r.value));
        }
        out
    }
}

fn build_from(
    docs: EmbeddingSet,
    builder: Builder,
    cfg: &ExperimentConfig,
    m: usize,
    b: usize,
) -> Result<MeviIndex> {
    let metric: Metric = cfg.metric.parse()?;
    let params = KmeansParams::with_seed(cfg.build_seed);
    let (index, _) = MeviIndex::build(docs, builder, m, b, &params, metric)?;
    Ok(index)
}

fn beam(cfg: &ExperimentConfig) -> BeamParams {
    BeamParams {
        width: cfg.beam_width,
        constrained: true,
    }
}

/// Mean candidate-set size and candidate-set recall for cluster retrieval at
/// `k`, plus the per-query cluster rankings for reuse.
fn candidate_stats(
    index: &MeviIndex,
    data: &SyntheticData,
    k: usize,
    beam: &BeamParams,
) -> Result<(f64, f64)> {
    let per_query: Vec<(usize, f64)> = (0..data.queries.count())
        .into_par_iter()
        .map(|qi| {
            let q = data.queries.vector(qi);
            let ranked = rank_clusters_for(index, q, k, beam)?;
            let candidates = index.cluster_candidates(&ranked)?;
            let rel = data
                .qrels
                .relevant(data.queries.id(qi))
                .expect("synthetic queries are judged");
            let hits = candidates
                .iter()
                .filter(|&&o| rel.contains(index.doc_id(o)))
                .count();
            Ok((candidates.len(), hits as f64 / rel.len() as f64))
        })
        .collect::<Result<_>>()?;
    let n = per_query.len() as f64;
    let mean_docs = per_query.iter().map(|(c, _)| *c as f64).sum::<f64>() / n;
    let recall = per_query.iter().map(|(_, r)| *r).sum::<f64>() / n;
    Ok((mean_docs, recall))
}

fn cluster_only_rows(
    report: &mut ExperimentReport,
    scenario: Scenario,
    index: &MeviIndex,
    data: &SyntheticData,
    cfg: &ExperimentConfig,
    extra: &[(&str, String)],
) -> Result<()> {
    for &k in &cfg.ks {
        let mode = SearchMode::Clusters {
            k,
            top_docs: cfg.top_docs,
            beam: beam(cfg),
        };
        let run = run_queries(index, &mode, None, &data.queries, "clusters")?;
        let (docs_per_query, _) = candidate_stats(index, data, k, &beam(cfg))?;
        let mut params = vec![("k", k.to_string()), ("m", cfg.m.to_string()), ("b", cfg.b.to_string())];
        params.extend_from_slice(extra);
        report.push(
            scenario,
            &format!("recall@{}", cfg.top_docs),
            recall_at_k(&run, &data.qrels, cfg.top_docs)?,
            &params,
        );
        if cfg.top_docs != 100 {
            report.push(
                scenario,
                "recall@100",
                recall_at_k(&run, &data.qrels, 100)?,
                &params,
            );
        }
        report.push(scenario, "mrr@10", mrr_at_k(&run, &data.qrels, 10)?, &params);
        report.push(scenario, "docs-per-query", docs_per_query, &params);
    }
    Ok(())
}

fn scenario_cluster_only(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let data = gen_synthetic(&cfg.synthetic)?;
    let index = build_from(data.docs.clone(), Builder::Rq, cfg, cfg.m, cfg.b)?;
    let mut report = ExperimentReport::default();
    cluster_only_rows(
        &mut report,
        Scenario::ClusterOnly,
        &index,
        &data,
        cfg,
        &[],
    )?;
    Ok(report)
}

fn scenario_ensemble(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let data = gen_synthetic(&cfg.synthetic)?;
    let index = build_from(data.docs.clone(), Builder::Rq, cfg, cfg.m, cfg.b)?;
    let mut report = ExperimentReport::default();

    // Dense-only baseline.
    let dense_run = run_queries(
        &index,
        &SearchMode::Exact {
            top_docs: cfg.top_docs,
        },
        None,
        &data.queries,
        "exact",
    )?;
    let base_params = [("mode", "exact".to_string())];
    report.push(
        Scenario::Ensemble,
        &format!("recall@{}", cfg.top_docs),
        recall_at_k(&dense_run, &data.qrels, cfg.top_docs)?,
        &base_params,
    );
    report.push(
        Scenario::Ensemble,
        "mrr@10",
        mrr_at_k(&dense_run, &data.qrels, 10)?,
        &base_params,
    );

    for &k in &cfg.ks {
        let mut params = EnsembleParams::new(k, cfg.top_docs);
        params.alpha = cfg.alpha;
        params.beta = cfg.beta;
        let mode = SearchMode::Ensemble {
            params,
            dense: DenseMode::Exact,
            beam: beam(cfg),
        };
        let run = run_queries(&index, &mode, None, &data.queries, "ensemble")?;
        let row_params = [
            ("mode", "ensemble".to_string()),
            ("k", k.to_string()),
            ("alpha", cfg.alpha.to_string()),
            ("beta", cfg.beta.to_string()),
        ];
        report.push(
            Scenario::Ensemble,
            &format!("recall@{}", cfg.top_docs),
            recall_at_k(&run, &data.qrels, cfg.top_docs)?,
            &row_params,
        );
        report.push(
            Scenario::Ensemble,
            "mrr@10",
            mrr_at_k(&run, &data.qrels, 10)?,
            &row_params,
        );
    }
    Ok(report)
}

fn scenario_dynamic_10pct(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let data = gen_synthetic(&cfg.synthetic)?;
    let n = data.docs.count();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.synthetic.seed ^ 0x9e37_79b9_7f4a_7c15);
    // Fisher-Yates so the held-out 10% is deterministic per seed.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let held_out: std::collections::HashSet<usize> =
        order[..n / 10].iter().copied().collect();

    let mut kept = Matrix::with_capacity(data.docs.dim(), n - held_out.len());
    let mut kept_ids = Vec::new();
    for i in 0..n {
        if !held_out.contains(&i) {
            kept.push_row(data.docs.vector(i));
            kept_ids.push(data.docs.id(i).to_string());
        }
    }
    let initial = EmbeddingSet::new(kept_ids, kept)?;
    let mut index = build_from(initial, Builder::Rq, cfg, cfg.m, cfg.b)?;

    // Add the held-out documents back against the frozen codebook.
    for &i in order[..n / 10].iter() {
        index.add_document(data.docs.id(i), data.docs.vector(i))?;
    }

    let mut report = ExperimentReport::default();
    let scenario = Scenario::Dynamic10Pct;

    // Every re-added document must come back first for its own embedding.
    let mut rank1 = 0usize;
    for &i in order[..n / 10].iter() {
        let hit = index.exact_search(data.docs.vector(i), 1)?;
        if index.doc_id(hit.entries[0].0) == data.docs.id(i) {
            rank1 += 1;
        }
    }
    report.push(
        scenario,
        "readded-self-rank1",
        rank1 as f64 / held_out.len() as f64,
        &[("held_out", held_out.len().to_string())],
    );

    // Cluster-only recall over the queries that target re-added documents.
    let held_ids: std::collections::HashSet<&str> =
        held_out.iter().map(|&i| data.docs.id(i)).collect();
    let mut target_q = Matrix::new(data.queries.dim());
    let mut target_ids = Vec::new();
    for qi in 0..data.queries.count() {
        let qid = data.queries.id(qi);
        let rel = data.qrels.relevant(qid).expect("judged");
        let targets_readded = rel.iter().any(|doc| held_ids.contains(doc.as_str()));
        if targets_readded {
            target_q.push_row(data.queries.vector(qi));
            target_ids.push(qid.to_string());
        }
    }
    if !target_ids.is_empty() {
        let subset = EmbeddingSet::new(target_ids, target_q)?;
        let mode = SearchMode::Clusters {
            k: 1000,
            top_docs: cfg.top_docs,
            beam: beam(cfg),
        };
        let run = run_queries(&index, &mode, None, &subset, "clusters")?;
        report.push(
            scenario,
            "readded-cluster-recall@100",
            recall_at_k(&run, &data.qrels, 100)?,
            &[("k", "1000".to_string()), ("queries", subset.count().to_string())],
        );
    }

    // Full-corpus rebuild as the reference point, drop reported per k.
    let full_index = build_from(data.docs.clone(), Builder::Rq, cfg, cfg.m, cfg.b)?;
    for &k in &cfg.ks {
        let mode = SearchMode::Clusters {
            k,
            top_docs: cfg.top_docs,
            beam: beam(cfg),
        };
        let dyn_run = run_queries(&index, &mode, None, &data.queries, "clusters")?;
        let full_run = run_queries(&full_index, &mode, None, &data.queries, "clusters")?;
        let dyn_recall = recall_at_k(&dyn_run, &data.qrels, cfg.top_docs)?;
        let full_recall = recall_at_k(&full_run, &data.qrels, cfg.top_docs)?;
        let params = [("k", k.to_string())];
        report.push(scenario, &format!("dynamic-recall@{}", cfg.top_docs), dyn_recall, &params);
        report.push(scenario, &format!("full-recall@{}", cfg.top_docs), full_recall, &params);
        report.push(
            scenario,
            &format!("recall-drop@{}", cfg.top_docs),
            full_recall - dyn_recall,
            &params,
        );
    }
    Ok(report)
}

fn scenario_rq_vs_kmeans(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::default();
    let scenario = Scenario::RqVsKmeans;
    for &seed in &cfg.seeds {
        let mut spec = cfg.synthetic;
        spec.seed = spec.seed.wrapping_add(seed);
        let data = gen_synthetic(&spec)?;
        for builder in [Builder::Rq, Builder::HierarchicalKmeans] {
            let name = match builder {
                Builder::Rq => "rq",
                Builder::HierarchicalKmeans => "hkmeans",
            };
            let index = build_from(data.docs.clone(), builder, cfg, cfg.m, cfg.b)?;
            let clusters = index.clusters().non_empty_clusters();
            for &k in &cfg.ks {
                let mode = SearchMode::Clusters {
                    k,
                    top_docs: cfg.top_docs,
                    beam: beam(cfg),
                };
                let run = run_queries(&index, &mode, None, &data.queries, name)?;
                let (docs_per_query, _) = candidate_stats(&index, &data, k, &beam(cfg))?;
                let params = [
                    ("builder", name.to_string()),
                    ("seed", seed.to_string()),
                    ("k", k.to_string()),
                    ("clusters", clusters.to_string()),
                ];
                report.push(
                    scenario,
                    &format!("recall@{}", cfg.top_docs),
                    recall_at_k(&run, &data.qrels, cfg.top_docs)?,
                    &params,
                );
                report.push(scenario, "mrr@10", mrr_at_k(&run, &data.qrels, 10)?, &params);
                report.push(scenario, "docs-per-query", docs_per_query, &params);
            }
        }
    }
    Ok(report)
}

fn scenario_rq_config_sweep(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    // (layers, codewords per layer, clusters to retrieve); retrieval depth
    // grows with the code space so candidate counts stay comparable.
    let configs: [(usize, usize, usize); 5] = [
        (3, 16, 3),
        (4, 16, 10),
        (4, 32, 100),
        (5, 16, 100),
        (5, 32, 1000),
    ];
    let data = gen_synthetic(&cfg.synthetic)?;
    let mut report = ExperimentReport::default();
    let scenario = Scenario::RqConfigSweep;
    for (m, b, k) in configs {
        let bits = (b as f64).log2() as usize;
        let label = format!("RQ({m}x{bits})");
        let index = build_from(data.docs.clone(), Builder::Rq, cfg, m, b)?;
        let mode = SearchMode::Clusters {
            k,
            top_docs: cfg.top_docs,
            beam: beam(cfg),
        };
        let run = run_queries(&index, &mode, None, &data.queries, "sweep")?;
        let (docs_per_query, candidate_recall) = candidate_stats(&index, &data, k, &beam(cfg))?;
        let params = [
            ("config", label.clone()),
            ("m", m.to_string()),
            ("b", b.to_string()),
            ("k", k.to_string()),
            ("code_space", (b as u64).pow(m as u32).to_string()),
        ];
        report.push(scenario, "mrr@10", mrr_at_k(&run, &data.qrels, 10)?, &params);
        report.push(
            scenario,
            "recall@100",
            recall_at_k(&run, &data.qrels, 100)?,
            &params,
        );
        report.push(scenario, "recall@clusters", candidate_recall, &params);
        report.push(scenario, "docs-per-query", docs_per_query, &params);
    }
    Ok(report)
}

/// Runs one scenario end to end on a fresh synthetic corpus.
pub fn run_experiment(scenario: Scenario, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let _: Metric = cfg.metric.parse()?;
    match scenario {
        Scenario::ClusterOnly => scenario_cluster_only(cfg),
        Scenario::Ensemble => scenario_ensemble(cfg),
        Scenario::Dynamic10Pct => scenario_dynamic_10pct(cfg),
        Scenario::RqVsKmeans => scenario_rq_vs_kmeans(cfg),
        Scenario::RqConfigSweep => scenario_rq_config_sweep(cfg),
    }
}

/// HNSW parameters used by experiment and CLI defaults.
pub fn default_hnsw_params(seed: u64) -> HnswParams {
    HnswParams {
        max_neighbors: 16,
        ef_construction: 200,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_of(entries: &[(&str, &[&str])]) -> TrecRun {
        let mut run = TrecRun::new("t");
        for (qid, docs) in entries {
            run.rankings.insert(
                qid.to_string(),
                docs.iter()
                    .enumerate()
                    .map(|(i, d)| (d.to_string(), 1.0 - i as f64 * 0.01))
                    .collect(),
            );
        }
        run
    }

    #[test]
    fn recall_counts_fraction_of_relevant_found() {
        let run = run_of(&[("q1", &["d1", "d2", "d3"])]);
        let mut qrels = Qrels::default();
        for d in ["d1", "d3", "d8", "d9"] {
            qrels.add("q1", d);
        }
        // 2 of 4 relevant inside the top-50.
        assert_eq!(recall_at_k(&run, &qrels, 50).unwrap(), 0.5);
    }

    #[test]
    fn recall_is_one_when_everything_found() {
        let run = run_of(&[("q1", &["d1", "d2"]), ("q2", &["d5"])]);
        let mut qrels = Qrels::default();
        qrels.add("q1", "d1");
        qrels.add("q1", "d2");
        qrels.add("q2", "d5");
        assert_eq!(recall_at_k(&run, &qrels, 10).unwrap(), 1.0);
    }

    #[test]
    fn hand_built_three_query_fixtures() {
        let run = run_of(&[
            ("q1", &["d1", "d2", "d3", "d4"]),
            ("q2", &["d9", "d8", "d7"]),
            ("q3", &["d5", "d6"]),
        ]);
        let mut qrels = Qrels::default();
        // q1: relevant {d2, d4}: recall@2 = 1/2, first relevant at rank 2.
        qrels.add("q1", "d2");
        qrels.add("q1", "d4");
        // q2: relevant {d7}: recall@2 = 0, first relevant at rank 3.
        qrels.add("q2", "d7");
        // q3: relevant {d5}: recall@2 = 1, first relevant at rank 1.
        qrels.add("q3", "d5");

        let want_recall2 = (0.5 + 0.0 + 1.0) / 3.0;
        assert!((recall_at_k(&run, &qrels, 2).unwrap() - want_recall2).abs() < 1e-9);

        let want_mrr10 = (1.0 / 2.0 + 1.0 / 3.0 + 1.0) / 3.0;
        assert!((mrr_at_k(&run, &qrels, 10).unwrap() - want_mrr10).abs() < 1e-9);

        // MRR cut below the first relevant zeroes that query.
        let want_mrr2 = (1.0 / 2.0 + 0.0 + 1.0) / 3.0;
        assert!((mrr_at_k(&run, &qrels, 2).unwrap() - want_mrr2).abs() < 1e-9);
    }

    #[test]
    fn first_relevant_at_rank_three_scores_one_third() {
        let run = run_of(&[("q1", &["x", "y", "d1"])]);
        let mut qrels = Qrels::default();
        qrels.add("q1", "d1");
        assert!((mrr_at_k(&run, &qrels, 10).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        // Outside the cutoff contributes zero.
        assert_eq!(mrr_at_k(&run, &qrels, 2).unwrap(), 0.0);
    }

    #[test]
    fn metrics_ignore_score_values_given_same_order() {
        let mut run = run_of(&[("q1", &["d1", "d2"])]);
        let mut qrels = Qrels::default();
        qrels.add("q1", "d2");
        let a = mrr_at_k(&run, &qrels, 10).unwrap();
        run.rankings.get_mut("q1").unwrap()[0].1 = 999.0;
        run.rankings.get_mut("q1").unwrap()[1].1 = 998.0;
        let b = mrr_at_k(&run, &qrels, 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn metrics_non_decreasing_in_k() {
        let run = run_of(&[("q1", &["a", "d1", "b", "d2"]), ("q2", &["d3", "c"])]);
        let mut qrels = Qrels::default();
        qrels.add("q1", "d1");
        qrels.add("q1", "d2");
        qrels.add("q2", "d3");
        let mut prev_r = 0.0;
        let mut prev_m = 0.0;
        for k in 1..=5 {
            let r = recall_at_k(&run, &qrels, k).unwrap();
            let m = mrr_at_k(&run, &qrels, k).unwrap();
            assert!(r >= prev_r);
            assert!(m >= prev_m);
            prev_r = r;
            prev_m = m;
        }
    }

    #[test]
    fn disjoint_query_sets_error_and_unjudged_skipped() {
        let run = run_of(&[("q1", &["d1"])]);
        let qrels = Qrels::default();
        assert!(matches!(
            recall_at_k(&run, &qrels, 10),
            Err(MeviError::EmptyEvaluation)
        ));

        let run = run_of(&[("q1", &["d1"]), ("q2", &["d2"])]);
        let mut qrels = Qrels::default();
        qrels.add("q1", "d1");
        // q2 unjudged: skipped, mean over q1 only.
        assert_eq!(recall_at_k(&run, &qrels, 10).unwrap(), 1.0);
    }

    #[test]
    fn metric_spec_parsing() {
        assert_eq!("mrr@10".parse::<MetricSpec>().unwrap(), MetricSpec::MrrAt(10));
        assert_eq!(
            "recall@1000".parse::<MetricSpec>().unwrap(),
            MetricSpec::RecallAt(1000)
        );
        assert!("ndcg@10".parse::<MetricSpec>().is_err());
        assert!("mrr".parse::<MetricSpec>().is_err());
        assert!("recall@0".parse::<MetricSpec>().is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_unit_norm() {
        let spec = SyntheticSpec {
            n_docs: 200,
            dim: 16,
            n_clusters: 8,
            noise_sigma: 0.1,
            n_queries: 20,
            seed: 7,
        };
        let a = gen_synthetic(&spec).unwrap();
        let b = gen_synthetic(&spec).unwrap();
        assert_eq!(a.docs.vectors().data(), b.docs.vectors().data());
        assert_eq!(a.queries.vectors().data(), b.queries.vectors().data());
        assert_eq!(a.qrels, b.qrels);
        for i in 0..a.docs.count() {
            let norm: f64 = a.docs.vector(i).iter().map(|x| (*x as f64).powi(2)).sum();
            assert!((norm - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_noise_queries_hit_their_doc_first() {
        let spec = SyntheticSpec {
            n_docs: 300,
            dim: 16,
            n_clusters: 8,
            noise_sigma: 0.0,
            n_queries: 30,
            seed: 9,
        };
        let data = gen_synthetic(&spec).unwrap();
        let index = build_from(
            data.docs.clone(),
            Builder::Rq,
            &ExperimentConfig {
                synthetic: spec,
                m: 2,
                b: 8,
                ..ExperimentConfig::default()
            },
            2,
            8,
        )
        .unwrap();
        let run = run_queries(
            &index,
            &SearchMode::Exact { top_docs: 10 },
            None,
            &data.queries,
            "exact",
        )
        .unwrap();
        assert_eq!(recall_at_k(&run, &data.qrels, 1).unwrap(), 1.0);
    }

    #[test]
    fn bench_single_sample_mean_equals_p50() {
        let spec = SyntheticSpec {
            n_docs: 100,
            dim: 8,
            n_clusters: 4,
            noise_sigma: 0.1,
            n_queries: 1,
            seed: 3,
        };
        let data = gen_synthetic(&spec).unwrap();
        let cfg = ExperimentConfig {
            synthetic: spec,
            m: 2,
            b: 4,
            ..ExperimentConfig::default()
        };
        let index = build_from(data.docs.clone(), Builder::Rq, &cfg, 2, 4).unwrap();
        let stats = bench_latency(
            &index,
            &SearchMode::Exact { top_docs: 10 },
            None,
            &data.queries,
            0,
            1,
        )
        .unwrap();
        assert_eq!(stats.samples, 1);
        assert_eq!(stats.mean_ms, stats.p50_ms);
        assert!(stats.components["dense"] > 0.0);
        assert_eq!(stats.components["cluster"], 0.0);
    }

    #[test]
    fn bench_reports_same_query_count_across_modes() {
        let spec = SyntheticSpec {
            n_docs: 200,
            dim: 8,
            n_clusters: 4,
            noise_sigma: 0.1,
            n_queries: 5,
            seed: 4,
        };
        let data = gen_synthetic(&spec).unwrap();
        let cfg = ExperimentConfig {
            synthetic: spec,
            m: 2,
            b: 4,
            ..ExperimentConfig::default()
        };
        let index = build_from(data.docs.clone(), Builder::Rq, &cfg, 2, 4).unwrap();
        let exact = bench_latency(
            &index,
            &SearchMode::Exact { top_docs: 10 },
            None,
            &data.queries,
            1,
            2,
        )
        .unwrap();
        let clusters = bench_latency(
            &index,
            &SearchMode::Clusters {
                k: 3,
                top_docs: 10,
                beam: BeamParams::default(),
            },
            None,
            &data.queries,
            1,
            2,
        )
        .unwrap();
        assert_eq!(exact.queries, clusters.queries);
        assert_eq!(exact.samples, clusters.samples);
        assert!(clusters.components["cluster"] > 0.0);
    }

    #[test]
    fn cluster_only_scenario_recall_non_decreasing_in_k() {
        let cfg = ExperimentConfig {
            synthetic: SyntheticSpec {
                n_docs: 1000,
                dim: 16,
                n_clusters: 16,
                noise_sigma: 0.1,
                n_queries: 50,
                seed: 5,
            },
            m: 3,
            b: 8,
            ks: vec![2, 8, 32],
            top_docs: 100,
            ..ExperimentConfig::default()
        };
        let report = run_experiment(Scenario::ClusterOnly, &cfg).unwrap();
        let recalls: Vec<f64> = report
            .records
            .iter()
            .filter(|r| r.name == "recall@100")
            .map(|r| r.value)
            .collect();
        assert_eq!(recalls.len(), 3);
        assert!(recalls[0] <= recalls[1] && recalls[1] <= recalls[2]);
        assert!(!report.to_jsonl().is_empty());
        assert!(report.render_table().contains("recall@100"));
    }

    #[test]
    fn unknown_scenario_is_rejected() {
        assert!(matches!(
            "warp-speed".parse::<Scenario>(),
            Err(MeviError::UnknownScenario(_))
        ));
    }
}
