//! Batch command-line front end: build bundles, search, evaluate, update,
//! grid-search ensemble weights, benchmark latency, generate synthetic
//! corpora, and run canned experiments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use mevi::cluster_search::RankedClusters;
use mevi::dense::HnswParams;
use mevi::ensemble::{BeamParams, ClusterSource, DenseMode, EnsembleParams, SearchMode};
use mevi::error::{MeviError, Result};
use mevi::eval::{ExperimentConfig, MetricSpec, Scenario, SyntheticSpec};
use mevi::index::Builder;
use mevi::quantizer::KmeansParams;
use mevi::store;
use mevi::{EmbeddingSet, MeviIndex, MissingPolicy};

#[derive(Parser)]
#[command(
    name = "mevi",
    version,
    about = "Model-enhanced vector index: cluster-code retrieval fused with dense search"
)]
struct Cli {
    /// Seed for every stochastic step (clustering, graphs, synthetic data).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for parallel sections; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a codebook + cluster index bundle from an embedding corpus.
    Build(BuildArgs),
    /// Search a bundle and write a TREC run file.
    Search(SearchArgs),
    /// Score a run file against qrels.
    Eval(EvalArgs),
    /// Add or remove documents in a bundle (write-new-then-swap).
    Update(UpdateArgs),
    /// Grid-search ensemble weights against qrels.
    Grid(GridArgs),
    /// Measure per-query latency with a component breakdown.
    Bench(BenchArgs),
    /// Generate a synthetic corpus, queries, and qrels.
    Synth(SynthArgs),
    /// Run a canned experiment scenario on synthetic data.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Document embeddings (MEVIEMB1 binary).
    #[arg(long)]
    embeddings: PathBuf,
    /// Document id map (one `<ordinal>\t<id>` line per row).
    #[arg(long)]
    ids: PathBuf,
    /// Clustering layers (code length).
    #[arg(long, default_value_t = 4)]
    m: usize,
    /// Codewords per layer.
    #[arg(long, default_value_t = 32)]
    b: usize,
    /// Codebook builder.
    #[arg(long, default_value = "rq", value_parser = ["rq", "hkmeans"])]
    builder: String,
    /// Similarity metric stored with the bundle: ip, cosine, or l2.
    #[arg(long, default_value = "ip")]
    metric: String,
    /// Lloyd iteration cap per clustering.
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    /// Centroid-movement convergence threshold.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    /// Bundle directory produced by `build`.
    #[arg(long)]
    bundle: PathBuf,
    /// Query embeddings (MEVIEMB1 binary).
    #[arg(long)]
    queries: PathBuf,
    /// Query id map, parallel to the embeddings.
    #[arg(long)]
    qids: PathBuf,
    /// Retrieval pipeline.
    #[arg(long, value_parser = ["exact", "hnsw", "clusters", "ensemble"])]
    mode: String,
    /// Clusters to retrieve (clusters/ensemble modes).
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Documents to return per query.
    #[arg(long, default_value_t = 1000)]
    topk: usize,
    /// Cluster-score weight (ensemble mode).
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Cluster-rank decay (ensemble mode).
    #[arg(long, default_value_t = 0.02)]
    beta: f64,
    /// Score for documents outside every retrieved cluster.
    #[arg(long, default_value = "zero", value_parser = ["zero", "below-min"])]
    missing: String,
    /// Beam width for cluster search (default max(k, 100)).
    #[arg(long)]
    beam: Option<usize>,
    /// Allow beam search through empty clusters.
    #[arg(long, default_value_t = false)]
    unconstrained: bool,
    /// HNSW search breadth (hnsw mode, ensemble --dense hnsw).
    #[arg(long, default_value_t = 64)]
    ef: usize,
    /// Dense candidate depth for the ensemble (defaults to --topk).
    #[arg(long)]
    dense_depth: Option<usize>,
    /// Dense backend for the ensemble.
    #[arg(long, default_value = "exact", value_parser = ["exact", "hnsw"])]
    dense: String,
    /// Neighbors per vertex when building the HNSW graph.
    #[arg(long, default_value_t = 16)]
    hnsw_m: usize,
    /// HNSW construction breadth.
    #[arg(long, default_value_t = 200)]
    ef_construction: usize,
    /// External cluster-ranking file instead of beam search.
    #[arg(long)]
    rankings: Option<PathBuf>,
    /// Run tag written to the output.
    #[arg(long, default_value = "mevi")]
    tag: String,
    /// Output TREC run file.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// TREC run file.
    #[arg(long)]
    run: PathBuf,
    /// TREC qrels file.
    #[arg(long)]
    qrels: PathBuf,
    /// Comma-separated `name@K` metrics, e.g. mrr@10,recall@1000.
    #[arg(long, default_value = "mrr@10,recall@100,recall@1000")]
    metrics: String,
}

#[derive(Args)]
struct UpdateArgs {
    /// Bundle directory to mutate.
    #[arg(long)]
    bundle: PathBuf,
    #[command(subcommand)]
    action: UpdateAction,
}

#[derive(Subcommand)]
enum UpdateAction {
    /// Encode and insert new documents against the frozen codebook.
    Add {
        /// Embeddings of the documents to add (MEVIEMB1 binary).
        #[arg(long)]
        embeddings: PathBuf,
        /// Id map parallel to the embeddings.
        #[arg(long)]
        ids: PathBuf,
    },
    /// Tombstone documents by external id.
    Remove {
        /// Text file with one external id per line.
        #[arg(long)]
        ids: PathBuf,
    },
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qids: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Comma-separated cluster-score weights.
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
    alphas: String,
    /// Comma-separated rank-decay values.
    #[arg(
        long,
        default_value = "0.005,0.01,0.015,0.02,0.025,0.03,0.035,0.04,0.045,0.05"
    )]
    betas: String,
    /// Metric to maximize.
    #[arg(long, default_value = "mrr@10")]
    target: String,
    /// Clusters to retrieve per query.
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Documents to rank per cell.
    #[arg(long, default_value_t = 1000)]
    topk: usize,
    #[arg(long, default_value = "zero", value_parser = ["zero", "below-min"])]
    missing: String,
    #[arg(long, default_value = "exact", value_parser = ["exact", "hnsw"])]
    dense: String,
    #[arg(long, default_value_t = 64)]
    ef: usize,
    #[arg(long, default_value_t = 16)]
    hnsw_m: usize,
    #[arg(long, default_value_t = 200)]
    ef_construction: usize,
    #[arg(long)]
    beam: Option<usize>,
    /// External cluster-ranking file instead of beam search.
    #[arg(long)]
    rankings: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// Query id map; synthetic q0,q1,... ids are used when omitted.
    #[arg(long)]
    qids: Option<PathBuf>,
    #[arg(long, value_parser = ["exact", "hnsw", "clusters", "ensemble"])]
    mode: String,
    /// Measured passes over the query set.
    #[arg(long, default_value_t = 3)]
    iters: usize,
    /// Unmeasured warmup passes.
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = 1000)]
    topk: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.02)]
    beta: f64,
    #[arg(long, default_value = "zero", value_parser = ["zero", "below-min"])]
    missing: String,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long, default_value_t = false)]
    unconstrained: bool,
    #[arg(long, default_value_t = 64)]
    ef: usize,
    #[arg(long)]
    dense_depth: Option<usize>,
    #[arg(long, default_value = "exact", value_parser = ["exact", "hnsw"])]
    dense: String,
    #[arg(long, default_value_t = 16)]
    hnsw_m: usize,
    #[arg(long, default_value_t = 200)]
    ef_construction: usize,
    #[arg(long)]
    rankings: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Documents to generate.
    #[arg(long, default_value_t = 10000)]
    n: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// True Gaussian clusters in the mixture.
    #[arg(long, default_value_t = 64)]
    clusters: usize,
    /// Query noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Queries to generate.
    #[arg(long, default_value_t = 500)]
    queries: usize,
    /// Output directory for corpus files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Scenario name: cluster-only, ensemble, dynamic-10pct, rq-vs-kmeans,
    /// or rq-config-sweep.
    #[arg(long)]
    scenario: String,
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write machine-readable JSONL records here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code_for(err: &MeviError) -> u8 {
    match err {
        MeviError::InvalidArgument(_) | MeviError::UnknownScenario(_) => 2,
        MeviError::EmptyInput
        | MeviError::NonFinite
        | MeviError::DimensionMismatch { .. }
        | MeviError::CodeLength { .. }
        | MeviError::DigitOutOfRange { .. }
        | MeviError::DuplicateId(_)
        | MeviError::UnknownId(_)
        | MeviError::DeadDocument(_)
        | MeviError::EmptyCorpus
        | MeviError::EmptyIndex
        | MeviError::MagicMismatch { .. }
        | MeviError::UnsupportedVersion { .. }
        | MeviError::ChecksumMismatch { .. }
        | MeviError::Truncated { .. }
        | MeviError::CorruptData { .. }
        | MeviError::ParseError { .. }
        | MeviError::NonContiguousRanks { .. }
        | MeviError::DuplicateClusterEntry { .. }
        | MeviError::EmptyEvaluation => 3,
        MeviError::LockHeld(_) | MeviError::Io(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("mevi: failed to set thread count: {e}");
            return ExitCode::from(4);
        }
    }

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("mevi: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Build(args) => cmd_build(cli.seed, args),
        Command::Search(args) => cmd_search(cli.seed, args),
        Command::Eval(args) => cmd_eval(args),
        Command::Update(args) => cmd_update(args),
        Command::Grid(args) => cmd_grid(cli.seed, args),
        Command::Bench(args) => cmd_bench(cli.seed, args),
        Command::Synth(args) => cmd_synth(cli.seed, args),
        Command::Experiment(args) => cmd_experiment(cli.seed, args),
    }
}

fn load_embedding_set(embeddings: &Path, ids: &Path) -> Result<EmbeddingSet> {
    let matrix = store::read_embeddings_file(embeddings)?;
    let ids = store::read_ids_file(ids)?;
    EmbeddingSet::new(ids, matrix)
}

fn cmd_build(seed: u64, args: BuildArgs) -> Result<()> {
    let corpus = load_embedding_set(&args.embeddings, &args.ids)?;
    let builder: Builder = args.builder.parse()?;
    let metric = args.metric.parse()?;
    let params = KmeansParams {
        max_iters: args.max_iters,
        tol: args.tol,
        seed,
    };
    let (index, report) = MeviIndex::build(corpus, builder, args.m, args.b, &params, metric)?;
    store::save_bundle(&args.out, &index)?;
    println!(
        "built {} bundle: {} docs, {} non-empty of {} possible clusters, total sse {:.4}",
        args.builder,
        index.live_count(),
        index.clusters().non_empty_clusters(),
        store::possible_clusters(args.b, args.m),
        report.total_sse
    );
    for (t, sse) in report.per_layer_sse.iter().enumerate() {
        log::info!("layer {} residual sse {:.4}", t + 1, sse);
    }
    Ok(())
}

struct ModeSpec {
    mode: SearchMode,
    needs_hnsw: bool,
}

#[allow(clippy::too_many_arguments)]
fn parse_mode(
    mode: &str,
    k: usize,
    topk: usize,
    alpha: f64,
    beta: f64,
    missing: &str,
    beam_width: Option<usize>,
    constrained: bool,
    ef: usize,
    dense: &str,
    dense_depth: Option<usize>,
) -> Result<ModeSpec> {
    let beam = BeamParams {
        width: beam_width,
        constrained,
    };
    let missing: MissingPolicy = missing.parse()?;
    let dense_mode = match dense {
        "hnsw" => DenseMode::Hnsw { ef },
        _ => DenseMode::Exact,
    };
    Ok(match mode {
        "exact" => ModeSpec {
            mode: SearchMode::Exact { top_docs: topk },
            needs_hnsw: false,
        },
        "hnsw" => ModeSpec {
            mode: SearchMode::Hnsw { top_docs: topk, ef },
            needs_hnsw: true,
        },
        "clusters" => ModeSpec {
            mode: SearchMode::Clusters {
                k,
                top_docs: topk,
                beam,
            },
            needs_hnsw: false,
        },
        "ensemble" => {
            let params = EnsembleParams {
                alpha,
                beta,
                clusters_k: k,
                top_docs: topk,
                missing,
                dense_depth,
            };
            ModeSpec {
                mode: SearchMode::Ensemble {
                    params,
                    dense: dense_mode,
                    beam,
                },
                needs_hnsw: matches!(dense_mode, DenseMode::Hnsw { .. }),
            }
        }
        other => {
            return Err(MeviError::InvalidArgument(format!(
                "unknown mode: {other}"
            )))
        }
    })
}

fn load_rankings(path: &Path, index: &MeviIndex) -> Result<BTreeMap<String, RankedClusters>> {
    let file = fs::File::open(path)?;
    mevi::load_external_rankings(
        file,
        &path.display().to_string(),
        index.codebook().m(),
        index.codebook().b(),
    )
}

fn cmd_search(seed: u64, args: SearchArgs) -> Result<()> {
    let spec = parse_mode(
        &args.mode,
        args.k,
        args.topk,
        args.alpha,
        args.beta,
        &args.missing,
        args.beam,
        !args.unconstrained,
        args.ef,
        &args.dense,
        args.dense_depth,
    )?;
    let (mut index, _) = store::load_bundle(&args.bundle)?;
    if spec.needs_hnsw {
        log::info!("building hnsw graph over {} vectors", index.total_count());
        index.build_hnsw(HnswParams {
            max_neighbors: args.hnsw_m,
            ef_construction: args.ef_construction,
            seed,
        })?;
    }
    let queries = load_embedding_set(&args.queries, &args.qids)?;
    let external = match &args.rankings {
        Some(path) => Some(load_rankings(path, &index)?),
        None => None,
    };
    let run = mevi::run_queries(&index, &spec.mode, external.as_ref(), &queries, &args.tag)?;
    let mut bytes = Vec::new();
    mevi::write_run(&mut bytes, &run)?;
    store::write_atomic(&args.run, &bytes)?;
    println!(
        "wrote {} with {} queries ({} mode)",
        args.run.display(),
        run.rankings.len(),
        args.mode
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let specs: Vec<MetricSpec> = args
        .metrics
        .split(',')
        .map(|tok| tok.trim().parse())
        .collect::<Result<_>>()?;
    let run = mevi::read_run(fs::File::open(&args.run)?, &args.run.display().to_string())?;
    let qrels = mevi::read_qrels(
        fs::File::open(&args.qrels)?,
        &args.qrels.display().to_string(),
    )?;
    for spec in specs {
        let value = mevi::eval::evaluate(&run, &qrels, spec)?;
        println!("{spec}\t{value:.6}");
    }
    Ok(())
}

fn cmd_update(args: UpdateArgs) -> Result<()> {
    let (mut index, _) = store::load_bundle(&args.bundle)?;
    let lock = store::DirLock::acquire(&args.bundle)?;

    match &args.action {
        UpdateAction::Add { embeddings, ids } => {
            let new_docs = load_embedding_set(embeddings, ids)?;
            for i in 0..new_docs.count() {
                index.add_document(new_docs.id(i), new_docs.vector(i))?;
            }
            println!("added {} documents", new_docs.count());
        }
        UpdateAction::Remove { ids } => {
            let text = fs::read_to_string(ids)?;
            let mut removed = 0usize;
            for line in text.lines() {
                let id = line.trim();
                if id.is_empty() {
                    continue;
                }
                index.remove_document(id)?;
                removed += 1;
            }
            println!("removed {removed} documents");
        }
    }

    // Write-new-then-swap: stage a complete bundle next to the original,
    // then exchange directories so readers never see a partial state.
    let name = args
        .bundle
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| MeviError::InvalidArgument("bundle path has no name".into()))?;
    let parent = args.bundle.parent().unwrap_or_else(|| Path::new("."));
    let staged = parent.join(format!(".{name}.staged.{}", std::process::id()));
    let backup = parent.join(format!(".{name}.bak.{}", std::process::id()));
    if staged.exists() {
        fs::remove_dir_all(&staged)?;
    }
    store::save_bundle(&staged, &index)?;

    fs::rename(&args.bundle, &backup)?;
    fs::rename(&staged, &args.bundle)?;
    fs::remove_dir_all(&backup)?;
    // The lock file moved with the backup directory and is already gone.
    std::mem::forget(lock);
    println!("bundle now holds {} live documents", index.live_count());
    Ok(())
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| MeviError::InvalidArgument(format!("bad {what} value: {tok:?}")))
        })
        .collect()
}

fn cmd_grid(seed: u64, args: GridArgs) -> Result<()> {
    let alphas = parse_f64_list(&args.alphas, "alpha")?;
    let betas = parse_f64_list(&args.betas, "beta")?;
    let target: MetricSpec = args.target.parse()?;
    let missing: MissingPolicy = args.missing.parse()?;

    let (mut index, _) = store::load_bundle(&args.bundle)?;
    let dense = match args.dense.as_str() {
        "hnsw" => {
            index.build_hnsw(HnswParams {
                max_neighbors: args.hnsw_m,
                ef_construction: args.ef_construction,
                seed,
            })?;
            DenseMode::Hnsw { ef: args.ef }
        }
        _ => DenseMode::Exact,
    };
    let queries = load_embedding_set(&args.queries, &args.qids)?;
    let qrels = mevi::read_qrels(
        fs::File::open(&args.qrels)?,
        &args.qrels.display().to_string(),
    )?;

    let params = EnsembleParams {
        alpha: 0.0,
        beta: 0.0,
        clusters_k: args.k,
        top_docs: args.topk,
        missing,
        dense_depth: None,
    };
    let external = match &args.rankings {
        Some(path) => Some(load_rankings(path, &index)?),
        None => None,
    };
    let source = match &external {
        Some(map) => ClusterSource::External(map),
        None => ClusterSource::Beam(BeamParams {
            width: args.beam,
            constrained: true,
        }),
    };

    let result = mevi::grid_search(
        &index, &queries, &qrels, &alphas, &betas, &params, dense, &source, target,
    )?;
    println!("alpha\tbeta\t{target}");
    for cell in &result.table {
        println!("{}\t{}\t{:.6}", cell.alpha, cell.beta, cell.value);
    }
    println!(
        "best: alpha={} beta={} {target}={:.6} over {} queries",
        result.best_alpha, result.best_beta, result.best_value, result.evaluated_queries
    );
    Ok(())
}

fn cmd_bench(seed: u64, args: BenchArgs) -> Result<()> {
    let spec = parse_mode(
        &args.mode,
        args.k,
        args.topk,
        args.alpha,
        args.beta,
        &args.missing,
        args.beam,
        !args.unconstrained,
        args.ef,
        &args.dense,
        args.dense_depth,
    )?;
    let (mut index, _) = store::load_bundle(&args.bundle)?;
    if spec.needs_hnsw {
        log::info!("building hnsw graph over {} vectors", index.total_count());
        index.build_hnsw(HnswParams {
            max_neighbors: args.hnsw_m,
            ef_construction: args.ef_construction,
            seed,
        })?;
    }
    let matrix = store::read_embeddings_file(&args.queries)?;
    let ids = match &args.qids {
        Some(path) => store::read_ids_file(path)?,
        None => (0..matrix.rows()).map(|i| format!("q{i}")).collect(),
    };
    let queries = EmbeddingSet::new(ids, matrix)?;
    let external = match &args.rankings {
        Some(path) => Some(load_rankings(path, &index)?),
        None => None,
    };

    let stats = mevi::bench_latency(
        &index,
        &spec.mode,
        external.as_ref(),
        &queries,
        args.warmup,
        args.iters,
    )?;
    println!(
        "mode={} queries={} iters={} samples={}",
        args.mode, stats.queries, stats.iters, stats.samples
    );
    println!(
        "latency ms: mean={:.3} p50={:.3} p95={:.3} p99={:.3}",
        stats.mean_ms, stats.p50_ms, stats.p95_ms, stats.p99_ms
    );
    for (component, ms) in &stats.components {
        println!("component {component}: {ms:.3} ms");
    }
    Ok(())
}

fn cmd_synth(seed: u64, args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_docs: args.n,
        dim: args.dim,
        n_clusters: args.clusters,
        noise_sigma: args.sigma,
        n_queries: args.queries,
        seed,
    };
    let data = mevi::gen_synthetic(&spec)?;
    fs::create_dir_all(&args.out)?;
    store::write_embeddings_file(&args.out.join("docs.bin"), data.docs.vectors())?;
    store::write_ids_file(&args.out.join("docs_ids.tsv"), data.docs.ids())?;
    store::write_embeddings_file(&args.out.join("queries.bin"), data.queries.vectors())?;
    store::write_ids_file(&args.out.join("query_ids.tsv"), data.queries.ids())?;
    let mut qrels_bytes = Vec::new();
    mevi::write_qrels(&mut qrels_bytes, &data.qrels)?;
    store::write_atomic(&args.out.join("qrels.txt"), &qrels_bytes)?;
    println!(
        "wrote synthetic corpus to {}: {} docs, {} queries, dim {}",
        args.out.display(),
        args.n,
        args.queries,
        args.dim
    );
    Ok(())
}

fn cmd_experiment(seed: u64, args: ExperimentArgs) -> Result<()> {
    let scenario: Scenario = args.scenario.parse()?;
    let cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            toml::from_str::<ExperimentConfig>(&text).map_err(|e| MeviError::ParseError {
                file: path.display().to_string(),
                line: 0,
                reason: e.to_string(),
            })?
        }
        None => ExperimentConfig {
            build_seed: seed,
            ..ExperimentConfig::default()
        },
    };
    let report = mevi::run_experiment(scenario, &cfg)?;
    print!("{}", report.render_table());
    if let Some(out) = &args.out {
        store::write_atomic(out, format!("{}\n", report.to_jsonl()).as_bytes())?;
        println!("wrote {} records to {}", report.records.len(), out.display());
    }
    Ok(())
}
