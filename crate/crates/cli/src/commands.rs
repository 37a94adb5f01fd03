//! Subcommands of the `fsr` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use fsr_core::graph::graph_builds_on_this_thread;
use fsr_core::io::{
    read_decomposition, read_descriptors, read_graph, write_decomposition, write_descriptors,
    write_graph,
};
use fsr_core::ranking::PoolingMode;
use fsr_core::{observation_vector, DescriptorSet, PoolingMatrix, SpectralDecomposition};
use serde::{Deserialize, Serialize};

use crate::bench::{bench_online, BenchParams};
use crate::evaluate::{evaluate, evaluate_online, EvalConfig, EvalVariant, LabelledData};
use crate::pipeline::{
    decompose, group_queries, rank_query, solve, DecomposeParams, Graph, Method, QueryParams,
    SolveMethod, SolveParams, DEFAULT_ALPHA, DEFAULT_GAMMA, DEFAULT_K,
};
use crate::synth::{generate_synthetic, SyntheticManifoldSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fsr", version, about = "Fast spectral ranking")]
pub struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic manifold dataset.
    Gen(GenArgs),
    /// Build and save the mutual k-NN adjacency.
    Graph(GraphArgs),
    /// Decompose the normalized adjacency and save it.
    Decompose(DecomposeArgs),
    /// Rank the dataset for each query using a saved decomposition.
    Query(QueryArgs),
    /// Solve the regularized system with a reference solver.
    Solve(SolveArgs),
    /// Measure mAP of the ranking variants on synthetic data.
    Evaluate(EvaluateArgs),
    /// Time online filtering against the rank.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub manifolds: usize,
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub queries_per_manifold: usize,
}

impl SynthArgs {
    pub fn spec(&self) -> SyntheticManifoldSpec {
        SyntheticManifoldSpec {
            manifolds: self.manifolds,
            points_per_manifold: self.points,
            dim: self.dim,
            sigma: self.sigma,
            seed: self.seed,
            queries_per_manifold: self.queries_per_manifold,
            ..SyntheticManifoldSpec::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub synth: SynthArgs,
    /// Dataset descriptor file.
    #[arg(long)]
    pub out: PathBuf,
    /// Query descriptor file; each query is its own image.
    #[arg(long)]
    pub queries_out: Option<PathBuf>,
    /// JSON file with dataset and query labels.
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelsFile {
    pub labels: Vec<usize>,
    pub query_labels: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[arg(long)]
    pub descriptors: PathBuf,
    #[arg(short, long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Normalize descriptors on load instead of rejecting non-unit vectors.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Adjacency file written by `graph`.
    #[arg(
        long,
        conflicts_with = "descriptors",
        required_unless_present = "descriptors"
    )]
    pub graph: Option<PathBuf>,
    /// Build the graph from descriptors instead.
    #[arg(long)]
    pub descriptors: Option<PathBuf>,
    #[arg(short, long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, value_enum, default_value_t = Method::Approx)]
    pub method: Method,
    #[arg(short, long, default_value_t = DecomposeParams::default().rank)]
    pub rank: usize,
    #[arg(long, default_value_t = DecomposeParams::default().oversampling)]
    pub oversampling: usize,
    #[arg(long, default_value_t = DecomposeParams::default().power_iterations)]
    pub power_iterations: usize,
    #[arg(long, default_value_t = DecomposeParams::default().rho)]
    pub rho: usize,
    #[arg(long, default_value_t = DecomposeParams::default().tau_fraction)]
    pub tau_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub decomposition: PathBuf,
    #[arg(long)]
    pub descriptors: PathBuf,
    /// Query regions; regions sharing an image id form one query.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub normalize: bool,
    #[arg(short, long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Nonzeros in the observation vector.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub obs_k: usize,
    /// Apply the out-of-component correction.
    #[arg(long)]
    pub fsrw: bool,
    /// Copy observation scores outside the largest component. Defaults to
    /// on for decompositions that cover only that component.
    #[arg(long)]
    pub copy_outside_giant: Option<bool>,
    #[arg(long, value_enum, default_value_t = Pooling::Sum)]
    pub pooling: Pooling,
    /// Images listed per query (0 for all).
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Pooling {
    Sum,
    Mean,
}

impl From<Pooling> for PoolingMode {
    fn from(p: Pooling) -> Self {
        match p {
            Pooling::Sum => PoolingMode::Sum,
            Pooling::Mean => PoolingMode::Mean,
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Needed by `--method spectral`.
    #[arg(long)]
    pub decomposition: Option<PathBuf>,
    #[arg(long)]
    pub descriptors: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// Which query (by order of first appearance) to solve for.
    #[arg(long, default_value_t = 0)]
    pub query_index: usize,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, value_enum, default_value_t = SolveMethod::Cg)]
    pub method: SolveMethod,
    #[arg(short, long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub obs_k: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    #[arg(long = "series-T", default_value_t = 100)]
    pub series_terms: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSON config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run only the online stage against this decomposition of the
    /// configured synthetic data.
    #[arg(long)]
    pub decomposition: Option<PathBuf>,
    #[arg(short, long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub obs_k: Option<usize>,
    #[arg(short, long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(short, long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub tau_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub variants: Option<Vec<EvalVariant>>,
    /// Write a CSV summary instead of the JSON report.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[arg(short, long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub obs_k: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [64, 128, 256, 512])]
    pub ranks: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0.1)]
    pub tau_fraction: f64,
    #[arg(long)]
    pub csv: bool,
}

/// Maps an error to its exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<fsr_core::Error>() {
            return match e {
                fsr_core::Error::Numerical(_) => EXIT_NUMERICAL,
                fsr_core::Error::Io(_)
                | fsr_core::Error::Format(_)
                | fsr_core::Error::Checksum { .. } => EXIT_IO,
                _ => EXIT_USAGE,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_USAGE
}

/// Runs a parsed command, writing results to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => run_gen(a, out),
        Command::Graph(a) => run_graph(a, out),
        Command::Decompose(a) => run_decompose(a, out),
        Command::Query(a) => run_query(a, out),
        Command::Solve(a) => run_solve(a, out),
        Command::Evaluate(a) => run_evaluate(a, out),
        Command::Bench(a) => run_bench(a, out),
    }
}

fn load(path: &Path, normalize: bool) -> Result<DescriptorSet> {
    read_descriptors(path, normalize).with_context(|| format!("reading {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_gen(a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let spec = a.synth.spec();
    let s = generate_synthetic(&spec)?;
    write_descriptors(&a.out, &s.data)?;
    if let Some(path) = &a.queries_out {
        let images = (0..s.queries.len() as u64).collect();
        let queries = DescriptorSet::new(s.queries.clone())?.with_images(images)?;
        write_descriptors(path, &queries)?;
    }
    if let Some(path) = &a.labels_out {
        write_json(
            path,
            &LabelsFile {
                labels: s.labels.clone(),
                query_labels: s.query_labels.clone(),
            },
        )?;
    }
    writeln!(
        out,
        "wrote {} descriptors of dimension {}",
        s.data.len(),
        s.data.dim()
    )?;
    Ok(())
}

fn run_graph(a: &GraphArgs, out: &mut dyn Write) -> Result<()> {
    let data = load(&a.descriptors, a.normalize)?;
    let graph = Graph::build(&data, a.k, a.gamma)?;
    write_graph(&a.out, &graph.adjacency)?;
    writeln!(
        out,
        "n = {}, edges = {}, components = {}, largest = {}",
        graph.n(),
        graph.adjacency.nnz() / 2,
        graph.components.count(),
        graph.components.sizes.first().copied().unwrap_or(0)
    )?;
    Ok(())
}

fn run_decompose(a: &DecomposeArgs, out: &mut dyn Write) -> Result<()> {
    let adjacency = match (&a.graph, &a.descriptors) {
        (Some(path), _) => {
            read_graph(path).with_context(|| format!("reading {}", path.display()))?
        }
        (None, Some(path)) => {
            fsr_core::build_mutual_knn_graph(&load(path, a.normalize)?, a.k, a.gamma)?
        }
        (None, None) => bail!("pass --graph or --descriptors"),
    };
    let graph = Graph::from_adjacency(adjacency)?;
    let params = DecomposeParams {
        method: a.method,
        rank: a.rank,
        oversampling: a.oversampling,
        power_iterations: a.power_iterations,
        rho: a.rho,
        tau_fraction: a.tau_fraction,
        seed: a.seed,
    };
    let start = std::time::Instant::now();
    let dec = decompose(&graph, &params)?;
    let secs = start.elapsed().as_secs_f64();
    write_decomposition(&a.out, &dec)?;
    writeln!(
        out,
        "{} decomposition: n = {}, r = {}, nnz = {}, components = {}, {:.3} s",
        dec.variant(),
        dec.n(),
        dec.rank(),
        dec.basis().nnz(),
        dec.components().count(),
        secs
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutput {
    pub query_id: u64,
    pub image_ids: Vec<u64>,
    pub scores: Vec<f64>,
}

/// Ranks every query against the stored decomposition. Reads only the
/// decomposition and descriptor files.
pub fn query_results(a: &QueryArgs) -> Result<Vec<QueryOutput>> {
    let builds = graph_builds_on_this_thread();
    let dec: SpectralDecomposition = read_decomposition(&a.decomposition)
        .with_context(|| format!("reading {}", a.decomposition.display()))?;
    let data = load(&a.descriptors, a.normalize)?;
    let queries = load(&a.queries, a.normalize)?;
    ensure!(
        dec.n() == data.len(),
        "decomposition has {} rows but {} descriptors were given",
        dec.n(),
        data.len()
    );
    let pooling = PoolingMatrix::for_descriptors(&data, a.pooling.into());
    let params = QueryParams {
        alpha: a.alpha,
        gamma: a.gamma,
        k: a.obs_k,
        fsrw: a.fsrw,
        copy_outside_giant: a.copy_outside_giant,
    };
    let mut results = Vec::new();
    for (query_id, regions) in group_queries(&queries) {
        let ranking = rank_query(&dec, &data, &pooling, &regions, &params)?;
        let keep = if a.top == 0 {
            ranking.order.len()
        } else {
            a.top.min(ranking.order.len())
        };
        let order = &ranking.order[..keep];
        results.push(QueryOutput {
            query_id,
            image_ids: order.iter().map(|&i| pooling.image_ids()[i]).collect(),
            scores: order.iter().map(|&i| ranking.x_pooled[i]).collect(),
        });
    }
    ensure!(
        graph_builds_on_this_thread() == builds,
        "the query path rebuilt the graph"
    );
    Ok(results)
}

fn run_query(a: &QueryArgs, out: &mut dyn Write) -> Result<()> {
    let results = query_results(a)?;
    if a.json {
        serde_json::to_writer_pretty(&mut *out, &results)?;
        writeln!(out)?;
    } else {
        writeln!(out, "query\trank\timage\tscore")?;
        for r in &results {
            for (pos, (id, s)) in r.image_ids.iter().zip(&r.scores).enumerate() {
                writeln!(out, "{}\t{}\t{}\t{:.9e}", r.query_id, pos + 1, id, s)?;
            }
        }
    }
    Ok(())
}

fn run_solve(a: &SolveArgs, out: &mut dyn Write) -> Result<()> {
    let graph = Graph::from_adjacency(
        read_graph(&a.graph).with_context(|| format!("reading {}", a.graph.display()))?,
    )?;
    let data = load(&a.descriptors, a.normalize)?;
    ensure!(
        graph.n() == data.len(),
        "graph has {} vertices but {} descriptors were given",
        graph.n(),
        data.len()
    );
    let groups = group_queries(&load(&a.queries, a.normalize)?);
    let Some((_, regions)) = groups.get(a.query_index) else {
        bail!(
            "query index {} out of range ({} queries)",
            a.query_index,
            groups.len()
        );
    };
    let y = observation_vector(regions, &data, a.obs_k, a.gamma)?;
    let dec = a
        .decomposition
        .as_ref()
        .map(read_decomposition)
        .transpose()?;
    let params = SolveParams {
        method: a.method,
        alpha: a.alpha,
        tol: a.tol,
        max_iter: a.max_iter,
        series_terms: a.series_terms,
    };
    let report = solve(&graph.normalized, dec.as_ref(), &y, &params)?;
    serde_json::to_writer_pretty(&mut *out, &report)?;
    writeln!(out)?;
    Ok(())
}

pub fn eval_config(a: &EvaluateArgs) -> Result<EvalConfig> {
    let mut config = match &a.config {
        Some(path) => EvalConfig::from_json(
            &std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?,
        )?,
        None => EvalConfig::default(),
    };
    if let Some(v) = a.k {
        config.k = v;
    }
    if a.obs_k.is_some() {
        config.obs_k = a.obs_k;
    }
    if let Some(v) = a.alpha {
        config.alpha = v;
    }
    if let Some(v) = a.gamma {
        config.gamma = v;
    }
    if let Some(v) = a.rank {
        config.rank = v;
    }
    if let Some(v) = a.tau_fraction {
        config.tau_fraction = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = &a.variants {
        config.variants = v.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run_evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let config = eval_config(a)?;
    let labelled = LabelledData::synthetic(&config.synthetic)?;
    let report = match &a.decomposition {
        Some(path) => {
            let dec =
                read_decomposition(path).with_context(|| format!("reading {}", path.display()))?;
            evaluate_online(&labelled, Some(&dec), &config)?
        }
        None => evaluate(&labelled, &config)?,
    };
    if a.csv {
        write!(out, "{}", report.to_csv())?;
    } else {
        serde_json::to_writer_pretty(&mut *out, &report)?;
        writeln!(out)?;
    }
    Ok(())
}

fn run_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let s = generate_synthetic(&a.synth.spec())?;
    let graph = Graph::build(&s.data, a.k, DEFAULT_GAMMA)?;
    let max_rank = a.ranks.iter().copied().max().unwrap_or(0);
    let params = DecomposeParams {
        method: Method::Approx,
        rank: max_rank,
        rho: max_rank,
        ..DecomposeParams::default()
    };
    let dec = decompose(&graph, &params)?;
    let report = bench_online(
        &dec,
        &s.data,
        &s.queries,
        &a.ranks,
        &BenchParams {
            alpha: DEFAULT_ALPHA,
            gamma: DEFAULT_GAMMA,
            obs_k: a.obs_k,
            repeats: a.repeats,
            tau_fraction: a.tau_fraction,
        },
    )?;
    if a.csv {
        write!(out, "{}", report.to_csv())?;
    } else {
        serde_json::to_writer_pretty(&mut *out, &report)?;
        writeln!(out)?;
    }
    Ok(())
}

/// Sizes the global rayon pool from `FSR_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FSR_THREADS") {
        let threads: usize = v
            .parse()
            .with_context(|| format!("FSR_THREADS must be a positive integer, got {v:?}"))?;
        ensure!(threads >= 1, "FSR_THREADS must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}
