//! mAP evaluation of the ranking variants on labelled data.

use std::collections::HashSet;
use std::fmt;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use fsr_core::baseline::solve_cg;
use fsr_core::{
    fsrw_correct, observation_vector, DescriptorSet, PoolingMatrix, RankingResult,
    SpectralDecomposition,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{average_precision, mean};
use crate::pipeline::{decompose, filter_observation, DecomposeParams, Graph, Method, QueryParams};
use crate::synth::{generate_synthetic, SyntheticManifoldSpec};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EvalVariant {
    Exact,
    RankR,
    Approx,
    Giant,
    Sparse,
    Fsrw,
    Cg,
    Euclidean,
}

impl EvalVariant {
    pub const ALL: [EvalVariant; 8] = [
        EvalVariant::Exact,
        EvalVariant::RankR,
        EvalVariant::Approx,
        EvalVariant::Giant,
        EvalVariant::Sparse,
        EvalVariant::Fsrw,
        EvalVariant::Cg,
        EvalVariant::Euclidean,
    ];
}

impl fmt::Display for EvalVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalVariant::Exact => "EXACT",
            EvalVariant::RankR => "RANK-r",
            EvalVariant::Approx => "APPROX",
            EvalVariant::Giant => "GIANT",
            EvalVariant::Sparse => "SPARSE",
            EvalVariant::Fsrw => "FSRw",
            EvalVariant::Cg => "CG",
            EvalVariant::Euclidean => "EUCLIDEAN",
        })
    }
}

/// Evaluation settings, stored as versioned JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub version: u32,
    pub synthetic: SyntheticManifoldSpec,
    /// Graph neighborhood size.
    pub k: usize,
    /// Observation vector size; the graph `k` when absent.
    pub obs_k: Option<usize>,
    pub gamma: f64,
    pub alpha: f64,
    pub rank: usize,
    pub oversampling: usize,
    pub power_iterations: usize,
    pub rho: usize,
    pub tau_fraction: f64,
    pub seed: u64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub variants: Vec<EvalVariant>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let d = DecomposeParams::default();
        Self {
            version: CONFIG_VERSION,
            synthetic: SyntheticManifoldSpec::default(),
            k: 10,
            obs_k: None,
            gamma: crate::pipeline::DEFAULT_GAMMA,
            alpha: crate::pipeline::DEFAULT_ALPHA,
            rank: d.rank,
            oversampling: d.oversampling,
            power_iterations: d.power_iterations,
            rho: d.rho,
            tau_fraction: d.tau_fraction,
            seed: d.seed,
            cg_tol: 1e-10,
            cg_max_iter: 10_000,
            variants: EvalVariant::ALL.to_vec(),
        }
    }
}

impl EvalConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).context("invalid evaluation config")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.version == CONFIG_VERSION,
            "unsupported config version {} (expected {CONFIG_VERSION})",
            self.version
        );
        ensure!(self.k >= 1, "k must be at least 1");
        ensure!(self.obs_k != Some(0), "obs_k must be at least 1");
        ensure!((0.0..1.0).contains(&self.alpha), "alpha must lie in [0, 1)");
        ensure!(self.rank >= 1, "rank must be at least 1");
        ensure!(!self.variants.is_empty(), "no variants requested");
        Ok(())
    }

    pub fn decompose_params(&self, method: Method) -> DecomposeParams {
        DecomposeParams {
            method,
            rank: self.rank,
            oversampling: self.oversampling,
            power_iterations: self.power_iterations,
            rho: self.rho,
            tau_fraction: self.tau_fraction,
            seed: self.seed,
        }
    }

    pub fn query_params(&self, alpha: f64, fsrw: bool) -> QueryParams {
        QueryParams {
            alpha,
            gamma: self.gamma,
            k: self.obs_k.unwrap_or(self.k),
            fsrw,
            copy_outside_giant: None,
        }
    }
}

/// Labelled descriptors and labelled queries.
#[derive(Debug, Clone)]
pub struct LabelledData {
    pub data: DescriptorSet,
    pub labels: Vec<usize>,
    pub queries: Vec<Vec<Vec<f64>>>,
    pub query_labels: Vec<usize>,
}

impl LabelledData {
    pub fn synthetic(spec: &SyntheticManifoldSpec) -> Result<Self> {
        let s = generate_synthetic(spec)?;
        Ok(Self {
            data: s.data,
            labels: s.labels,
            queries: s.queries.into_iter().map(|q| vec![q]).collect(),
            query_labels: s.query_labels,
        })
    }

    /// Image ids sharing each query's label.
    fn positives(&self, pooling: &PoolingMatrix) -> Result<Vec<HashSet<u64>>> {
        let mut image_label = std::collections::HashMap::new();
        for (i, &img) in self.data.region_to_image().iter().enumerate() {
            let l = self.labels[i];
            if let Some(prev) = image_label.insert(img, l) {
                ensure!(prev == l, "image {img} has regions with different labels");
            }
        }
        self.query_labels
            .iter()
            .map(|&l| {
                let set: HashSet<u64> = pooling
                    .image_ids()
                    .iter()
                    .copied()
                    .filter(|id| image_label[id] == l)
                    .collect();
                ensure!(!set.is_empty(), "label {l} has no positives in the dataset");
                Ok(set)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: EvalVariant,
    pub name: String,
    pub map: f64,
    pub per_query_ap: Vec<f64>,
    pub offline_secs: f64,
    pub mean_online_ms: f64,
    pub alpha: f64,
    /// Rank and nonzeros of `U`, for spectral variants.
    pub rank: Option<usize>,
    pub nnz: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: EvalConfig,
    pub n: usize,
    pub queries: usize,
    pub components: usize,
    pub giant_size: usize,
    pub graph_secs: f64,
    pub variants: Vec<VariantReport>,
}

impl EvaluationReport {
    pub fn variant(&self, v: EvalVariant) -> Option<&VariantReport> {
        self.variants.iter().find(|r| r.variant == v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,map,offline_secs,mean_online_ms,rank,nnz\n");
        for v in &self.variants {
            let opt = |o: Option<usize>| o.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{},{}\n",
                v.name,
                v.map,
                v.offline_secs,
                v.mean_online_ms,
                opt(v.rank),
                opt(v.nnz)
            ));
        }
        out
    }
}

/// Builds the graph and every needed decomposition, then runs each variant.
pub fn evaluate(labelled: &LabelledData, config: &EvalConfig) -> Result<EvaluationReport> {
    config.validate()?;
    let start = Instant::now();
    let graph = Graph::build(&labelled.data, config.k, config.gamma)?;
    let graph_secs = start.elapsed().as_secs_f64();
    let mut cache: Vec<(Method, SpectralDecomposition, f64)> = Vec::new();
    let mut reports = Vec::new();
    for &variant in &config.variants {
        let method = match variant {
            EvalVariant::Exact | EvalVariant::Euclidean => Some(Method::Exact),
            EvalVariant::RankR => Some(Method::RankR),
            EvalVariant::Approx | EvalVariant::Fsrw => Some(Method::Approx),
            EvalVariant::Giant => Some(Method::Giant),
            EvalVariant::Sparse => Some(Method::Sparse),
            EvalVariant::Cg => None,
        };
        let report = match method {
            Some(method) => {
                if !cache.iter().any(|c| c.0 == method) {
                    let t = Instant::now();
                    let dec = decompose(&graph, &config.decompose_params(method))?;
                    cache.push((method, dec, t.elapsed().as_secs_f64()));
                }
                let (_, dec, secs) = cache.iter().find(|c| c.0 == method).expect("cached");
                let mut r = run_spectral(labelled, dec, variant, config)?;
                r.offline_secs = graph_secs + secs;
                r
            }
            None => {
                let mut r = run_cg(labelled, &graph, config)?;
                r.offline_secs = graph_secs;
                r
            }
        };
        log::info!("{}: mAP {:.4}", report.name, report.map);
        reports.push(report);
    }
    Ok(EvaluationReport {
        config: config.clone(),
        n: labelled.data.len(),
        queries: labelled.queries.len(),
        components: graph.components.count(),
        giant_size: graph.components.sizes.first().copied().unwrap_or(0),
        graph_secs,
        variants: reports,
    })
}

/// Runs the spectral variants against a stored decomposition without
/// building anything offline. CG is not available in this mode.
pub fn evaluate_online(
    labelled: &LabelledData,
    dec: Option<&SpectralDecomposition>,
    config: &EvalConfig,
) -> Result<EvaluationReport> {
    config.validate()?;
    let Some(dec) = dec else {
        bail!("online-only evaluation needs a decomposition");
    };
    ensure!(
        dec.n() == labelled.data.len(),
        "decomposition has {} rows but the dataset has {} descriptors",
        dec.n(),
        labelled.data.len()
    );
    let mut reports = Vec::new();
    for &variant in &config.variants {
        match variant {
            EvalVariant::Cg => bail!("the CG variant needs the graph; drop it in online-only mode"),
            v => reports.push(run_spectral(labelled, dec, v, config)?),
        }
    }
    Ok(EvaluationReport {
        config: config.clone(),
        n: labelled.data.len(),
        queries: labelled.queries.len(),
        components: dec.components().count(),
        giant_size: dec.components().sizes.first().copied().unwrap_or(0),
        graph_secs: 0.0,
        variants: reports,
    })
}

fn run_spectral(
    labelled: &LabelledData,
    dec: &SpectralDecomposition,
    variant: EvalVariant,
    config: &EvalConfig,
) -> Result<VariantReport> {
    let alpha = if variant == EvalVariant::Euclidean {
        0.0
    } else {
        config.alpha
    };
    let params = config.query_params(alpha, variant == EvalVariant::Fsrw);
    run_queries(labelled, variant, alpha, Some(dec), |regions| {
        let y = observation_vector(regions, &labelled.data, params.k, params.gamma)?;
        let x = filter_observation(dec, &y, &params)?;
        if params.fsrw {
            Ok(fsrw_correct(&x, dec, &labelled.data, regions)?)
        } else {
            Ok(x)
        }
    })
}

fn run_cg(labelled: &LabelledData, graph: &Graph, config: &EvalConfig) -> Result<VariantReport> {
    let params = config.query_params(config.alpha, false);
    run_queries(labelled, EvalVariant::Cg, config.alpha, None, |regions| {
        let y = observation_vector(regions, &labelled.data, params.k, params.gamma)?;
        let report = solve_cg(
            &graph.normalized,
            &y,
            config.alpha,
            config.cg_tol,
            config.cg_max_iter,
        )?;
        if !report.converged {
            log::warn!("CG stopped at residual {:.3e}", report.residual_norm);
        }
        Ok(report.solution)
    })
}

fn run_queries(
    labelled: &LabelledData,
    variant: EvalVariant,
    alpha: f64,
    dec: Option<&SpectralDecomposition>,
    score: impl Fn(&[Vec<f64>]) -> Result<Vec<f64>> + Sync,
) -> Result<VariantReport> {
    let pooling =
        PoolingMatrix::for_descriptors(&labelled.data, fsr_core::ranking::PoolingMode::Sum);
    let positives = labelled.positives(&pooling)?;
    let results: Vec<Result<(f64, f64)>> = labelled
        .queries
        .par_iter()
        .zip(&positives)
        .map(|(regions, pos)| {
            let t = Instant::now();
            let ranking = RankingResult::new(score(regions)?, &pooling)?;
            let ms = t.elapsed().as_secs_f64() * 1e3;
            let ranked: Vec<u64> = ranking
                .order
                .iter()
                .map(|&i| pooling.image_ids()[i])
                .collect();
            Ok((average_precision(&ranked, pos)?, ms))
        })
        .collect();
    let mut per_query_ap = Vec::with_capacity(results.len());
    let mut times = Vec::with_capacity(results.len());
    for r in results {
        let (ap, ms) = r?;
        per_query_ap.push(ap);
        times.push(ms);
    }
    Ok(VariantReport {
        variant,
        name: variant.to_string(),
        map: mean(&per_query_ap),
        per_query_ap,
        offline_secs: 0.0,
        mean_online_ms: mean(&times),
        alpha,
        rank: dec.map(|d| d.rank()),
        nnz: dec.map(|d| d.basis().nnz()),
    })
}
