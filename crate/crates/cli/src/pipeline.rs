//! Offline graph and decomposition building, and the online query path.

use anyhow::{bail, Result};
use fsr_core::baseline::{iterate_rwr, solve_cg, SolverReport};
use fsr_core::ranking::{filter_with, FilterOptions};
use fsr_core::spectral::{
    decompose_giant, rank_r_decomposition, BlockwiseConfig, DEFAULT_OVERSAMPLING,
    DEFAULT_POWER_ITERATIONS,
};
use fsr_core::{
    build_mutual_knn_graph, connected_components, decompose_blockwise, degrees,
    exact_eigendecomposition, fsrw_correct, normalize_adjacency, observation_vector, sparsify,
    ComponentLabeling, DescriptorSet, ObservationVector, PoolingMatrix, RankingResult,
    SparseSymmetricMatrix, SpectralDecomposition, TransferFunction, Variant,
};
use serde::{Deserialize, Serialize};

pub const DEFAULT_ALPHA: f64 = 0.99;
pub const DEFAULT_GAMMA: f64 = 3.0;
pub const DEFAULT_K: usize = 50;

/// Adjacency, its normalization and connected components.
#[derive(Debug, Clone)]
pub struct Graph {
    pub adjacency: SparseSymmetricMatrix,
    pub normalized: SparseSymmetricMatrix,
    pub components: ComponentLabeling,
}

impl Graph {
    pub fn from_adjacency(adjacency: SparseSymmetricMatrix) -> Result<Self> {
        let normalized = normalize_adjacency(&adjacency, &degrees(&adjacency))?;
        let components = connected_components(&adjacency);
        Ok(Self {
            adjacency,
            normalized,
            components,
        })
    }

    pub fn build(data: &DescriptorSet, k: usize, gamma: f64) -> Result<Self> {
        Self::from_adjacency(build_mutual_knn_graph(data, k, gamma)?)
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Full dense eigendecomposition.
    Exact,
    /// Dense eigendecomposition truncated to the rank.
    RankR,
    /// Randomized decomposition of every connected component.
    Approx,
    /// Randomized decomposition of the largest component only; other
    /// vertices keep their observation scores.
    Giant,
    /// Blockwise randomized decomposition with a sparsified basis.
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomposeParams {
    pub method: Method,
    pub rank: usize,
    pub oversampling: usize,
    pub power_iterations: usize,
    pub rho: usize,
    /// Fraction of the entries of `U` kept by sparsification.
    pub tau_fraction: f64,
    pub seed: u64,
}

impl Default for DecomposeParams {
    fn default() -> Self {
        Self {
            method: Method::Approx,
            rank: 100,
            oversampling: DEFAULT_OVERSAMPLING,
            power_iterations: DEFAULT_POWER_ITERATIONS,
            rho: 5,
            tau_fraction: 0.1,
            seed: 0,
        }
    }
}

impl DecomposeParams {
    pub fn blockwise(&self) -> BlockwiseConfig {
        BlockwiseConfig {
            rank: self.rank,
            rho: self.rho,
            oversampling: self.oversampling,
            power_iterations: self.power_iterations,
            seed: self.seed,
        }
    }

    pub fn tau(&self, n: usize, r: usize) -> usize {
        ((self.tau_fraction * (n * r) as f64).round() as usize).max(1)
    }
}

pub fn decompose(graph: &Graph, params: &DecomposeParams) -> Result<SpectralDecomposition> {
    let a = &graph.normalized;
    let labels = &graph.components;
    let dec = match params.method {
        Method::Exact => exact_eigendecomposition(a)?.with_components(labels.clone())?,
        Method::RankR => {
            rank_r_decomposition(a, params.rank.min(a.n()))?.with_components(labels.clone())?
        }
        Method::Approx => decompose_blockwise(a, labels, &params.blockwise())?,
        Method::Giant => decompose_giant(
            a,
            labels,
            params.rank,
            params.oversampling,
            params.power_iterations,
            params.seed,
        )?,
        Method::Sparse => {
            let dec = decompose_blockwise(a, labels, &params.blockwise())?;
            if params.tau_fraction.is_nan() || params.tau_fraction <= 0.0 {
                bail!("tau fraction must be positive");
            }
            let tau = params.tau(dec.n(), dec.rank());
            sparsify(&dec, tau)?
        }
    };
    Ok(dec)
}

/// True when the decomposition spans only component 0, as produced by
/// [`Method::Giant`]; such decompositions copy `y` outside that component.
pub fn covers_only_giant(dec: &SpectralDecomposition) -> bool {
    let labels = &dec.components().labels;
    dec.variant() == Variant::Approx
        && dec.components().count() > 1
        && dec
            .row_norms()
            .iter()
            .zip(labels)
            .all(|(&eta, &l)| l == 0 || eta == 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryParams {
    pub alpha: f64,
    pub gamma: f64,
    /// Nonzeros kept in the observation vector.
    pub k: usize,
    pub fsrw: bool,
    /// `None` picks the default for the decomposition.
    pub copy_outside_giant: Option<bool>,
}

impl Default for QueryParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            gamma: DEFAULT_GAMMA,
            k: DEFAULT_K,
            fsrw: false,
            copy_outside_giant: None,
        }
    }
}

/// Online ranking of one query (one or more region vectors) against a
/// stored decomposition. Never touches the graph.
pub fn rank_query(
    dec: &SpectralDecomposition,
    data: &DescriptorSet,
    pooling: &PoolingMatrix,
    query_regions: &[Vec<f64>],
    params: &QueryParams,
) -> Result<RankingResult> {
    let y = observation_vector(query_regions, data, params.k, params.gamma)?;
    let x = filter_observation(dec, &y, params)?;
    let x = if params.fsrw {
        fsrw_correct(&x, dec, data, query_regions)?
    } else {
        x
    };
    Ok(RankingResult::new(x, pooling)?)
}

pub fn filter_observation(
    dec: &SpectralDecomposition,
    y: &ObservationVector,
    params: &QueryParams,
) -> Result<Vec<f64>> {
    let h = TransferFunction::h_alpha(params.alpha)?;
    let options = FilterOptions {
        copy_outside_giant: params
            .copy_outside_giant
            .unwrap_or_else(|| covers_only_giant(dec)),
    };
    Ok(filter_with(dec, &h, y, options)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Cg,
    Rwr,
    Series,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveParams {
    pub method: SolveMethod,
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub series_terms: usize,
}

/// Solves `ℒ_α x = y` with the chosen reference method. The spectral method
/// needs a decomposition.
pub fn solve(
    graph_normalized: &SparseSymmetricMatrix,
    dec: Option<&SpectralDecomposition>,
    y: &ObservationVector,
    params: &SolveParams,
) -> Result<SolverReport> {
    let start = std::time::Instant::now();
    let timed = |solution: Vec<f64>, iterations: usize| -> Result<SolverReport> {
        let wall_time_secs = start.elapsed().as_secs_f64();
        let residual_norm = relative_residual(graph_normalized, &solution, y, params.alpha)?;
        Ok(SolverReport {
            solution,
            iterations,
            residual_norm,
            converged: residual_norm <= params.tol,
            wall_time_secs,
        })
    };
    Ok(match params.method {
        SolveMethod::Cg => solve_cg(
            graph_normalized,
            y,
            params.alpha,
            params.tol,
            params.max_iter,
        )?,
        SolveMethod::Rwr => iterate_rwr(
            graph_normalized,
            y,
            params.alpha,
            params.tol,
            params.max_iter,
        )?,
        SolveMethod::Series => {
            let x = fsr_core::baseline::truncated_series(
                graph_normalized,
                y,
                params.alpha,
                params.series_terms,
            )?;
            timed(x, params.series_terms)?
        }
        SolveMethod::Spectral => {
            let Some(dec) = dec else {
                bail!("the spectral method needs --decomposition");
            };
            let qp = QueryParams {
                alpha: params.alpha,
                ..QueryParams::default()
            };
            timed(filter_observation(dec, y, &qp)?, 0)?
        }
    })
}

/// `‖ℒ_α x − y‖₂ / ‖y‖₂`, or `‖x‖₂` when `y = 0`.
pub fn relative_residual(
    w_norm: &SparseSymmetricMatrix,
    x: &[f64],
    y: &ObservationVector,
    alpha: f64,
) -> Result<f64> {
    let wx = w_norm.matvec(x)?;
    let yd = y.to_dense();
    let beta = 1.0 - alpha;
    let (mut num, mut den) = (0.0, 0.0);
    for ((&xi, &wi), &yi) in x.iter().zip(&wx).zip(&yd) {
        let r = (xi - alpha * wi) / beta - yi;
        num += r * r;
        den += yi * yi;
    }
    Ok(if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    })
}

/// Groups query regions by their image id, in order of first appearance.
pub fn group_queries(queries: &DescriptorSet) -> Vec<(u64, Vec<Vec<f64>>)> {
    let mut groups: Vec<(u64, Vec<Vec<f64>>)> = Vec::new();
    for (i, &img) in queries.region_to_image().iter().enumerate() {
        let v = queries.vector(i).to_vec();
        match groups.iter_mut().find(|g| g.0 == img) {
            Some(g) => g.1.push(v),
            None => groups.push((img, vec![v])),
        }
    }
    groups
}
