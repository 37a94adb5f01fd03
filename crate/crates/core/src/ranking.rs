//! Online stage: from query vectors to ranked images.
//!
//! A query becomes a sparse observation vector `y` over dataset regions,
//! which is filtered in the spectral domain, `x = U h(Λ) Uᵀ y`, pooled to
//! image scores and sorted.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::graph::{
    check_alpha, check_gamma, check_unit, clipped_power, BruteForce, DescriptorSet, NeighborSearch,
};
use crate::linalg::{dot, norm_inf, DenseMatrix};
use crate::sparse::CsrMatrix;
use crate::spectral::SpectralDecomposition;
use crate::{Error, Result};

/// Points sampled on `[min λ, max λ]` when checking that a custom transfer
/// function is nondecreasing.
pub const MONOTONICITY_SAMPLES: usize = 1024;

/// Filter outputs below this fraction of the largest magnitude are flushed to
/// zero; they are round-off of the two dense products.
pub const FILTER_ROUNDOFF: f64 = 1e-12;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar function applied to the spectrum of the graph.
#[derive(Clone)]
pub enum TransferFunction {
    /// `h_α(x) = (1 − α) / (1 − α x)`, the spectrum of `ℒ_α⁻¹`.
    HAlpha(f64),
    Custom {
        name: String,
        f: ScalarFn,
        nondecreasing: bool,
        positive: bool,
    },
}

impl fmt::Debug for TransferFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransferFunction::HAlpha(a) => write!(f, "HAlpha({a})"),
            TransferFunction::Custom {
                name,
                nondecreasing,
                positive,
                ..
            } => write!(
                f,
                "Custom({name}, nondecreasing={nondecreasing}, positive={positive})"
            ),
        }
    }
}

impl TransferFunction {
    pub fn h_alpha(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(TransferFunction::HAlpha(alpha))
    }

    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        nondecreasing: bool,
        positive: bool,
    ) -> Self {
        TransferFunction::Custom {
            name: name.into(),
            f: Arc::new(f),
            nondecreasing,
            positive,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TransferFunction::HAlpha(alpha) => (1.0 - alpha) / (1.0 - alpha * x),
            TransferFunction::Custom { f, .. } => f(x),
        }
    }

    /// Checks that the function may be used for truncated filtering over
    /// the given spectrum: `h_α` needs a valid α; custom functions must be
    /// declared nondecreasing and pass a sampled check.
    pub fn validate(&self, spectrum: &[f64]) -> Result<()> {
        match self {
            TransferFunction::HAlpha(alpha) => check_alpha(*alpha),
            TransferFunction::Custom {
                name,
                f,
                nondecreasing,
                ..
            } => {
                if !nondecreasing {
                    return Err(Error::invalid(format!(
                        "transfer function {name} is not declared nondecreasing"
                    )));
                }
                let lo = spectrum.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = spectrum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !(lo.is_finite() && hi.is_finite()) {
                    return Ok(());
                }
                let mut prev = f(lo);
                for s in 1..MONOTONICITY_SAMPLES {
                    let x = lo + (hi - lo) * s as f64 / (MONOTONICITY_SAMPLES - 1) as f64;
                    let v = f(x);
                    if !v.is_finite() || v < prev {
                        return Err(Error::invalid(format!(
                            "transfer function {name} decreases near {x}"
                        )));
                    }
                    prev = v;
                }
                Ok(())
            }
        }
    }
}

/// Sparse nonnegative vector over dataset regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationVector {
    n: usize,
    entries: Vec<(usize, f64)>,
}

impl ObservationVector {
    /// Entries may come in any order; duplicates are rejected.
    pub fn new(n: usize, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("duplicate observation index"));
        }
        if let Some(&(i, _)) = entries.last() {
            if i >= n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: i + 1,
                });
            }
        }
        if entries.iter().any(|&(_, v)| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(
                "observation values must be finite and nonnegative",
            ));
        }
        entries.retain(|&(_, v)| v > 0.0);
        Ok(Self { n, entries })
    }

    /// Sparse view of a dense nonnegative vector.
    pub fn from_dense(y: &[f64]) -> Result<Self> {
        Self::new(
            y.len(),
            y.iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, &v)| (i, v))
                .collect(),
        )
    }

    /// Canonical vector `e_i`.
    pub fn unit(n: usize, i: usize) -> Result<Self> {
        Self::new(n, vec![(i, 1.0)])
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// All similarities were zero; ranking such a query yields zero scores.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(index, value)` pairs with strictly increasing indices.
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for &(i, v) in &self.entries {
            y[i] = v;
        }
        y
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &ObservationVector, b: f64) -> Result<Self> {
        Error::check_dim(self.n, other.n)?;
        let mut y = self.to_dense();
        for &(i, v) in &other.entries {
            y[i] = a * y[i] + b * v;
        }
        for &(i, v) in &self.entries {
            if other.entries.binary_search_by_key(&i, |e| e.0).is_err() {
                y[i] = a * v;
            }
        }
        Self::from_dense(&y)
    }
}

/// `y_i = Σ_j s(v_i | q_j)`: each query region contributes the similarity of
/// its `k` nearest dataset vectors; the sum is truncated to its `k` largest
/// entries (ties keep the lower index).
pub fn observation_vector(
    query_regions: &[Vec<f64>],
    data: &DescriptorSet,
    k: usize,
    gamma: f64,
) -> Result<ObservationVector> {
    observation_vector_with(query_regions, data, k, gamma, &BruteForce::new(data))
}

pub fn observation_vector_with(
    query_regions: &[Vec<f64>],
    data: &DescriptorSet,
    k: usize,
    gamma: f64,
    search: &dyn NeighborSearch,
) -> Result<ObservationVector> {
    if query_regions.is_empty() {
        return Err(Error::invalid("query has no regions"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    check_gamma(gamma)?;
    let mut y = vec![0.0; data.len()];
    for q in query_regions {
        Error::check_dim(data.dim(), q.len())?;
        check_unit(q, "query vector")?;
        for nb in search.search(q, k, None) {
            y[nb.index] += clipped_power(nb.dot, gamma);
        }
    }
    let mut entries: Vec<(usize, f64)> = y
        .into_iter()
        .enumerate()
        .filter(|&(_, v)| v > 0.0)
        .collect();
    if entries.len() > k {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        entries.truncate(k);
    }
    if entries.is_empty() {
        log::warn!("query has zero similarity to every dataset vector");
    }
    ObservationVector::new(data.len(), entries)
}

/// Options of [`filter_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterOptions {
    /// Copy `x_i = y_i` for vertices outside component 0 (the largest).
    pub copy_outside_giant: bool,
}

/// `x = U h(Λ) Uᵀ y`, without forming any `n × n` matrix.
pub fn filter(
    dec: &SpectralDecomposition,
    h: &TransferFunction,
    y: &ObservationVector,
) -> Result<Vec<f64>> {
    filter_with(dec, h, y, FilterOptions::default())
}

pub fn filter_with(
    dec: &SpectralDecomposition,
    h: &TransferFunction,
    y: &ObservationVector,
    options: FilterOptions,
) -> Result<Vec<f64>> {
    Error::check_dim(dec.n(), y.len())?;
    h.validate(dec.eigenvalues())?;
    let coeffs = spectral_coefficients(dec, h, y);
    let mut x = dec.basis().expand(&coeffs);
    flush_roundoff(&mut x);
    if options.copy_outside_giant {
        let labels = &dec.components().labels;
        for (i, xi) in x.iter_mut().enumerate() {
            if labels[i] != 0 {
                *xi = 0.0;
            }
        }
        for &(i, v) in y.entries() {
            if labels[i] != 0 {
                x[i] = v;
            }
        }
    }
    Ok(x)
}

/// `h(Λ) Uᵀ y`.
fn spectral_coefficients(
    dec: &SpectralDecomposition,
    h: &TransferFunction,
    y: &ObservationVector,
) -> Vec<f64> {
    let mut z = dec.basis().project_sparse(y.entries());
    for (zj, &l) in z.iter_mut().zip(dec.eigenvalues()) {
        *zj *= h.eval(l);
    }
    z
}

fn flush_roundoff(x: &mut [f64]) {
    let cut = FILTER_ROUNDOFF * norm_inf(x);
    for v in x.iter_mut() {
        if v.abs() <= cut {
            *v = 0.0;
        }
    }
}

/// `x'_i = x_i + (1 − η_i) Σ_j v_iᵀ q_j`: blends in Euclidean scores where the
/// truncated basis under-represents a vertex.
pub fn fsrw_correct(
    x: &[f64],
    dec: &SpectralDecomposition,
    data: &DescriptorSet,
    query_regions: &[Vec<f64>],
) -> Result<Vec<f64>> {
    Error::check_dim(dec.n(), x.len())?;
    Error::check_dim(data.len(), x.len())?;
    let eta = dec.row_norms();
    let mut out = x.to_vec();
    for q in query_regions {
        Error::check_dim(data.dim(), q.len())?;
        for (i, v) in data.vectors().enumerate() {
            let weight = 1.0 - eta[i];
            if weight != 0.0 {
                out[i] += weight * dot(v, q);
            }
        }
    }
    Ok(out)
}

/// Sparse `N × n` matrix aggregating region scores into image scores.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingMatrix {
    matrix: CsrMatrix,
    image_ids: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    #[default]
    Sum,
    Mean,
}

impl PoolingMatrix {
    /// Each region column must have exactly one owning image row with a
    /// finite nonnegative weight.
    pub fn new(matrix: CsrMatrix, image_ids: Vec<u64>) -> Result<Self> {
        Error::check_dim(matrix.rows(), image_ids.len())?;
        let mut owners = vec![0usize; matrix.cols()];
        for i in 0..matrix.rows() {
            for (j, w) in matrix.row(i) {
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::invalid(
                        "pooling weights must be finite and nonnegative",
                    ));
                }
                owners[j] += 1;
            }
        }
        if let Some(j) = owners.iter().position(|&c| c != 1) {
            return Err(Error::invalid(format!(
                "region {j} has {} owning images, expected exactly one",
                owners[j]
            )));
        }
        Ok(Self { matrix, image_ids })
    }

    pub fn identity(n: usize) -> Self {
        let ids = (0..n as u64).collect::<Vec<_>>();
        Self::from_assignment(&ids, PoolingMode::Sum)
    }

    /// Groups regions by image id; images are ordered by ascending id.
    pub fn from_assignment(region_to_image: &[u64], mode: PoolingMode) -> Self {
        let mut image_ids: Vec<u64> = region_to_image.to_vec();
        image_ids.sort_unstable();
        image_ids.dedup();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); image_ids.len()];
        for (region, id) in region_to_image.iter().enumerate() {
            let row = image_ids.binary_search(id).expect("id present");
            rows[row].push((region, 1.0));
        }
        if mode == PoolingMode::Mean {
            for row in rows.iter_mut() {
                let w = 1.0 / row.len() as f64;
                row.iter_mut().for_each(|e| e.1 = w);
            }
        }
        let matrix = CsrMatrix::from_rows(region_to_image.len(), rows).expect("in range");
        Self { matrix, image_ids }
    }

    pub fn for_descriptors(data: &DescriptorSet, mode: PoolingMode) -> Self {
        Self::from_assignment(data.region_to_image(), mode)
    }

    pub fn images(&self) -> usize {
        self.matrix.rows()
    }

    pub fn regions(&self) -> usize {
        self.matrix.cols()
    }

    pub fn image_ids(&self) -> &[u64] {
        &self.image_ids
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }
}

/// `x̄ = Σ x`.
pub fn pool(pooling: &PoolingMatrix, x: &[f64]) -> Result<Vec<f64>> {
    pooling.matrix.matvec(x)
}

/// `Ū = Σ U`, precomputed so that image scores come straight from the
/// spectral coefficients: `x̄ = Ū h(Λ) Uᵀ y`.
#[derive(Debug, Clone)]
pub struct PooledBasis {
    ubar: DenseMatrix,
}

impl PooledBasis {
    pub fn new(pooling: &PoolingMatrix, dec: &SpectralDecomposition) -> Result<Self> {
        Error::check_dim(dec.n(), pooling.regions())?;
        let r = dec.rank();
        let mut ubar = DenseMatrix::zeros(pooling.images(), r);
        let basis = dec.basis();
        for img in 0..pooling.images() {
            let dst = ubar.row_mut(img);
            for (region, w) in pooling.matrix.row(img) {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d += w * basis.get(region, j);
                }
            }
        }
        Ok(Self { ubar })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.ubar
    }

    pub fn filter(
        &self,
        dec: &SpectralDecomposition,
        h: &TransferFunction,
        y: &ObservationVector,
    ) -> Result<Vec<f64>> {
        Error::check_dim(dec.n(), y.len())?;
        Error::check_dim(dec.rank(), self.ubar.cols())?;
        h.validate(dec.eigenvalues())?;
        let z = spectral_coefficients(dec, h, y);
        self.ubar.matvec(&z)
    }
}

/// `Φ = h(Λ)^{1/2} Uᵀ` (`r × n`), so that `Φᵀ Φ = U h(Λ) Uᵀ`.
pub fn embedding(dec: &SpectralDecomposition, h: &TransferFunction) -> Result<DenseMatrix> {
    let scale: Vec<f64> = dec
        .eigenvalues()
        .iter()
        .map(|&l| {
            let v = h.eval(l);
            if v >= 0.0 {
                Ok(v.sqrt())
            } else {
                Err(Error::invalid(format!(
                    "h({l}) = {v} is negative; embedding needs h >= 0 on the spectrum"
                )))
            }
        })
        .collect::<Result<_>>()?;
    let u = dec.basis().to_dense();
    let mut phi = u.transpose();
    for (j, s) in scale.iter().enumerate() {
        phi.row_mut(j).iter_mut().for_each(|v| *v *= s);
    }
    Ok(phi)
}

/// `ψ(z)_i = s(v_i | z)`: similarity to the `k` nearest dataset vectors.
pub fn neighbor_mapping(z: &[f64], data: &DescriptorSet, k: usize, gamma: f64) -> Result<Vec<f64>> {
    Error::check_dim(data.dim(), z.len())?;
    check_gamma(gamma)?;
    let mut psi = vec![0.0; data.len()];
    for nb in BruteForce::new(data).search(z, k, None) {
        psi[nb.index] = clipped_power(nb.dot, gamma);
    }
    Ok(psi)
}

/// `κ̂(z₁, z₂) = ψ(z₁)ᵀ Φᵀ Φ ψ(z₂)`.
pub fn out_of_sample_similarity(
    z1: &[f64],
    z2: &[f64],
    phi: &DenseMatrix,
    data: &DescriptorSet,
    k: usize,
    gamma: f64,
) -> Result<f64> {
    let e1 = phi.matvec(&neighbor_mapping(z1, data, k, gamma)?)?;
    let e2 = phi.matvec(&neighbor_mapping(z2, data, k, gamma)?)?;
    Ok(dot(&e1, &e2))
}

/// Indices sorted by descending score, ties by ascending index.
pub fn rank(scores: &[f64]) -> Result<Vec<usize>> {
    if let Some(i) = scores.iter().position(|v| v.is_nan()) {
        return Err(Error::Numerical(format!("score {i} is NaN")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("no NaN")
            .then(a.cmp(&b))
    });
    Ok(order)
}

/// Region scores, image scores and the image order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub x: Vec<f64>,
    pub x_pooled: Vec<f64>,
    pub order: Vec<usize>,
}

impl RankingResult {
    pub fn new(x: Vec<f64>, pooling: &PoolingMatrix) -> Result<Self> {
        let x_pooled = pool(pooling, &x)?;
        let order = rank(&x_pooled)?;
        Ok(Self { x, x_pooled, order })
    }
}
