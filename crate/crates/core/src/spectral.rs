//! Offline stage: low-rank spectral decomposition of a symmetric matrix.
//!
//! The randomized path runs simultaneous iteration from a Gaussian start
//! ([`range_finder`]), projects the matrix onto the resulting basis and
//! eigendecomposes the small projected matrix
//! ([`approx_eigendecomposition`]). [`exact_eigendecomposition`] is the dense
//! reference. [`sparsify`] keeps the largest entries of `U`, and
//! [`decompose_blockwise`] decomposes each connected component separately so
//! that small components do not crowd out the giant one.

use serde::{Deserialize, Serialize};

use crate::graph::ComponentLabeling;
use crate::linalg::{self, dot, normalize_sign, DenseMatrix};
use crate::rng::{derive_seed, CounterRng};
use crate::sparse::{CsrMatrix, SparseSymmetricMatrix};
use crate::{Error, Result};

/// Largest `n` accepted by [`exact_eigendecomposition`].
pub const DEFAULT_EXACT_LIMIT: usize = 4096;

pub const DEFAULT_OVERSAMPLING: usize = 10;
pub const DEFAULT_POWER_ITERATIONS: usize = 4;

/// Orthonormal basis `Q` (`n × r̂`) of the approximate range of `A`, and
/// `B = A Q`.
#[derive(Debug, Clone)]
pub struct RangeBasis {
    pub q: DenseMatrix,
    pub b: DenseMatrix,
    pub iterations: usize,
    pub seed: u64,
}

impl RangeBasis {
    pub fn width(&self) -> usize {
        self.q.cols()
    }
}

/// Which algorithm produced a decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    /// Full dense eigendecomposition.
    Exact,
    /// Dense eigendecomposition truncated to the `r` largest eigenvalues.
    RankR,
    /// Randomized rank-`r` decomposition.
    Approx,
    /// Randomized decomposition with `U` sparsified to its `τ` largest entries.
    Sparse,
}

impl Variant {
    pub fn code(self) -> u8 {
        match self {
            Variant::Exact => 0,
            Variant::RankR => 1,
            Variant::Approx => 2,
            Variant::Sparse => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Variant::Exact,
            1 => Variant::RankR,
            2 => Variant::Approx,
            3 => Variant::Sparse,
            other => return Err(Error::Format(format!("unknown variant code {other}"))),
        })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Exact => "EXACT",
            Variant::RankR => "RANK_R",
            Variant::Approx => "APPROX",
            Variant::Sparse => "SPARSE",
        })
    }
}

/// Parameters a decomposition was built with. Fields the decomposition file
/// does not carry come back as `None` after loading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub rank: usize,
    pub oversampling: Option<usize>,
    pub power_iterations: Option<usize>,
    pub tau: Option<usize>,
    pub seed: u64,
}

/// Eigenvector matrix `U` (`n × r`), dense or sparse.
#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    Dense(DenseMatrix),
    Sparse(CsrMatrix),
}

impl Basis {
    pub fn rows(&self) -> usize {
        match self {
            Basis::Dense(m) => m.rows(),
            Basis::Sparse(m) => m.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Basis::Dense(m) => m.cols(),
            Basis::Sparse(m) => m.cols(),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            Basis::Dense(m) => m.as_slice().iter().filter(|v| **v != 0.0).count(),
            Basis::Sparse(m) => m.nnz(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Basis::Dense(m) => m[(i, j)],
            Basis::Sparse(m) => m.get(i, j),
        }
    }

    /// `Uᵀ y` for sparse `y` given as `(index, value)` pairs.
    pub fn project_sparse(&self, y: &[(usize, f64)]) -> Vec<f64> {
        let mut z = vec![0.0; self.cols()];
        match self {
            Basis::Dense(m) => {
                for &(i, v) in y {
                    linalg::axpy(v, m.row(i), &mut z);
                }
            }
            Basis::Sparse(m) => {
                for &(i, v) in y {
                    for (j, u) in m.row(i) {
                        z[j] += u * v;
                    }
                }
            }
        }
        z
    }

    /// `U z`.
    pub fn expand(&self, z: &[f64]) -> Vec<f64> {
        debug_assert_eq!(z.len(), self.cols());
        match self {
            Basis::Dense(m) => (0..m.rows()).map(|i| dot(m.row(i), z)).collect(),
            Basis::Sparse(m) => m.matvec(z).expect("dimension checked"),
        }
    }

    pub fn row_norms(&self) -> Vec<f64> {
        match self {
            Basis::Dense(m) => m.row_norms(),
            Basis::Sparse(m) => m.row_norms(),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            Basis::Dense(m) => m.clone(),
            Basis::Sparse(m) => m.to_dense(),
        }
    }

    fn map_values(&self, f: impl Fn(f64) -> f64) -> Basis {
        match self {
            Basis::Dense(m) => {
                let mut m = m.clone();
                m.as_mut_slice().iter_mut().for_each(|v| *v = f(*v));
                Basis::Dense(m)
            }
            Basis::Sparse(m) => Basis::Sparse(m.map_values(|_, _, v| f(v))),
        }
    }
}

/// `U Λ Uᵀ ≈ A`, with the row norms `η` of `U` and the component layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    basis: Basis,
    eigenvalues: Vec<f64>,
    row_norms: Vec<f64>,
    components: ComponentLabeling,
    variant: Variant,
    provenance: Provenance,
    alpha_hint: Option<f64>,
}

impl SpectralDecomposition {
    /// Assembles a decomposition, recomputing `η` from `basis`.
    pub fn new(
        basis: Basis,
        eigenvalues: Vec<f64>,
        variant: Variant,
        provenance: Provenance,
    ) -> Result<Self> {
        let row_norms = basis.row_norms();
        Self::from_parts(
            basis,
            eigenvalues,
            row_norms,
            ComponentLabeling::trivial(0),
            variant,
            provenance,
            None,
        )
    }

    /// Assembles a decomposition from stored parts. An empty labeling is
    /// replaced by the trivial one.
    pub fn from_parts(
        basis: Basis,
        eigenvalues: Vec<f64>,
        row_norms: Vec<f64>,
        components: ComponentLabeling,
        variant: Variant,
        provenance: Provenance,
        alpha_hint: Option<f64>,
    ) -> Result<Self> {
        let n = basis.rows();
        Error::check_dim(basis.cols(), eigenvalues.len())?;
        Error::check_dim(n, row_norms.len())?;
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid(
                "eigenvalues must be sorted in descending order",
            ));
        }
        let components = if components.is_empty() {
            ComponentLabeling::trivial(n)
        } else {
            Error::check_dim(n, components.len())?;
            components
        };
        Ok(Self {
            basis,
            eigenvalues,
            row_norms,
            components,
            variant,
            provenance,
            alpha_hint,
        })
    }

    /// Number of vertices.
    pub fn n(&self) -> usize {
        self.basis.rows()
    }

    /// Number of retained eigenpairs.
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `η_i`, the Euclidean norm of row `i` of `U`.
    pub fn row_norms(&self) -> &[f64] {
        &self.row_norms
    }

    pub fn components(&self) -> &ComponentLabeling {
        &self.components
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn alpha_hint(&self) -> Option<f64> {
        self.alpha_hint
    }

    pub fn with_components(mut self, components: ComponentLabeling) -> Result<Self> {
        Error::check_dim(self.n(), components.len())?;
        self.components = components;
        Ok(self)
    }

    pub fn with_alpha_hint(mut self, alpha: Option<f64>) -> Self {
        self.alpha_hint = alpha;
        self
    }

    /// Keeps the `r` leading eigenpairs. An `EXACT` decomposition becomes
    /// `RANK_R` unless nothing is dropped.
    pub fn truncate(&self, r: usize) -> Result<Self> {
        if r == 0 || r > self.rank() {
            return Err(Error::invalid(format!(
                "cannot truncate rank {} decomposition to {r}",
                self.rank()
            )));
        }
        let basis = match &self.basis {
            Basis::Dense(m) => Basis::Dense(m.select_columns(&(0..r).collect::<Vec<_>>())),
            Basis::Sparse(m) => {
                let rows = (0..m.rows())
                    .map(|i| m.row(i).filter(|&(j, _)| j < r).collect())
                    .collect();
                Basis::Sparse(CsrMatrix::from_rows(r, rows)?)
            }
        };
        let variant = match self.variant {
            Variant::Exact if r < self.rank() => Variant::RankR,
            v => v,
        };
        let row_norms = basis.row_norms();
        Ok(Self {
            basis,
            eigenvalues: self.eigenvalues[..r].to_vec(),
            row_norms,
            components: self.components.clone(),
            variant,
            provenance: Provenance {
                rank: r,
                ..self.provenance
            },
            alpha_hint: self.alpha_hint,
        })
    }

    /// Rounds `U` and `η` to single precision, the precision of the
    /// decomposition file. Eigenvalues stay in double precision.
    pub fn to_storage_precision(&self) -> Self {
        let round = |v: f64| v as f32 as f64;
        Self {
            basis: self.basis.map_values(round),
            row_norms: self.row_norms.iter().map(|&v| round(v)).collect(),
            ..self.clone()
        }
    }
}

/// Simultaneous iteration from a Gaussian start: `Q⁽ᵗ⁾ R⁽ᵗ⁾ = B⁽ᵗ⁾`,
/// `B⁽ᵗ⁺¹⁾ = A Q⁽ᵗ⁾` for `t = 0..q`; returns `Q = Q⁽q⁻¹⁾`, `B = A Q`.
pub fn range_finder(
    a: &SparseSymmetricMatrix,
    r_hat: usize,
    q: usize,
    seed: u64,
) -> Result<RangeBasis> {
    let n = a.n();
    if r_hat == 0 || r_hat > n {
        return Err(Error::invalid(format!(
            "range width must satisfy 0 < r_hat <= n (r_hat={r_hat}, n={n})"
        )));
    }
    if q == 0 {
        return Err(Error::invalid("at least one power iteration is required"));
    }
    let rng = CounterRng::new(seed);
    let mut b = DenseMatrix::from_fn(n, r_hat, |i, j| rng.gaussian((i * r_hat + j) as u64));
    let mut basis = None;
    for _ in 0..q {
        let qm = linalg::orthonormalize(&b)?;
        b = a.mul_dense(&qm)?;
        basis = Some(qm);
    }
    Ok(RangeBasis {
        q: basis.expect("q >= 1"),
        b,
        iterations: q,
        seed,
    })
}

/// Rank-`r` eigendecomposition of `A` restricted to a range basis:
/// eigendecompose `C = Qᵀ B`, keep the `r` largest eigenvalues, `U = Q V`.
pub fn approx_eigendecomposition(
    a: &SparseSymmetricMatrix,
    basis: &RangeBasis,
    r: usize,
) -> Result<SpectralDecomposition> {
    let r_hat = basis.width();
    Error::check_dim(a.n(), basis.q.rows())?;
    if r == 0 || r > r_hat {
        return Err(Error::invalid(format!(
            "rank must satisfy 0 < r <= r_hat (r={r}, r_hat={r_hat})"
        )));
    }
    let mut c = basis.q.transpose_matmul(&basis.b)?;
    // C is symmetric in exact arithmetic.
    for i in 0..r_hat {
        for j in 0..i {
            let s = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = s;
            c[(j, i)] = s;
        }
    }
    let eig = linalg::symmetric_eigen(&c)?;
    let v = DenseMatrix::from_columns(r_hat, &eig.vectors[..r]);
    let mut u = basis.q.matmul(&v)?;
    sign_normalize_columns(&mut u);
    let provenance = Provenance {
        rank: r,
        oversampling: Some(r_hat - r),
        power_iterations: Some(basis.iterations),
        tau: None,
        seed: basis.seed,
    };
    SpectralDecomposition::new(
        Basis::Dense(u),
        eig.values[..r].to_vec(),
        Variant::Approx,
        provenance,
    )
}

/// Dense eigendecomposition of `A`, for `n <= DEFAULT_EXACT_LIMIT`.
pub fn exact_eigendecomposition(a: &SparseSymmetricMatrix) -> Result<SpectralDecomposition> {
    exact_eigendecomposition_limited(a, DEFAULT_EXACT_LIMIT)
}

pub fn exact_eigendecomposition_limited(
    a: &SparseSymmetricMatrix,
    max_n: usize,
) -> Result<SpectralDecomposition> {
    let n = a.n();
    if n > max_n {
        return Err(Error::invalid(format!(
            "n = {n} exceeds the dense limit {max_n}; use the approximate decomposition"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    let eig = linalg::symmetric_eigen(&a.to_dense())?;
    let u = eig.vectors_as_matrix();
    let provenance = Provenance {
        rank: n,
        oversampling: Some(0),
        power_iterations: Some(0),
        tau: None,
        seed: 0,
    };
    SpectralDecomposition::new(Basis::Dense(u), eig.values, Variant::Exact, provenance)
}

/// Exact decomposition truncated to the `r` largest eigenvalues.
pub fn rank_r_decomposition(a: &SparseSymmetricMatrix, r: usize) -> Result<SpectralDecomposition> {
    exact_eigendecomposition(a)?.truncate(r)
}

fn sign_normalize_columns(u: &mut DenseMatrix) {
    let mut cols = u.to_columns();
    for c in cols.iter_mut() {
        normalize_sign(c);
    }
    *u = DenseMatrix::from_columns(u.rows(), &cols);
}

/// Keeps the `tau` largest-magnitude entries of `U` (globally, ties by row
/// then column) and drops the rest; `η` is recomputed.
pub fn sparsify(dec: &SpectralDecomposition, tau: usize) -> Result<SpectralDecomposition> {
    if tau == 0 {
        return Err(Error::invalid("tau must be positive"));
    }
    if dec.variant() == Variant::Sparse {
        return Err(Error::invalid("decomposition is already sparse"));
    }
    let u = dec.basis();
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(u.nnz());
    match u {
        Basis::Dense(m) => {
            for i in 0..m.rows() {
                for (j, &v) in m.row(i).iter().enumerate() {
                    if v != 0.0 {
                        entries.push((i, j, v));
                    }
                }
            }
        }
        Basis::Sparse(m) => {
            for i in 0..m.rows() {
                entries.extend(m.row(i).map(|(j, v)| (i, j, v)));
            }
        }
    }
    let order = |a: &(usize, usize, f64), b: &(usize, usize, f64)| {
        b.2.abs()
            .total_cmp(&a.2.abs())
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    };
    if entries.len() > tau {
        entries.select_nth_unstable_by(tau - 1, order);
        entries.truncate(tau);
    }
    let kept = entries.len();
    let csr = CsrMatrix::from_triplets(u.rows(), u.cols(), entries)?;
    let provenance = Provenance {
        tau: Some(kept),
        ..*dec.provenance()
    };
    let sparse = SpectralDecomposition::new(
        Basis::Sparse(csr),
        dec.eigenvalues().to_vec(),
        Variant::Sparse,
        provenance,
    )?;
    Ok(sparse
        .with_components(dec.components().clone())?
        .with_alpha_hint(dec.alpha_hint()))
}

/// Parameters of [`decompose_blockwise`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockwiseConfig {
    /// Total number of eigenpairs to keep.
    pub rank: usize,
    /// Eigenpairs guaranteed to each component; components with at most
    /// this many vertices are decomposed exactly.
    pub rho: usize,
    pub oversampling: usize,
    pub power_iterations: usize,
    pub seed: u64,
}

/// Seed for component `c`. Component 0 reuses the parent seed so that a
/// connected graph follows the same random stream as the monolithic path.
pub fn component_seed(seed: u64, c: usize) -> u64 {
    if c == 0 {
        seed
    } else {
        derive_seed(seed, c as u64)
    }
}

/// Decomposes each connected component separately and merges the slices:
/// up to `rho` per component are kept, then the remaining budget up to
/// `rank` goes to the largest eigenvalues over all components.
///
/// A component with `n_l > rho` gets a randomized rank
/// `max(rho, ceil(rank · n_l / n))` decomposition; smaller ones are exact.
pub fn decompose_blockwise(
    a: &SparseSymmetricMatrix,
    labeling: &ComponentLabeling,
    config: &BlockwiseConfig,
) -> Result<SpectralDecomposition> {
    let n = a.n();
    Error::check_dim(n, labeling.len())?;
    let BlockwiseConfig {
        rank: r,
        rho,
        oversampling: p,
        power_iterations: q,
        seed,
    } = *config;
    if r == 0 || rho == 0 {
        return Err(Error::invalid("rank and rho must be positive"));
    }

    struct Block {
        values: Vec<f64>,
        vectors: Vec<Vec<f64>>,
        exact: bool,
    }

    let blocks: Vec<Block> = (0..labeling.count())
        .map(|c| -> Result<Block> {
            let members = labeling.members(c);
            let sub = a.principal_submatrix(members);
            let n_l = members.len();
            if n_l > rho {
                let r_l = rho.max((r * n_l).div_ceil(n)).min(n_l);
                let r_hat = (r_l + p).min(n_l);
                let basis = range_finder(&sub, r_hat, q.max(1), component_seed(seed, c))?;
                let dec = approx_eigendecomposition(&sub, &basis, r_l)?;
                let u = dec.basis().to_dense();
                Ok(Block {
                    values: dec.eigenvalues().to_vec(),
                    vectors: u.to_columns(),
                    exact: false,
                })
            } else {
                let eig = linalg::symmetric_eigen(&sub.to_dense())?;
                Ok(Block {
                    values: eig.values,
                    vectors: eig.vectors,
                    exact: true,
                })
            }
        })
        .collect::<Result<_>>()?;

    let selected = select_block_slices(
        &blocks.iter().map(|b| b.values.clone()).collect::<Vec<_>>(),
        rho,
        r,
    );

    let mut u = DenseMatrix::zeros(n, selected.len());
    let mut values = Vec::with_capacity(selected.len());
    for (col, &(c, j)) in selected.iter().enumerate() {
        values.push(blocks[c].values[j]);
        for (&v, &x) in labeling.members(c).iter().zip(&blocks[c].vectors[j]) {
            u[(v, col)] = x;
        }
    }
    let all_exact = blocks.iter().all(|b| b.exact);
    let variant = match (all_exact, selected.len() == n) {
        (true, true) => Variant::Exact,
        (true, false) => Variant::RankR,
        _ => Variant::Approx,
    };
    let provenance = Provenance {
        rank: selected.len(),
        oversampling: Some(p),
        power_iterations: Some(q),
        tau: None,
        seed,
    };
    SpectralDecomposition::new(Basis::Dense(u), values, variant, provenance)?
        .with_components(labeling.clone())
}

/// Randomized rank-`r` decomposition of the largest component (component 0)
/// only. Rows of other vertices are zero; filter them with
/// `copy_outside_giant` to fall back to the observation.
pub fn decompose_giant(
    a: &SparseSymmetricMatrix,
    labeling: &ComponentLabeling,
    r: usize,
    oversampling: usize,
    power_iterations: usize,
    seed: u64,
) -> Result<SpectralDecomposition> {
    let n = a.n();
    Error::check_dim(n, labeling.len())?;
    if labeling.count() == 0 {
        return Err(Error::invalid("empty graph"));
    }
    let members = labeling.members(0);
    let n0 = members.len();
    let r = r.min(n0);
    let sub = a.principal_submatrix(members);
    let basis = range_finder(&sub, (r + oversampling).min(n0), power_iterations, seed)?;
    let dec = approx_eigendecomposition(&sub, &basis, r)?;
    let sub_u = dec.basis().to_dense();
    let mut u = DenseMatrix::zeros(n, r);
    for (row, &v) in members.iter().enumerate() {
        u.row_mut(v).copy_from_slice(sub_u.row(row));
    }
    SpectralDecomposition::new(
        Basis::Dense(u),
        dec.eigenvalues().to_vec(),
        Variant::Approx,
        *dec.provenance(),
    )?
    .with_components(labeling.clone())
}

/// Merge rule for per-block spectra (each sorted descending). Returns
/// `(block, index)` pairs ordered by eigenvalue descending, ties by block
/// then index.
pub fn select_block_slices(spectra: &[Vec<f64>], rho: usize, r: usize) -> Vec<(usize, usize)> {
    let mut guaranteed = Vec::new();
    let mut rest = Vec::new();
    for (c, vals) in spectra.iter().enumerate() {
        for (j, &l) in vals.iter().enumerate() {
            if j < rho {
                guaranteed.push((c, j, l));
            } else {
                rest.push((c, j, l));
            }
        }
    }
    let by_value = |a: &(usize, usize, f64), b: &(usize, usize, f64)| {
        b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
    };
    guaranteed.sort_by(by_value);
    if guaranteed.len() >= r {
        guaranteed.truncate(r);
    } else {
        rest.sort_by(by_value);
        let room = r - guaranteed.len();
        guaranteed.extend(rest.into_iter().take(room));
        guaranteed.sort_by(by_value);
    }
    guaranteed.into_iter().map(|(c, j, _)| (c, j)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{connected_components, degrees, normalize_adjacency};
    use approx::assert_abs_diff_eq;

    fn edge_graph() -> SparseSymmetricMatrix {
        let w = SparseSymmetricMatrix::from_undirected(2, &[(0, 1, 3.0)]).unwrap();
        normalize_adjacency(&w, &degrees(&w)).unwrap()
    }

    #[test]
    fn exact_on_edge_graph() {
        let dec = exact_eigendecomposition(&edge_graph()).unwrap();
        assert_eq!(dec.variant(), Variant::Exact);
        assert_abs_diff_eq!(dec.eigenvalues()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dec.eigenvalues()[1], -1.0, epsilon = 1e-15);
        let u = dec.basis().to_dense();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(u[(0, 0)], s, epsilon = 1e-15);
        assert_abs_diff_eq!(u[(1, 0)], s, epsilon = 1e-15);
        assert_abs_diff_eq!(u[(0, 1)], -u[(1, 1)], epsilon = 1e-15);
        for eta in dec.row_norms() {
            assert_abs_diff_eq!(*eta, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn approx_on_edge_graph_full_width() {
        let a = edge_graph();
        let basis = range_finder(&a, 2, 2, 5).unwrap();
        let dec = approx_eigendecomposition(&a, &basis, 2).unwrap();
        assert_abs_diff_eq!(dec.eigenvalues()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dec.eigenvalues()[1], -1.0, epsilon = 1e-12);
        let u = dec.basis().to_dense();
        assert_abs_diff_eq!(u[(0, 0)], u[(1, 0)], epsilon = 1e-12);
        assert!(u[(0, 0)] > 0.0);
    }

    #[test]
    fn parameter_errors() {
        let a = edge_graph();
        assert!(range_finder(&a, 3, 1, 0).is_err());
        assert!(range_finder(&a, 1, 0, 0).is_err());
        let basis = range_finder(&a, 1, 1, 0).unwrap();
        assert!(approx_eigendecomposition(&a, &basis, 2).is_err());
        assert!(exact_eigendecomposition_limited(&a, 1).is_err());
        let dec = exact_eigendecomposition(&a).unwrap();
        assert!(sparsify(&dec, 0).is_err());
        let sp = sparsify(&dec, 2).unwrap();
        assert!(sparsify(&sp, 2).is_err());
        assert!(dec.truncate(3).is_err());
    }

    #[test]
    fn sparsify_keeps_dominant_entries() {
        // One dominant entry per row.
        let u = DenseMatrix::from_rows(&[
            vec![0.9, 0.1, -0.05],
            vec![0.2, -0.8, 0.1],
            vec![0.01, 0.02, 0.7],
            vec![-0.95, 0.3, 0.0],
        ])
        .unwrap();
        let prov = Provenance {
            rank: 3,
            oversampling: None,
            power_iterations: None,
            tau: None,
            seed: 0,
        };
        let dec =
            SpectralDecomposition::new(Basis::Dense(u), vec![1.0, 0.5, 0.1], Variant::Approx, prov)
                .unwrap();
        let sp = sparsify(&dec, 4).unwrap();
        assert_eq!(sp.variant(), Variant::Sparse);
        assert_eq!(sp.basis().nnz(), 4);
        for (i, j) in [(0, 0), (1, 1), (2, 2), (3, 0)] {
            assert_ne!(sp.basis().get(i, j), 0.0);
        }
        assert_abs_diff_eq!(sp.row_norms()[1], 0.8, epsilon = 1e-15);

        // τ beyond the nonzero count keeps everything (11 nonzeros).
        let all = sparsify(&dec, 100).unwrap();
        assert_eq!(all.basis().nnz(), 11);
        assert_eq!(all.basis().to_dense(), dec.basis().to_dense());
        assert_eq!(all.provenance().tau, Some(11));
    }

    #[test]
    fn sparsify_ties_prefer_earlier_entries() {
        let u = DenseMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, -0.5]]).unwrap();
        let prov = Provenance {
            rank: 2,
            oversampling: None,
            power_iterations: None,
            tau: None,
            seed: 0,
        };
        let dec =
            SpectralDecomposition::new(Basis::Dense(u), vec![1.0, 0.0], Variant::Approx, prov)
                .unwrap();
        let sp = sparsify(&dec, 3).unwrap();
        assert_eq!(sp.basis().get(1, 1), 0.0);
        assert_eq!(sp.basis().get(1, 0), 0.5);
    }

    #[test]
    fn blockwise_two_edges() {
        let w = SparseSymmetricMatrix::from_undirected(4, &[(0, 2, 1.0), (1, 3, 2.0)]).unwrap();
        let a = normalize_adjacency(&w, &degrees(&w)).unwrap();
        let labels = connected_components(&w);
        let cfg = BlockwiseConfig {
            rank: 4,
            rho: 4,
            oversampling: 0,
            power_iterations: 2,
            seed: 1,
        };
        let dec = decompose_blockwise(&a, &labels, &cfg).unwrap();
        assert_eq!(dec.variant(), Variant::Exact);
        let vals = dec.eigenvalues();
        for (v, e) in vals.iter().zip([1.0, 1.0, -1.0, -1.0]) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-14);
        }
        let u = dec.basis().to_dense();
        for col in 0..4 {
            let on_first = (u[(0, col)] != 0.0) || (u[(2, col)] != 0.0);
            let on_second = (u[(1, col)] != 0.0) || (u[(3, col)] != 0.0);
            assert!(on_first ^ on_second, "column {col} spans both blocks");
        }
    }

    #[test]
    fn merge_rule_guarantees_rho_per_block() {
        let spectra = vec![vec![1.0, 0.9, 0.8, 0.7], vec![1.0, 0.2, 0.1]];
        // rho = 2: guaranteed {b0: 1.0, 0.9; b1: 1.0, 0.2}; fill 1 more with 0.8.
        let s = select_block_slices(&spectra, 2, 5);
        assert_eq!(s, vec![(0, 0), (1, 0), (0, 1), (0, 2), (1, 1)]);
        // Global truncation when guarantees exceed r.
        let s = select_block_slices(&spectra, 2, 3);
        assert_eq!(s, vec![(0, 0), (1, 0), (0, 1)]);
    }

    #[test]
    fn truncate_and_storage_precision() {
        let a = edge_graph();
        let dec = exact_eigendecomposition(&a).unwrap();
        let t = dec.truncate(1).unwrap();
        assert_eq!(t.variant(), Variant::RankR);
        assert_eq!(t.rank(), 1);
        assert_eq!(dec.truncate(2).unwrap().variant(), Variant::Exact);
        let s = dec.to_storage_precision();
        let u = s.basis().to_dense();
        assert!(u.as_slice().iter().all(|&v| v == v as f32 as f64));
    }
}
