#![allow(dead_code)]

use fsr_core::rng::SeqRng;
use fsr_core::{
    build_mutual_knn_graph, degrees, normalize_adjacency, DenseMatrix, DescriptorSet,
    SparseSymmetricMatrix,
};
use nalgebra::{DMatrix, DVector};

pub fn unit_vectors(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeqRng::new(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

pub fn random_descriptors(n: usize, d: usize, seed: u64) -> DescriptorSet {
    DescriptorSet::new(unit_vectors(n, d, seed)).unwrap()
}

/// Adjacency and normalized adjacency of a mutual k-NN graph on random data.
pub fn random_graph(
    n: usize,
    k: usize,
    seed: u64,
) -> (SparseSymmetricMatrix, SparseSymmetricMatrix) {
    let data = random_descriptors(n, 6, seed);
    let w = build_mutual_knn_graph(&data, k, 3.0).unwrap();
    let a = normalize_adjacency(&w, &degrees(&w)).unwrap();
    (w, a)
}

pub fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn sparse_to_na(m: &SparseSymmetricMatrix) -> DMatrix<f64> {
    to_na(&m.to_dense())
}

/// Eigenvalues of a symmetric matrix, descending.
pub fn oracle_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// `β (I − α 𝒲)⁻¹ y` by dense LU.
pub fn oracle_solve(a: &SparseSymmetricMatrix, y: &[f64], alpha: f64) -> Vec<f64> {
    let n = a.n();
    let m = DMatrix::identity(n, n) - sparse_to_na(a) * alpha;
    let rhs = DVector::from_column_slice(y) * (1.0 - alpha);
    m.lu().solve(&rhs).unwrap().iter().copied().collect()
}

pub fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = b.iter().map(|x| x.abs()).fold(0.0, f64::max);
    diff / scale.max(f64::MIN_POSITIVE)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `Q diag(spectrum) Qᵀ` for a random orthogonal `Q`.
pub fn matrix_with_spectrum(spectrum: &[f64], seed: u64) -> SparseSymmetricMatrix {
    let n = spectrum.len();
    let mut rng = SeqRng::new(seed);
    let g = DMatrix::from_fn(n, n, |_, _| rng.gaussian());
    let q = g.qr().q();
    let m = &q * DMatrix::from_diagonal(&DVector::from_column_slice(spectrum)) * q.transpose();
    let sym = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    SparseSymmetricMatrix::from_dense(&sym).unwrap()
}
