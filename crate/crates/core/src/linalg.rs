//! Dense linear algebra: a row-major matrix, Householder QR and a symmetric
//! eigensolver (Householder tridiagonalization + implicit-shift QL).

use std::ops::{Index, IndexMut};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Work size above which column/row loops are handed to rayon.
const PAR_THRESHOLD: usize = 1 << 15;

/// Loss of orthogonality that triggers a second QR pass.
pub const REORTH_THRESHOLD: f64 = 1e-8;

/// QL iterations allowed per eigenvalue.
pub const MAX_QL_SWEEPS: usize = 64;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl std::fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "DenseMatrix({}x{})", self.rows, self.cols)?;
        if self.rows * self.cols <= 64 {
            for i in 0..self.rows {
                write!(f, "\n  {:?}", self.row(i))?;
            }
        }
        Ok(())
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Error::check_dim(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            Error::check_dim(cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for (j, &v) in self.row(i).iter().enumerate() {
                t.data[j * self.rows + i] = v;
            }
        }
        t
    }

    /// Columns as contiguous vectors.
    pub fn to_columns(&self) -> Vec<Vec<f64>> {
        let mut cols = vec![Vec::with_capacity(self.rows); self.cols];
        for i in 0..self.rows {
            for (j, &v) in self.row(i).iter().enumerate() {
                cols[j].push(v);
            }
        }
        cols
    }

    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Self {
        let cols = columns.len();
        let mut m = DenseMatrix::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            debug_assert_eq!(c.len(), rows);
            for (i, &v) in c.iter().enumerate() {
                m.data[i * cols + j] = v;
            }
        }
        m
    }

    /// Keeps the listed columns, in the listed order.
    pub fn select_columns(&self, keep: &[usize]) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows, keep.len());
        for i in 0..self.rows {
            let src = self.row(i);
            for (dst, &j) in m.row_mut(i).iter_mut().zip(keep) {
                *dst = src[j];
            }
        }
        m
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.cols, x.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ x`.
    pub fn transpose_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.rows, x.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, self.row(i), &mut out);
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        Error::check_dim(self.cols, other.rows)?;
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), out_row);
                }
            }
        };
        if other.cols == 0 {
            return Ok(out);
        }
        if self.rows * self.cols * other.cols >= PAR_THRESHOLD {
            out.data
                .par_chunks_mut(other.cols)
                .enumerate()
                .for_each(kernel);
        } else {
            out.data.chunks_mut(other.cols).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    /// `selfᵀ other`, both with the same number of rows.
    ///
    /// Each output entry is an independent sequential sum over rows, so the
    /// result does not depend on the thread count.
    pub fn transpose_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        Error::check_dim(self.rows, other.rows)?;
        let a = self.to_columns();
        let b = other.to_columns();
        let mut out = DenseMatrix::zeros(self.cols, other.cols);
        if other.cols == 0 {
            return Ok(out);
        }
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            for (j, v) in out_row.iter_mut().enumerate() {
                *v = dot(&a[i], &b[j]);
            }
        };
        if self.rows * self.cols * other.cols >= PAR_THRESHOLD {
            out.data
                .par_chunks_mut(other.cols)
                .enumerate()
                .for_each(kernel);
        } else {
            out.data.chunks_mut(other.cols).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        Error::check_dim(self.rows, other.rows)?;
        Error::check_dim(self.cols, other.cols)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖selfᵀ self − I‖_F`.
    pub fn orthogonality_loss(&self) -> f64 {
        let g = self
            .transpose_matmul(self)
            .expect("gram of a matrix with itself");
        let mut s = 0.0;
        for i in 0..g.rows {
            for j in 0..g.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                s += (g[(i, j)] - target).powi(2);
            }
        }
        s.sqrt()
    }

    /// Euclidean norm of each row.
    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.rows).map(|i| norm2(self.row(i))).collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler vectorize without reassociation.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Thin Q factor of a Householder QR factorization of the `n × m` matrix
/// whose columns are given (`n ≥ m`).
///
/// Rank-deficient input still yields `m` orthonormal columns: a zero
/// sub-column gets the identity reflector and the corresponding column of Q
/// completes the basis.
pub fn householder_q(columns: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let m = columns.len();
    let n = columns.first().map_or(0, Vec::len);
    if m > n {
        return Err(Error::invalid(format!(
            "QR needs at least as many rows as columns ({n} < {m})"
        )));
    }
    let mut work: Vec<Vec<f64>> = columns.to_vec();
    // Reflector j acts on rows j..n: H = I − τ v vᵀ with v[0] = 1.
    let mut reflectors: Vec<(Vec<f64>, f64)> = Vec::with_capacity(m);

    for j in 0..m {
        let (head, tail) = work.split_at_mut(j + 1);
        let col = &mut head[j];
        let x = &col[j..];
        let sigma: f64 = dot(&x[1..], &x[1..]);
        let x0 = x[0];
        let (v, tau) = if sigma == 0.0 {
            // Already upper triangular in this column.
            (vec![0.0; n - j], 0.0)
        } else {
            let mu = (x0 * x0 + sigma).sqrt();
            let v0 = if x0 <= 0.0 {
                x0 - mu
            } else {
                -sigma / (x0 + mu)
            };
            let tau = 2.0 * v0 * v0 / (sigma + v0 * v0);
            let mut v: Vec<f64> = x.iter().map(|&xi| xi / v0).collect();
            v[0] = 1.0;
            (v, tau)
        };
        if tau != 0.0 {
            let apply = |c: &mut Vec<f64>| {
                let s = tau * dot(&v, &c[j..]);
                axpy(-s, &v, &mut c[j..]);
            };
            if (n - j) * tail.len() >= PAR_THRESHOLD {
                tail.par_iter_mut().for_each(apply);
            } else {
                tail.iter_mut().for_each(apply);
            }
        }
        reflectors.push((v, tau));
    }

    // Q e_k = H_0 H_1 ... H_{m-1} e_k.
    let build = |k: usize| {
        let mut q = vec![0.0; n];
        q[k] = 1.0;
        for (j, (v, tau)) in reflectors.iter().enumerate().take(k + 1).rev() {
            if *tau != 0.0 {
                let s = tau * dot(v, &q[j..]);
                axpy(-s, v, &mut q[j..]);
            }
        }
        q
    };
    let q: Vec<Vec<f64>> = if n * m * m >= PAR_THRESHOLD {
        (0..m).into_par_iter().map(build).collect()
    } else {
        (0..m).map(build).collect()
    };
    Ok(q)
}

/// Orthonormal basis for the column space of `b` (`n × m`, `n ≥ m`), with one
/// re-orthogonalization pass when the first pass loses orthogonality.
pub fn orthonormalize(b: &DenseMatrix) -> Result<DenseMatrix> {
    let q = householder_q(&b.to_columns())?;
    let mut qm = DenseMatrix::from_columns(b.rows(), &q);
    if qm.orthogonality_loss() > REORTH_THRESHOLD {
        log::debug!("re-orthogonalizing {}x{} basis", b.rows(), b.cols());
        let q2 = householder_q(&q)?;
        qm = DenseMatrix::from_columns(b.rows(), &q2);
    }
    Ok(qm)
}

/// Eigenpairs of a dense symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Algebraically descending.
    pub values: Vec<f64>,
    /// `vectors[j]` is the unit eigenvector of `values[j]`, sign-normalized
    /// so its largest-magnitude entry is positive.
    pub vectors: Vec<Vec<f64>>,
}

impl SymmetricEigen {
    /// Eigenvectors as the columns of an `n × n` matrix.
    pub fn vectors_as_matrix(&self) -> DenseMatrix {
        let n = self.vectors.first().map_or(0, Vec::len);
        DenseMatrix::from_columns(n, &self.vectors)
    }
}

/// Flips `v` so that its largest-magnitude entry (first one on ties) is positive.
pub fn normalize_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Symmetric eigendecomposition. Only the lower triangle is trusted; the
/// input is symmetrized from it.
pub fn symmetric_eigen(a: &DenseMatrix) -> Result<SymmetricEigen> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.cols(),
        });
    }
    if n == 0 {
        return Ok(SymmetricEigen {
            values: vec![],
            vectors: vec![],
        });
    }
    if a.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in eigen input".into()));
    }
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if j <= i { a[(i, j)] } else { a[(j, i)] })
                .collect()
        })
        .collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut v, &mut d, &mut e);
    // After tridiagonalize, v holds the accumulated orthogonal transform with
    // eigenvector components in columns; QL rotates pairs of columns, which
    // are rows of the transpose.
    let mut z = transpose_square(&v);
    tridiagonal_ql(&mut d, &mut e, &mut z)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut col = std::mem::take(&mut z[i]);
            normalize_sign(&mut col);
            col
        })
        .collect();
    Ok(SymmetricEigen { values, vectors })
}

fn transpose_square(v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = v.len();
    (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect()
}

/// Householder reduction to tridiagonal form (EISPACK `tred2` lineage).
/// On return `d` is the diagonal, `e[1..]` the subdiagonal and `v` the
/// orthogonal transform.
#[allow(clippy::needless_range_loop)]
fn tridiagonalize(v: &mut [Vec<f64>], d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    d.copy_from_slice(&v[n - 1][..n]);
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
                v[j][i] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[j][i] = f;
                g = e[j] + v[j][j] * f;
                for k in j + 1..i {
                    g += v[k][j] * d[k];
                    e[k] += v[k][j] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[k][j] -= f * e[k] + g * d[k];
                }
                d[j] = v[i - 1][j];
                v[i][j] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[n - 1][i] = v[i][i];
        v[i][i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[k][i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[k][i + 1] * v[k][j];
                }
                for k in 0..=i {
                    v[k][j] -= g * d[k];
                }
            }
        }
        for row in v.iter_mut().take(i + 1) {
            row[i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[n - 1][j];
        v[n - 1][j] = 0.0;
    }
    v[n - 1][n - 1] = 1.0;
    e[0] = 0.0;
}

/// Implicit-shift QL on a symmetric tridiagonal matrix (EISPACK `tql2`
/// lineage). `z[j]` holds column `j` of the accumulated transform.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], z: &mut [Vec<f64>]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > MAX_QL_SWEEPS {
                    return Err(Error::Numerical(format!(
                        "QL iteration did not converge for eigenvalue {l} after {MAX_QL_SWEEPS} sweeps"
                    )));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = z.split_at_mut(i + 1);
                    let zi = &mut lo[i];
                    let zi1 = &mut hi[0];
                    for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                        let t = *b;
                        *b = s * *a + c * t;
                        *a = c * *a - s * t;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}
