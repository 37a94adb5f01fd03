//! Compressed sparse row storage.

use rayon::prelude::*;

use crate::linalg::DenseMatrix;
use crate::{Error, Result};

/// Tolerance for the structural symmetry check of [`SparseSymmetricMatrix`].
pub const SYMMETRY_TOL: f64 = 1e-12;

const PAR_ROWS: usize = 2048;

/// General `rows × cols` CSR matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: vec![],
            values: vec![],
        }
    }

    /// Builds from raw CSR arrays, validating offsets and index order.
    pub fn from_raw(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if indptr.len() != rows + 1 || indptr[0] != 0 {
            return Err(Error::Format("bad CSR row offsets".into()));
        }
        if indices.len() != values.len() || indptr[rows] != indices.len() {
            return Err(Error::Format("CSR offsets disagree with nnz".into()));
        }
        for i in 0..rows {
            if indptr[i] > indptr[i + 1] {
                return Err(Error::Format("CSR row offsets decrease".into()));
            }
            let row = &indices[indptr[i]..indptr[i + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format(format!(
                    "row {i} column indices not increasing"
                )));
            }
            if row.last().is_some_and(|&c| c as usize >= cols) {
                return Err(Error::Format(format!("row {i} column index out of range")));
            }
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Builds from `(row, col, value)` triplets. Duplicates are summed;
    /// explicit zeros are dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if let Some(&(i, j, _)) = triplets.iter().find(|&&(i, j, _)| i >= rows || j >= cols) {
            return Err(Error::invalid(format!(
                "entry ({i}, {j}) outside a {rows}x{cols} matrix"
            )));
        }
        if cols > u32::MAX as usize {
            return Err(Error::invalid("column count exceeds u32 range"));
        }
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(j as u32);
                values.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        let mut m = Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        };
        m.drop_zeros();
        Ok(m)
    }

    /// Builds from per-row `(col, value)` lists (any order within a row).
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let triplets = rows
            .into_iter()
            .enumerate()
            .flat_map(|(i, r)| r.into_iter().map(move |(j, v)| (i, j, v)))
            .collect();
        Self::from_triplets(n, cols, triplets)
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut triplets = Vec::new();
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m.rows(), m.cols(), triplets).expect("in-range dense entries")
    }

    fn drop_zeros(&mut self) {
        if !self.values.contains(&0.0) {
            return;
        }
        let mut indptr = vec![0usize; self.rows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.rows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                if self.values[k] != 0.0 {
                    indices.push(self.indices[k]);
                    values.push(self.values[k]);
                }
            }
            indptr[i + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.values = values;
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(col, value)` pairs of row `i`, in increasing column order.
    #[inline]
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .zip(&self.values[span])
            .map(|(&j, &v)| (j as usize, v))
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&(j as u32)) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    #[inline]
    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in self.indptr[i]..self.indptr[i + 1] {
            s += self.values[k] * x[self.indices[k] as usize];
        }
        s
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.cols, x.len())?;
        let mut y = vec![0.0; self.rows];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    /// `y ← A x` without allocating. Panics on dimension mismatch.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows);
        if self.rows >= PAR_ROWS {
            y.par_iter_mut()
                .enumerate()
                .for_each(|(i, yi)| *yi = self.row_dot(i, x));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = self.row_dot(i, x);
            }
        }
    }

    /// `Aᵀ x`.
    pub fn transpose_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim(self.rows, x.len())?;
        let mut y = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (j, v) in self.row(i) {
                    y[j] += v * xi;
                }
            }
        }
        Ok(y)
    }

    /// `A B` for dense `B`. Rows of the product are computed independently.
    pub fn mul_dense(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        Error::check_dim(self.cols, b.rows())?;
        let m = b.cols();
        let mut out = DenseMatrix::zeros(self.rows, m);
        if m == 0 {
            return Ok(out);
        }
        let kernel = |(i, dst): (usize, &mut [f64])| {
            for (j, v) in self.row(i) {
                crate::linalg::axpy(v, b.row(j), dst);
            }
        };
        let buf = out.as_mut_slice();
        if self.rows * m >= PAR_ROWS * 8 {
            buf.par_chunks_mut(m).enumerate().for_each(kernel);
        } else {
            buf.chunks_mut(m).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                triplets.push((j, i, v));
            }
        }
        CsrMatrix::from_triplets(self.cols, self.rows, triplets).expect("in range")
    }

    /// Euclidean norm of each row.
    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).map(|(_, v)| v * v).sum::<f64>().sqrt())
            .collect()
    }

    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> CsrMatrix {
        let mut m = self.clone();
        for i in 0..self.rows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                m.values[k] = f(i, self.indices[k] as usize, self.values[k]);
            }
        }
        m.drop_zeros();
        m
    }
}

/// Square CSR matrix whose sparsity pattern and values are symmetric.
///
/// Used for the adjacency `W`, the normalized adjacency `𝒲` and the
/// Laplacians built from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetricMatrix {
    inner: CsrMatrix,
}

impl SparseSymmetricMatrix {
    /// Wraps a square CSR matrix after checking symmetry within
    /// [`SYMMETRY_TOL`].
    pub fn new(inner: CsrMatrix) -> Result<Self> {
        if inner.rows() != inner.cols() {
            return Err(Error::DimensionMismatch {
                expected: inner.rows(),
                got: inner.cols(),
            });
        }
        for i in 0..inner.rows() {
            for (j, v) in inner.row(i) {
                let t = inner.get(j, i);
                if (v - t).abs() > SYMMETRY_TOL || (t == 0.0 && v != 0.0) {
                    return Err(Error::invalid(format!(
                        "matrix is not symmetric at ({i}, {j}): {v} vs {t}"
                    )));
                }
            }
        }
        Ok(Self { inner })
    }

    pub fn from_triplets(n: usize, triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        Self::new(CsrMatrix::from_triplets(n, n, triplets)?)
    }

    /// Builds from undirected entries `(i, j, w)`; each is mirrored to `(j, i)`.
    pub fn from_undirected(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut t = Vec::with_capacity(2 * edges.len());
        for &(i, j, w) in edges {
            t.push((i, j, w));
            if i != j {
                t.push((j, i, w));
            }
        }
        Self::from_triplets(n, t)
    }

    pub fn from_dense(m: &DenseMatrix) -> Result<Self> {
        Self::new(CsrMatrix::from_dense(m))
    }

    pub fn identity(n: usize) -> Self {
        let inner = CsrMatrix::from_raw(
            n,
            n,
            (0..=n).collect(),
            (0..n as u32).collect(),
            vec![1.0; n],
        )
        .expect("identity is valid CSR");
        Self { inner }
    }

    pub(crate) fn from_csr_unchecked(inner: CsrMatrix) -> Self {
        debug_assert_eq!(inner.rows(), inner.cols());
        Self { inner }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.inner.rows()
    }

    pub fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.inner
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.inner.row(i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.inner.matvec(x)
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        self.inner.matvec_into(x, y)
    }

    pub fn mul_dense(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        self.inner.mul_dense(b)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        self.inner.to_dense()
    }

    /// Zero diagonal and nonnegative values.
    pub fn is_adjacency(&self) -> bool {
        (0..self.n()).all(|i| self.row(i).all(|(j, v)| j != i && v >= 0.0))
    }

    pub fn max_row_nnz(&self) -> usize {
        (0..self.n())
            .map(|i| self.inner.row_nnz(i))
            .max()
            .unwrap_or(0)
    }

    /// Principal submatrix on `vertices` (new index `a` ↔ old `vertices[a]`).
    pub fn principal_submatrix(&self, vertices: &[usize]) -> SparseSymmetricMatrix {
        let mut local = vec![usize::MAX; self.n()];
        for (a, &v) in vertices.iter().enumerate() {
            local[v] = a;
        }
        let mut triplets = Vec::new();
        for (a, &v) in vertices.iter().enumerate() {
            for (j, w) in self.row(v) {
                if local[j] != usize::MAX {
                    triplets.push((a, local[j], w));
                }
            }
        }
        let inner =
            CsrMatrix::from_triplets(vertices.len(), vertices.len(), triplets).expect("in range");
        Self { inner }
    }

    /// `P A Pᵀ` where row `a` of the result is row `order[a]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> SparseSymmetricMatrix {
        self.principal_submatrix(order)
    }
}
