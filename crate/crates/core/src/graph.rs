//! Descriptor sets, mutual k-NN similarity graphs and their Laplacians.

use std::cell::Cell;

use rayon::prelude::*;

use crate::linalg::{dot, norm2};
use crate::sparse::{CsrMatrix, SparseSymmetricMatrix};
use crate::{Error, Result};

/// Allowed deviation of a stored descriptor from unit norm.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// `n` unit-norm vectors of dimension `d`, with stable ids and the owning
/// image of each vector (identity for global descriptors).
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    dim: usize,
    data: Vec<f64>,
    ids: Vec<u64>,
    region_to_image: Vec<u64>,
}

impl DescriptorSet {
    /// Vectors must already be unit-norm.
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(vectors, false)
    }

    /// Normalizes each vector to unit norm; zero vectors are rejected.
    pub fn normalized(vectors: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(vectors, true)
    }

    fn build(vectors: Vec<Vec<f64>>, normalize: bool) -> Result<Self> {
        let n = vectors.len();
        if n == 0 {
            return Err(Error::invalid("descriptor set is empty"));
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(Error::invalid("descriptor dimension is zero"));
        }
        let mut data = Vec::with_capacity(n * dim);
        for (i, mut v) in vectors.into_iter().enumerate() {
            Error::check_dim(dim, v.len())?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("vector {i} has non-finite entries")));
            }
            let norm = norm2(&v);
            if normalize {
                if norm == 0.0 {
                    return Err(Error::invalid(format!("vector {i} is zero")));
                }
                v.iter_mut().for_each(|x| *x /= norm);
            } else if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(format!(
                    "vector {i} has norm {norm}, expected unit norm"
                )));
            }
            data.extend_from_slice(&v);
        }
        Ok(Self {
            dim,
            data,
            ids: (0..n as u64).collect(),
            region_to_image: (0..n as u64).collect(),
        })
    }

    /// Replaces the ids; they must be unique.
    pub fn with_ids(mut self, ids: Vec<u64>) -> Result<Self> {
        Error::check_dim(self.len(), ids.len())?;
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("descriptor ids are not unique"));
        }
        self.ids = ids;
        Ok(self)
    }

    /// Sets the owning image id of each vector.
    pub fn with_images(mut self, region_to_image: Vec<u64>) -> Result<Self> {
        Error::check_dim(self.len(), region_to_image.len())?;
        self.region_to_image = region_to_image;
        Ok(self)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn region_to_image(&self) -> &[u64] {
        &self.region_to_image
    }
}

/// Checks that `v` is unit-norm within [`UNIT_NORM_TOL`].
pub(crate) fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let norm = norm2(v);
    if (norm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::invalid(format!(
            "{what} has norm {norm}, expected 1"
        )));
    }
    Ok(())
}

/// `s(v, z) = max(vᵀz, 0)^γ`.
pub fn similarity(v: &[f64], z: &[f64], gamma: f64) -> Result<f64> {
    Error::check_dim(v.len(), z.len())?;
    check_gamma(gamma)?;
    Ok(clipped_power(dot(v, z), gamma))
}

#[inline]
pub(crate) fn clipped_power(dot: f64, gamma: f64) -> f64 {
    if dot <= 0.0 {
        0.0
    } else {
        dot.powf(gamma)
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "gamma must be positive, got {gamma}"
        )))
    }
}

/// A neighbor returned by a [`NeighborSearch`]: dataset index and the raw
/// (positive) dot product with the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dot: f64,
}

/// Neighbor search over a descriptor set by dot product.
///
/// Implementations return at most `k` neighbors with strictly positive dot
/// product, ordered by decreasing dot product with ties broken by the lower
/// index, skipping `exclude`.
pub trait NeighborSearch: Sync {
    fn search(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbor>;
}

/// Exhaustive `O(n d)` search per query.
#[derive(Debug, Clone, Copy)]
pub struct BruteForce<'a> {
    data: &'a DescriptorSet,
}

impl<'a> BruteForce<'a> {
    pub fn new(data: &'a DescriptorSet) -> Self {
        Self { data }
    }
}

#[inline]
fn neighbor_order(a: &Neighbor, b: &Neighbor) -> std::cmp::Ordering {
    b.dot.total_cmp(&a.dot).then(a.index.cmp(&b.index))
}

impl NeighborSearch for BruteForce<'_> {
    fn search(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let mut cands: Vec<Neighbor> = self
            .data
            .vectors()
            .enumerate()
            .filter(|&(i, _)| Some(i) != exclude)
            .filter_map(|(i, v)| {
                let d = dot(v, query);
                (d > 0.0).then_some(Neighbor { index: i, dot: d })
            })
            .collect();
        if k == 0 {
            return vec![];
        }
        if cands.len() > k {
            cands.select_nth_unstable_by(k - 1, neighbor_order);
            cands.truncate(k);
        }
        cands.sort_by(neighbor_order);
        cands
    }
}

thread_local! {
    static GRAPH_BUILDS: Cell<u64> = const { Cell::new(0) };
}

/// Number of graph constructions performed on the current thread. Lets
/// callers assert that an online path never rebuilds the graph.
pub fn graph_builds_on_this_thread() -> u64 {
    GRAPH_BUILDS.with(Cell::get)
}

/// Mutual k-NN adjacency with exhaustive neighbor search.
pub fn build_mutual_knn_graph(
    data: &DescriptorSet,
    k: usize,
    gamma: f64,
) -> Result<SparseSymmetricMatrix> {
    build_mutual_knn_graph_with(data, k, gamma, &BruteForce::new(data))
}

/// Mutual k-NN adjacency: `w_ij = s(v_i, v_j)` when each of `i`, `j` is among
/// the `k` nearest (by dot product, self excluded) of the other, else 0.
pub fn build_mutual_knn_graph_with(
    data: &DescriptorSet,
    k: usize,
    gamma: f64,
    search: &dyn NeighborSearch,
) -> Result<SparseSymmetricMatrix> {
    GRAPH_BUILDS.with(|c| c.set(c.get() + 1));
    let n = data.len();
    if n == 0 {
        return Err(Error::invalid("descriptor set is empty"));
    }
    if k == 0 || k >= n {
        return Err(Error::invalid(format!(
            "k must satisfy 0 < k < n (k={k}, n={n})"
        )));
    }
    check_gamma(gamma)?;

    let lists: Vec<Vec<Neighbor>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut l = search.search(data.vector(i), k, Some(i));
            l.sort_by_key(|nb| nb.index);
            l
        })
        .collect();

    let mut triplets = Vec::new();
    for (i, list) in lists.iter().enumerate() {
        for nb in list.iter().filter(|nb| nb.index > i) {
            let j = nb.index;
            if lists[j].binary_search_by_key(&i, |m| m.index).is_ok() {
                let w = clipped_power(nb.dot, gamma);
                if w > 0.0 {
                    triplets.push((i, j, w));
                    triplets.push((j, i, w));
                }
            }
        }
    }
    let csr = CsrMatrix::from_triplets(n, n, triplets)?;
    Ok(SparseSymmetricMatrix::from_csr_unchecked(csr))
}

/// `d_i = Σ_j w_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeVector(pub Vec<f64>);

impl DegreeVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn degrees(w: &SparseSymmetricMatrix) -> DegreeVector {
    DegreeVector((0..w.n()).map(|i| w.row(i).map(|(_, v)| v).sum()).collect())
}

/// `𝒲 = D^{-1/2} W D^{-1/2}` with `0/0 = 0` for isolated vertices.
pub fn normalize_adjacency(
    w: &SparseSymmetricMatrix,
    d: &DegreeVector,
) -> Result<SparseSymmetricMatrix> {
    Error::check_dim(w.n(), d.0.len())?;
    let inv_sqrt: Vec<f64> =
        d.0.iter()
            .map(|&di| if di > 0.0 { 1.0 / di.sqrt() } else { 0.0 })
            .collect();
    let csr = w.csr().map_values(|i, j, v| v * inv_sqrt[i] * inv_sqrt[j]);
    Ok(SparseSymmetricMatrix::from_csr_unchecked(csr))
}

/// `ℒ = I − 𝒲`.
pub fn normalized_laplacian(w_norm: &SparseSymmetricMatrix) -> SparseSymmetricMatrix {
    shifted(w_norm, 1.0, -1.0)
}

/// `ℒ_α = β⁻¹ (I − α 𝒲)`, `β = 1 − α`.
pub fn regularized_laplacian(
    w_norm: &SparseSymmetricMatrix,
    alpha: f64,
) -> Result<SparseSymmetricMatrix> {
    check_alpha(alpha)?;
    let beta = 1.0 - alpha;
    Ok(shifted(w_norm, 1.0 / beta, -alpha / beta))
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )))
    }
}

/// `a I + b M`.
fn shifted(m: &SparseSymmetricMatrix, a: f64, b: f64) -> SparseSymmetricMatrix {
    let n = m.n();
    let mut triplets = Vec::with_capacity(m.nnz() + n);
    for i in 0..n {
        triplets.push((i, i, a));
        for (j, v) in m.row(i) {
            triplets.push((i, j, b * v));
        }
    }
    let csr = CsrMatrix::from_triplets(n, n, triplets).expect("in range");
    SparseSymmetricMatrix::from_csr_unchecked(csr)
}

/// Connected components of a graph, with a vertex order that makes the
/// adjacency block diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    /// Component of each vertex; components are numbered by decreasing size,
    /// ties broken by smallest member vertex.
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
    /// `order[p]` is the original vertex at block position `p`. Vertices of
    /// component 0 come first, each component in ascending vertex order.
    pub order: Vec<usize>,
}

impl ComponentLabeling {
    /// Every vertex in one component.
    pub fn trivial(n: usize) -> Self {
        Self {
            labels: vec![0; n],
            sizes: if n == 0 { vec![] } else { vec![n] },
            order: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Start offset of each component in `order`.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.sizes.len() + 1);
        off.push(0);
        for s in &self.sizes {
            off.push(off.last().unwrap() + s);
        }
        off
    }

    /// Original vertices of component `c`, ascending.
    pub fn members(&self, c: usize) -> &[usize] {
        let off = self.offsets();
        &self.order[off[c]..off[c + 1]]
    }

    /// Inverse of `order`: block position of each original vertex.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (p, &v) in self.order.iter().enumerate() {
            pos[v] = p;
        }
        pos
    }

    /// Rebuilds the derived fields from per-vertex labels in `0..count`
    /// already numbered in canonical order.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let count = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
        let mut sizes = vec![0usize; count];
        for &l in &labels {
            sizes[l] += 1;
        }
        if sizes.contains(&0) {
            return Err(Error::invalid("component labels are not contiguous"));
        }
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by_key(|&v| (labels[v], v));
        Ok(Self {
            labels,
            sizes,
            order,
        })
    }
}

/// Disjoint-set forest with union by size and path halving.
#[derive(Debug, Clone)]
struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Connected components by union-find over the nonzero entries of `w`.
pub fn connected_components(w: &SparseSymmetricMatrix) -> ComponentLabeling {
    let n = w.n();
    let mut sets = DisjointSets::new(n);
    for i in 0..n {
        for (j, v) in w.row(i) {
            if j > i && v != 0.0 {
                sets.union(i, j);
            }
        }
    }
    // Group by root, remembering each group's smallest vertex.
    let mut root_group = vec![usize::MAX; n];
    let mut groups: Vec<(usize, usize)> = Vec::new(); // (size, min vertex)
    let raw: Vec<usize> = (0..n)
        .map(|v| {
            let r = sets.find(v);
            if root_group[r] == usize::MAX {
                root_group[r] = groups.len();
                groups.push((0, v));
            }
            let g = root_group[r];
            groups[g].0 += 1;
            g
        })
        .collect();
    let mut ranking: Vec<usize> = (0..groups.len()).collect();
    ranking.sort_by(|&a, &b| {
        groups[b]
            .0
            .cmp(&groups[a].0)
            .then(groups[a].1.cmp(&groups[b].1))
    });
    let mut relabel = vec![0usize; groups.len()];
    for (new, &old) in ranking.iter().enumerate() {
        relabel[old] = new;
    }
    let labels = raw.into_iter().map(|g| relabel[g]).collect();
    ComponentLabeling::from_labels(labels).expect("labels are contiguous")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = norm2(v);
        v.iter().map(|x| x / n).collect()
    }

    fn random_set(n: usize, d: usize, seed: u64) -> DescriptorSet {
        let mut rng = crate::rng::SeqRng::new(seed);
        let vecs = (0..n)
            .map(|_| (0..d).map(|_| rng.gaussian()).collect())
            .collect();
        DescriptorSet::normalized(vecs).unwrap()
    }

    #[test]
    fn similarity_examples() {
        let e = [1.0, 0.0, 0.0];
        assert_eq!(similarity(&e, &e, 3.0).unwrap(), 1.0);
        let z = unit(&[-0.5, 0.75f64.sqrt(), 0.0]);
        assert_eq!(similarity(&e, &z, 3.0).unwrap(), 0.0);
        let z = [0.5, 0.75f64.sqrt(), 0.0];
        assert_abs_diff_eq!(similarity(&e, &z, 3.0).unwrap(), 0.125, epsilon = 1e-15);
        assert!(similarity(&e, &[1.0, 0.0], 3.0).is_err());
        assert!(similarity(&e, &e, 0.0).is_err());
    }

    #[test]
    fn descriptor_set_validation() {
        assert!(DescriptorSet::new(vec![]).is_err());
        assert!(DescriptorSet::new(vec![vec![]]).is_err());
        assert!(DescriptorSet::new(vec![vec![2.0, 0.0]]).is_err());
        assert!(DescriptorSet::normalized(vec![vec![0.0, 0.0]]).is_err());
        let s = DescriptorSet::normalized(vec![vec![3.0, 4.0]]).unwrap();
        assert_abs_diff_eq!(s.vector(0)[0], 0.6, epsilon = 1e-15);
        assert!(s.clone().with_ids(vec![1, 2]).is_err());
        let two = DescriptorSet::normalized(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(two.with_ids(vec![5, 5]).is_err());
    }

    #[test]
    fn two_identical_vectors_k1() {
        let s = DescriptorSet::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let w = build_mutual_knn_graph(&s, 1, 3.0).unwrap();
        assert_eq!(w.to_dense().as_slice(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn mutuality_drops_one_sided_neighbors() {
        // v1 ~ v2 tightly; v3 sits closest to v1 but v1's nearest is v2.
        let v1 = unit(&[1.0, 0.0]);
        let v2 = unit(&[1.0, 0.05]);
        let v3 = unit(&[1.0, -0.3]);
        let s = DescriptorSet::new(vec![v1.clone(), v2.clone(), v3.clone()]).unwrap();
        // Brute-force top-1 lists.
        let top1 = |i: usize| {
            let vs = [&v1, &v2, &v3];
            (0..3)
                .filter(|&j| j != i)
                .max_by(|&a, &b| dot(vs[i], vs[a]).total_cmp(&dot(vs[i], vs[b])))
                .unwrap()
        };
        assert_eq!(top1(0), 1);
        assert_eq!(top1(2), 0);
        let w = build_mutual_knn_graph(&s, 1, 3.0).unwrap();
        assert_eq!(w.get(0, 2), 0.0);
        assert_eq!(w.get(2, 0), 0.0);
        assert!(w.get(0, 1) > 0.0);
    }

    #[test]
    fn random_graph_matches_brute_force_oracle() {
        let (n, k, gamma) = (64, 5, 3.0);
        let s = random_set(n, 6, 11);
        let w = build_mutual_knn_graph(&s, k, gamma).unwrap();
        // Oracle: full similarity matrix, explicit ranking lists.
        let sims: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| dot(s.vector(i), s.vector(j))).collect())
            .collect();
        let knn: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut idx: Vec<usize> = (0..n).filter(|&j| j != i && sims[i][j] > 0.0).collect();
                idx.sort_by(|&a, &b| sims[i][b].total_cmp(&sims[i][a]).then(a.cmp(&b)));
                idx.truncate(k);
                idx
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                let mutual = knn[i].contains(&j) && knn[j].contains(&i);
                let expected = if mutual { sims[i][j].powf(gamma) } else { 0.0 };
                assert_eq!(w.get(i, j), expected, "({i},{j})");
                assert_eq!(w.get(i, j), w.get(j, i));
            }
        }
        assert!(w.max_row_nnz() <= k);
        assert!(w.is_adjacency());
    }

    #[test]
    fn knn_errors() {
        let s = random_set(4, 3, 1);
        assert!(build_mutual_knn_graph(&s, 4, 3.0).is_err());
        assert!(build_mutual_knn_graph(&s, 0, 3.0).is_err());
        assert!(build_mutual_knn_graph(&s, 2, -1.0).is_err());
    }

    #[test]
    fn ties_keep_lower_index() {
        let data = DescriptorSet::new(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ])
        .unwrap();
        let nn = BruteForce::new(&data).search(&[0.0, 1.0], 2, None);
        assert_eq!(nn.iter().map(|n| n.index).collect::<Vec<_>>(), vec![1, 2]);
        // Orthogonal vector has zero similarity and is never a neighbor.
        let nn = BruteForce::new(&data).search(&[1.0, 0.0], 3, Some(0));
        assert!(nn.is_empty());
    }

    #[test]
    fn degrees_and_normalization_examples() {
        let w = SparseSymmetricMatrix::from_undirected(3, &[(0, 1, 2.5)]).unwrap();
        let d = degrees(&w);
        assert_eq!(d.0, vec![2.5, 2.5, 0.0]);
        let wn = normalize_adjacency(&w, &d).unwrap();
        assert_abs_diff_eq!(wn.get(0, 1), 1.0, epsilon = 1e-15);
        assert_eq!(wn.get(2, 2), 0.0);
        assert!((0..3).all(|i| wn.row(i).all(|(_, v)| v.is_finite())));
        assert_eq!(wn.row(2).count(), 0);
    }

    #[test]
    fn laplacian_examples() {
        let w = SparseSymmetricMatrix::from_undirected(2, &[(0, 1, 1.0)]).unwrap();
        let wn = normalize_adjacency(&w, &degrees(&w)).unwrap();
        let l = normalized_laplacian(&wn);
        assert_eq!(l.to_dense().as_slice(), &[1.0, -1.0, -1.0, 1.0]);
        let r0 = regularized_laplacian(&wn, 0.0).unwrap();
        assert_eq!(r0.to_dense().as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        let r = regularized_laplacian(&wn, 0.5).unwrap();
        assert_eq!(r.to_dense().as_slice(), &[2.0, -1.0, -1.0, 2.0]);
        assert!(regularized_laplacian(&wn, 1.0).is_err());
        assert!(regularized_laplacian(&wn, -0.1).is_err());
    }

    #[test]
    fn component_examples() {
        let tri =
            SparseSymmetricMatrix::from_undirected(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])
                .unwrap();
        let c = connected_components(&tri);
        assert_eq!(c.sizes, vec![3]);

        let w = SparseSymmetricMatrix::from_undirected(5, &[(0, 3, 1.0), (1, 4, 1.0)]).unwrap();
        let c = connected_components(&w);
        assert_eq!(c.sizes, vec![2, 2, 1]);
        assert_eq!(c.labels, vec![0, 1, 2, 0, 1]);
        assert_eq!(c.order, vec![0, 3, 1, 4, 2]);
        assert_eq!(c.members(1), &[1, 4]);
        let pos = c.positions();
        for (p, &v) in c.order.iter().enumerate() {
            assert_eq!(pos[v], p);
        }
    }
}
