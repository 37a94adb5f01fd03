//! Fast spectral ranking.
//!
//! Manifold-aware ranking of query vectors over a descriptor set. A mutual
//! k-NN graph is built offline and its symmetrically normalized adjacency
//! `𝒲` is approximated by a low-rank eigendecomposition `U Λ Uᵀ`. Online,
//! a query becomes a sparse observation vector `y` and is ranked by the
//! spectral filter `x = U h(Λ) Uᵀ y`, which for `h = h_α` approximates the
//! solution of the regularized Laplacian system `ℒ_α x = y` without ever
//! solving it.
//!
//! Modules:
//!
//! * [`graph`]: descriptors, k-NN graph construction, normalization,
//!   Laplacians, connected components.
//! * [`spectral`]: randomized range finder, approximate and exact
//!   eigendecompositions, sparsification, the block-diagonal variant.
//! * [`ranking`]: observation vectors, transfer functions, filtering,
//!   pooling, embeddings.
//! * [`baseline`]: iterative reference solvers (CG, random walk with
//!   restart, truncated series) and energy diagnostics.
//! * [`io`]: binary descriptor, graph and decomposition files.

pub mod baseline;
mod error;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod ranking;
pub mod rng;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};
pub use graph::{
    build_mutual_knn_graph, connected_components, degrees, normalize_adjacency,
    normalized_laplacian, regularized_laplacian, similarity, ComponentLabeling, DegreeVector,
    DescriptorSet,
};
pub use linalg::DenseMatrix;
pub use ranking::{
    filter, fsrw_correct, observation_vector, pool, rank, ObservationVector, PoolingMatrix,
    RankingResult, TransferFunction,
};
pub use sparse::{CsrMatrix, SparseSymmetricMatrix};
pub use spectral::{
    approx_eigendecomposition, decompose_blockwise, decompose_giant, exact_eigendecomposition,
    range_finder, sparsify, RangeBasis, SpectralDecomposition, Variant,
};
