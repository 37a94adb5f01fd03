//! Synthetic manifold data: interleaved arcs on the unit sphere.
//!
//! Every manifold is the same arc in the plane of the first two coordinates,
//! lifted off the plane along its own offset direction. Points on one arc
//! are much closer to their arc neighbors than to the parallel arcs, while
//! the far end of an arc is farther away than the parallel arcs. Euclidean
//! ranking therefore mixes manifolds and diffusion along the graph does not.

use anyhow::{ensure, Result};
use fsr_core::rng::{derive_seed, SeqRng};
use fsr_core::DescriptorSet;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticManifoldSpec {
    pub manifolds: usize,
    pub points_per_manifold: usize,
    pub dim: usize,
    /// Standard deviation of the isotropic noise vector's norm.
    pub sigma: f64,
    pub seed: u64,
    pub queries_per_manifold: usize,
    /// Angle covered by each arc, in radians.
    pub arc: f64,
    /// Distance of each arc from the shared plane before normalization.
    pub offset: f64,
}

impl Default for SyntheticManifoldSpec {
    fn default() -> Self {
        Self {
            manifolds: 5,
            points_per_manifold: 100,
            dim: 16,
            sigma: 0.05,
            seed: 7,
            queries_per_manifold: 10,
            arc: 1.5 * std::f64::consts::PI,
            offset: 0.35,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub data: DescriptorSet,
    pub labels: Vec<usize>,
    pub queries: Vec<Vec<f64>>,
    pub query_labels: Vec<usize>,
}

impl SyntheticManifoldSpec {
    pub fn total_points(&self) -> usize {
        self.manifolds * self.points_per_manifold
    }

    fn validate(&self) -> Result<()> {
        ensure!(self.manifolds >= 2, "need at least two manifolds");
        ensure!(self.dim >= 3, "dimension must be at least 3");
        ensure!(
            self.points_per_manifold >= 2,
            "need at least two points per manifold"
        );
        ensure!(
            self.sigma >= 0.0 && self.sigma.is_finite(),
            "sigma must be finite and nonnegative"
        );
        ensure!(
            self.arc > 0.0 && self.arc.is_finite(),
            "arc must be positive"
        );
        ensure!(
            self.offset > 0.0 && self.offset.is_finite(),
            "offset must be positive"
        );
        ensure!(
            self.manifolds <= 2 * (self.dim - 2),
            "{} manifolds need dimension at least {}",
            self.manifolds,
            self.manifolds.div_ceil(2) + 2
        );
        Ok(())
    }

    /// Unit offset direction of manifold `m`: `±e_{2 + (m mod (d − 2))}`.
    fn offset_direction(&self, m: usize) -> (usize, f64) {
        let free = self.dim - 2;
        let sign = if (m / free).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        };
        (2 + m % free, sign)
    }

    fn sample(&self, m: usize, t: f64, rng: &mut SeqRng) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[0] = t.cos();
        v[1] = t.sin();
        let (axis, sign) = self.offset_direction(m);
        v[axis] += sign * self.offset;
        let per_coord = self.sigma / (self.dim as f64).sqrt();
        for x in v.iter_mut() {
            *x += per_coord * rng.gaussian();
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

/// Deterministic per seed. Dataset points sit at jittered, evenly spaced
/// positions along each arc, in shuffled order; queries at uniform random
/// positions.
pub fn generate_synthetic(spec: &SyntheticManifoldSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = SeqRng::new(spec.seed);
    let mut vectors = Vec::with_capacity(spec.total_points());
    let mut labels = Vec::with_capacity(spec.total_points());
    let np = spec.points_per_manifold as f64;
    for m in 0..spec.manifolds {
        for j in 0..spec.points_per_manifold {
            let t = spec.arc * (j as f64 + rng.uniform()) / np;
            vectors.push(spec.sample(m, t, &mut rng));
            labels.push(m);
        }
    }
    let mut prng = SeqRng::new(derive_seed(spec.seed, 2));
    for i in (1..vectors.len()).rev() {
        let j = prng.below(i + 1);
        vectors.swap(i, j);
        labels.swap(i, j);
    }
    let mut qrng = SeqRng::new(derive_seed(spec.seed, 1));
    let mut queries = Vec::new();
    let mut query_labels = Vec::new();
    for m in 0..spec.manifolds {
        for _ in 0..spec.queries_per_manifold {
            let t = spec.arc * qrng.uniform();
            queries.push(spec.sample(m, t, &mut qrng));
            query_labels.push(m);
        }
    }
    let images: Vec<u64> = (0..vectors.len() as u64).collect();
    let data = DescriptorSet::new(vectors)?.with_images(images)?;
    Ok(SyntheticDataset {
        data,
        labels,
        queries,
        query_labels,
    })
}
