//! Shared fixtures for the benchmarks.

use fsr_cli::pipeline::{decompose, DecomposeParams, Graph, Method};
use fsr_cli::synth::{generate_synthetic, SyntheticDataset, SyntheticManifoldSpec};
use fsr_core::{observation_vector, ObservationVector, SpectralDecomposition};

pub struct Fixture {
    pub dataset: SyntheticDataset,
    pub graph: Graph,
}

impl Fixture {
    /// Five manifolds of `points` points each, graph with k = 10.
    pub fn new(points: usize) -> Self {
        let spec = SyntheticManifoldSpec {
            points_per_manifold: points,
            ..SyntheticManifoldSpec::default()
        };
        let dataset = generate_synthetic(&spec).expect("valid spec");
        let graph = Graph::build(&dataset.data, 10, 3.0).expect("graph");
        Self { dataset, graph }
    }

    pub fn decomposition(&self, method: Method, rank: usize) -> SpectralDecomposition {
        let params = DecomposeParams {
            method,
            rank,
            ..DecomposeParams::default()
        };
        decompose(&self.graph, &params).expect("decomposition")
    }

    pub fn observations(&self, k: usize) -> Vec<ObservationVector> {
        self.dataset
            .queries
            .iter()
            .map(|q| {
                observation_vector(std::slice::from_ref(q), &self.dataset.data, k, 3.0)
                    .expect("observation")
            })
            .collect()
    }
}
