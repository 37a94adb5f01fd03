mod common;

use std::collections::VecDeque;

use approx::assert_abs_diff_eq;
use common::*;
use fsr_core::{
    build_mutual_knn_graph, connected_components, degrees, normalize_adjacency,
    normalized_laplacian, regularized_laplacian, similarity, DescriptorSet, SparseSymmetricMatrix,
};

#[test]
fn similarity_examples() {
    let a = [1.0, 0.0];
    assert_eq!(similarity(&a, &a, 3.0).unwrap(), 1.0);
    let b = [0.5, (0.75f64).sqrt()];
    let c = [-0.5, (0.75f64).sqrt()];
    assert_abs_diff_eq!(similarity(&a, &b, 3.0).unwrap(), 0.125, epsilon = 1e-15);
    assert_eq!(similarity(&a, &c, 3.0).unwrap(), 0.0);
    assert!(similarity(&a, &[1.0, 0.0, 0.0], 3.0).is_err());
    assert!(similarity(&a, &b, 0.0).is_err());
}

#[test]
fn identical_pair_graph() {
    let data = DescriptorSet::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
    let w = build_mutual_knn_graph(&data, 1, 3.0).unwrap();
    assert_eq!(w.get(0, 1), 1.0);
    assert_eq!(w.get(1, 0), 1.0);
    assert_eq!(w.get(0, 0), 0.0);
    assert_eq!(w.get(1, 1), 0.0);
}

#[test]
fn mutuality_is_required() {
    // v1's nearest is v3, but v3's nearest is v2.
    let t = 0.3f64;
    let data = DescriptorSet::new(vec![
        vec![1.0, 0.0],
        vec![(2.0 * t).cos(), (2.0 * t).sin()],
        vec![(1.6 * t).cos(), (1.6 * t).sin()],
    ])
    .unwrap();
    let w = build_mutual_knn_graph(&data, 1, 3.0).unwrap();
    assert_eq!(w.get(0, 2), 0.0);
    assert!(w.get(1, 2) > 0.0);
}

#[test]
fn graph_errors() {
    let data = random_descriptors(4, 3, 1);
    assert!(build_mutual_knn_graph(&data, 4, 3.0).is_err());
    assert!(build_mutual_knn_graph(&data, 0, 3.0).is_err());
    assert!(DescriptorSet::new(vec![]).is_err());
}

/// All-pairs oracle of the mutual k-NN definition.
fn brute_force_graph(vectors: &[Vec<f64>], k: usize, gamma: f64) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let dots: Vec<Vec<f64>> = vectors
        .iter()
        .map(|a| {
            vectors
                .iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum())
                .collect()
        })
        .collect();
    let knn: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut idx: Vec<usize> = (0..n).filter(|&j| j != i && dots[i][j] > 0.0).collect();
            idx.sort_by(|&a, &b| dots[i][b].partial_cmp(&dots[i][a]).unwrap().then(a.cmp(&b)));
            idx.truncate(k);
            idx
        })
        .collect();
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if knn[i].contains(&j) && knn[j].contains(&i) {
                w[i][j] = dots[i][j].max(0.0).powf(gamma);
            }
        }
    }
    w
}

#[test]
fn mutual_knn_matches_brute_force() {
    let vectors = unit_vectors(64, 5, 11);
    let data = DescriptorSet::new(vectors.clone()).unwrap();
    let w = build_mutual_knn_graph(&data, 5, 3.0).unwrap();
    let oracle = brute_force_graph(&vectors, 5, 3.0);
    for (i, row) in oracle.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            assert_abs_diff_eq!(w.get(i, j), o, epsilon = 1e-15);
            assert_eq!(w.get(i, j), w.get(j, i));
        }
    }
    assert!(w.max_row_nnz() <= 5);
    assert!(w.is_adjacency());
}

#[test]
fn degree_examples() {
    let w = SparseSymmetricMatrix::from_undirected(3, &[(0, 1, 1.0)]).unwrap();
    assert_eq!(degrees(&w).0, vec![1.0, 1.0, 0.0]);
    let (w, _) = random_graph(32, 5, 3);
    let dense = w.to_dense();
    let d = degrees(&w);
    for i in 0..32 {
        let sum: f64 = dense.row(i).iter().sum();
        assert_abs_diff_eq!(d.0[i], sum, epsilon = 1e-14);
    }
}

#[test]
fn normalization_examples() {
    let w = SparseSymmetricMatrix::from_undirected(3, &[(0, 1, 4.0)]).unwrap();
    let a = normalize_adjacency(&w, &degrees(&w)).unwrap();
    assert_abs_diff_eq!(a.get(0, 1), 1.0, epsilon = 1e-15);
    for j in 0..3 {
        assert_eq!(a.get(2, j), 0.0);
        assert_eq!(a.get(j, 2), 0.0);
    }
    let path = SparseSymmetricMatrix::from_undirected(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
    let a = normalize_adjacency(&path, &degrees(&path)).unwrap();
    let ev = oracle_eigenvalues(&sparse_to_na(&a));
    assert_abs_diff_eq!(ev[0], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(ev[1], 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(ev[2], -1.0, epsilon = 1e-12);
}

#[test]
fn laplacian_examples() {
    let w = SparseSymmetricMatrix::from_undirected(2, &[(0, 1, 1.0)]).unwrap();
    let a = normalize_adjacency(&w, &degrees(&w)).unwrap();
    let l = normalized_laplacian(&a);
    assert_eq!(l.to_dense().as_slice(), &[1.0, -1.0, -1.0, 1.0]);
    let la = regularized_laplacian(&a, 0.5).unwrap();
    assert_eq!(la.to_dense().as_slice(), &[2.0, -1.0, -1.0, 2.0]);
    let id = regularized_laplacian(&a, 0.0).unwrap();
    assert_eq!(id.to_dense().as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    assert!(regularized_laplacian(&a, 1.0).is_err());
    assert!(regularized_laplacian(&a, -0.1).is_err());
}

#[test]
fn laplacian_null_space_per_component() {
    let (w, a) = random_graph(80, 4, 5);
    let d = degrees(&w);
    let l = normalized_laplacian(&a);
    let comps = connected_components(&w);
    for c in 0..comps.count() {
        let mut v = vec![0.0; 80];
        for &i in comps.members(c) {
            v[i] = d.0[i].sqrt();
        }
        let lv = l.matvec(&v).unwrap();
        assert!(lv.iter().all(|x| x.abs() < 1e-9));
    }
}

#[test]
fn random_graph_spectra() {
    let (_, a) = random_graph(32, 6, 9);
    let l = normalized_laplacian(&a);
    for ev in oracle_eigenvalues(&sparse_to_na(&l)) {
        assert!((-1e-9..=2.0 + 1e-9).contains(&ev));
    }
    let la = regularized_laplacian(&a, 0.99).unwrap();
    let min = *oracle_eigenvalues(&sparse_to_na(&la)).last().unwrap();
    assert!(min > 0.0);
}

fn bfs_labels(w: &SparseSymmetricMatrix) -> Vec<usize> {
    let n = w.n();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        let mut queue = VecDeque::from([s]);
        label[s] = next;
        while let Some(u) = queue.pop_front() {
            for (v, _) in w.row(u) {
                if label[v] == usize::MAX {
                    label[v] = next;
                    queue.push_back(v);
                }
            }
        }
        next += 1;
    }
    label
}

#[test]
fn components_match_bfs() {
    let (w, _) = random_graph(64, 3, 21);
    let comps = connected_components(&w);
    let bfs = bfs_labels(&w);
    assert!(comps.count() > 1, "want a disconnected example");
    for i in 0..64 {
        for j in 0..64 {
            assert_eq!(comps.labels[i] == comps.labels[j], bfs[i] == bfs[j]);
        }
    }
    assert!(comps.sizes.windows(2).all(|s| s[0] >= s[1]));
    // Block-diagonal after permutation.
    let p = w.permuted(&comps.order);
    let off = comps.offsets();
    let block = |pos: usize| off.iter().rposition(|&o| o <= pos).unwrap();
    for i in 0..64 {
        for (j, _) in p.row(i) {
            assert_eq!(block(i), block(j));
        }
    }
}

#[test]
fn component_examples() {
    let tri = SparseSymmetricMatrix::from_undirected(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])
        .unwrap();
    assert_eq!(connected_components(&tri).sizes, vec![3]);
    let w = SparseSymmetricMatrix::from_undirected(5, &[(0, 3, 1.0), (1, 2, 1.0)]).unwrap();
    let c = connected_components(&w);
    assert_eq!(c.sizes, vec![2, 2, 1]);
    assert_eq!(c.labels, vec![0, 1, 1, 0, 2]);
    assert_eq!(c.order, vec![0, 3, 1, 2, 4]);
}
