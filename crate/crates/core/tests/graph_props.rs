mod common;

use std::collections::BTreeSet;

use fedgpl::encoder::{gnn_forward, EncoderParams};
use fedgpl::graph::{build_graph, k_ego_induce, normalized_adjacency, Graph};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use proptest::prelude::*;

/// All-pairs hop distances by Floyd–Warshall.
fn hop_distances(g: &Graph) -> Vec<Vec<usize>> {
    let n = g.node_count();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(a, b) in g.edges() {
        d[a][b] = 1;
        d[b][a] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

fn shuffled_ids_graph(seed: u64, n: usize, p: f64) -> Graph {
    let mut rng = common::rng(seed);
    let base = common::random_graph(&mut rng, n, p, 3);
    // reverse the id order so index order and id order disagree
    let ids: Vec<u64> = (0..n as u64).map(|i| 1000 - 3 * i).collect();
    build_graph(ids, base.edges(), base.features().clone()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ego_matches_distance_oracle(
        seed in any::<u64>(),
        n in 1usize..=50,
        p in 0.0f64..0.3,
        kappa in 0usize..=4,
        picks in proptest::collection::vec(any::<prop::sample::Index>(), 1..4),
    ) {
        let g = shuffled_ids_graph(seed, n, p);
        let centers: Vec<usize> = picks.iter().map(|i| i.index(n)).collect();
        let ego = k_ego_induce(&g, &centers, kappa).unwrap();
        let d = hop_distances(&g);
        let mut expect: Vec<usize> = (0..n).filter(|&v| centers.iter().any(|&c| d[c][v] <= kappa)).collect();
        expect.sort_by_key(|&v| g.node_ids()[v]);
        let ids: Vec<u64> = expect.iter().map(|&v| g.node_ids()[v]).collect();
        prop_assert_eq!(ego.node_ids(), &ids[..]);
        let expect_edges: BTreeSet<(u64, u64)> = g
            .edges()
            .iter()
            .filter(|&&(a, b)| expect.contains(&a) && expect.contains(&b))
            .map(|&(a, b)| { let (x, y) = (g.node_ids()[a], g.node_ids()[b]); (x.min(y), x.max(y)) })
            .collect();
        let got_edges: BTreeSet<(u64, u64)> = ego
            .edges()
            .iter()
            .map(|&(a, b)| { let (x, y) = (ego.node_ids()[a], ego.node_ids()[b]); (x.min(y), x.max(y)) })
            .collect();
        prop_assert_eq!(got_edges, expect_edges);
        for (r, &v) in expect.iter().enumerate() {
            prop_assert_eq!(ego.features().row(r), g.features().row(v));
        }
    }

    #[test]
    fn normalized_adjacency_spectrum(seed in any::<u64>(), n in 1usize..=30, p in 0.0f64..0.6) {
        let g = shuffled_ids_graph(seed, n, p);
        let a = normalized_adjacency(&g);
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(a[[i, j]], a[[j, i]]);
            }
        }
        let m = DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
        let eig = SymmetricEigen::new(m);
        let rho = eig.eigenvalues.iter().fold(0.0f64, |r, &l| r.max(l.abs()));
        prop_assert!(rho <= 1.0 + 1e-9, "spectral radius {}", rho);
        // with self loops the top eigenvalue is exactly 1 (eigenvector D^{1/2}·1)
        let top = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((top - 1.0).abs() < 1e-9, "top eigenvalue {}", top);
    }

    #[test]
    fn propagate_equals_dense_product(seed in any::<u64>(), n in 1usize..=30, p in 0.0f64..0.6) {
        let g = shuffled_ids_graph(seed, n, p);
        let mut rng = common::rng(seed ^ 0xabc);
        let m = common::gaussian_matrix(&mut rng, n, 4, 1.0);
        let sparse = g.propagate(&m);
        let dense = normalized_adjacency(&g).dot(&m);
        for (x, y) in sparse.iter().zip(dense.iter()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn encoder_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..=20) {
        let g = shuffled_ids_graph(seed, n, 0.3);
        let perm: Vec<usize> = (0..n).rev().collect();
        let inv: Vec<usize> = {
            let mut inv = vec![0; n];
            for (new, &old) in perm.iter().enumerate() { inv[old] = new; }
            inv
        };
        let edges: Vec<(usize, usize)> = g.edges().iter().map(|&(a, b)| (inv[a], inv[b])).collect();
        let feats = Array2::from_shape_fn((n, 3), |(r, c)| g.features()[[perm[r], c]]);
        let ids = perm.iter().map(|&o| g.node_ids()[o]).collect();
        let h = build_graph(ids, &edges, feats).unwrap();
        let enc = EncoderParams::glorot(3, 5, 2, seed);
        let (a, _) = gnn_forward(&enc, &g).unwrap();
        let (b, _) = gnn_forward(&enc, &h).unwrap();
        for r in 0..n {
            for c in 0..5 {
                prop_assert!((b[[r, c]] - a[[perm[r], c]]).abs() < 1e-12);
            }
        }
    }
}
