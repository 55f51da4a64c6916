#![allow(dead_code)]

pub mod gradcheck;
pub mod split;
pub mod theory;

use fedgpl::config::ExperimentConfig;
use fedgpl::graph::{build_graph, Graph};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdős–Rényi graph with Gaussian features and shuffled-looking ids.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64, dim: usize) -> Graph {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                edges.push((a, b));
            }
        }
    }
    let ids: Vec<u64> = (0..n as u64).map(|i| i * 7 + 3).collect();
    let features = Array2::from_shape_fn((n, dim), |_| StandardNormal.sample(rng));
    build_graph(ids, &edges, features).unwrap()
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// Small but complete configuration for federation tests.
pub fn small_config(rounds: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [
        ("synth.nodes", "150"),
        ("synth.feature_dim", "8"),
        ("d", "16"),
        ("max_samples", "24"),
        ("k_prime", "4"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.rounds = rounds;
    cfg
}
