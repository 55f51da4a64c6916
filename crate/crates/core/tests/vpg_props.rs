mod common;

use std::collections::BTreeSet;

use fedgpl::vpg::{keep_counts, prompt_forward, AttachRule, PromptParams};
use rand::Rng;

const GRAPHS: u64 = 500;

fn random_prompt(seed: u64, dim: usize) -> PromptParams {
    let mut rng = common::rng(seed ^ 0x5eed);
    let k = rng.random_range(0..=6);
    let mut p = PromptParams::seeded(dim, k, seed);
    p.alpha_n = rng.random_range(0.05..=1.0);
    p.alpha_e = rng.random_range(0.05..=1.0);
    p.gamma = rng.random_range(0.0..=1.0);
    p.attach_rule = if rng.random_bool(0.5) {
        AttachRule::Below
    } else {
        AttachRule::AtLeast
    };
    p
}

#[test]
fn prompted_size_and_disjointness() {
    for seed in 0..GRAPHS {
        let mut rng = common::rng(seed);
        let n = rng.random_range(1..=40);
        let p_edge = rng.random_range(0.0..0.4);
        let g = common::random_graph(&mut rng, n, p_edge, 4);
        let prompt = random_prompt(seed, 4);
        let (prompted, cache) = prompt_forward(&g, &prompt).unwrap();
        let (k_n, _) = keep_counts(n, g.edge_count(), &prompt);
        assert_eq!(prompted.node_count(), k_n, "seed {seed}");

        let v = &cache.vpg;
        v.check(&g).unwrap();
        let added: BTreeSet<usize> = v.added_nodes.iter().copied().collect();
        let anti: BTreeSet<usize> = v.anti_nodes.iter().copied().collect();
        assert!(added.is_disjoint(&anti));
        assert!(added.iter().all(|&x| x >= n && x < n + prompt.k_prime()));
        assert!(anti.iter().all(|&x| x < n));
        assert_eq!(n + added.len() - anti.len(), prompted.node_count());

        let norm = |&(a, b): &(usize, usize)| (a.min(b), a.max(b));
        let anti_e: BTreeSet<_> = v.anti_edges.iter().map(norm).collect();
        let added_e: BTreeSet<_> = v.added_edges.iter().map(norm).collect();
        assert!(anti_e.is_disjoint(&added_e));
        let source_e: BTreeSet<_> = g.edges().iter().map(norm).collect();
        assert!(anti_e.is_subset(&source_e));
        assert!(added_e.is_disjoint(&source_e));
        // every edge touching a removed node is itself removed
        for e in &source_e {
            if anti.contains(&e.0) || anti.contains(&e.1) {
                assert!(anti_e.contains(e), "seed {seed}: dangling edge {e:?}");
            }
        }
        for &(a, b) in &added_e {
            for x in [a, b] {
                assert!(if x < n {
                    !anti.contains(&x)
                } else {
                    added.contains(&x)
                });
            }
        }
        assert_eq!(
            source_e.len() - anti_e.len() + added_e.len(),
            prompted.edge_count(),
            "seed {seed}"
        );
    }
}

#[test]
fn full_keep_without_candidates_preserves_structure() {
    for seed in 0..GRAPHS {
        let mut rng = common::rng(seed);
        let n = rng.random_range(1..=40);
        let p_edge = rng.random_range(0.0..0.4);
        let g = common::random_graph(&mut rng, n, p_edge, 4);
        let mut prompt = random_prompt(seed, 4);
        prompt.candidates = ndarray::Array2::zeros((0, 4));
        prompt.alpha_n = 1.0;
        prompt.alpha_e = 1.0;
        let (prompted, cache) = prompt_forward(&g, &prompt).unwrap();
        assert!(cache.vpg.is_empty(), "seed {seed}");
        assert_eq!(prompted.node_ids(), g.node_ids());
        assert_eq!(prompted.edges(), g.edges());
    }
}
