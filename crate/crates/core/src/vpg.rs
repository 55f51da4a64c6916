//! Virtual prompt graphs.
//!
//! Prompting a source graph `G` runs four steps:
//!
//! 1. [`attach_candidates`] appends `k'` candidate nodes, wiring candidate
//!    `i` to source node `j` when `sigmoid(x_i · x_j) < γ`, giving `G'`;
//! 2. [`score_significance`] scores every node of `G'` by its projection on
//!    the learnable direction `p'`, scores edges by endpoint score gaps, and
//!    rescales features by `tanh(score)`;
//! 3. [`build_vpg`] cuts nodes and edges at the `k_n`-th / `k_e`-th highest
//!    score into added, anti, added-edge and anti-edge sets;
//! 4. [`apply_prompt`] turns the source graph plus the VPG into the prompted
//!    graph sent to the server.
//!
//! [`prompt_forward`] chains all four and records what [`prompt_backward`]
//! needs. The selection is held fixed in the backward pass, so gradients
//! only flow through the `tanh` feature scaling.

use std::collections::BTreeSet;

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::encoder::Fingerprint;
use crate::graph::{build_graph, Graph, GraphError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VpgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("score vector has zero norm")]
    ZeroScoreVector,
    #[error("keep set is empty (k_n = 0)")]
    EmptyKeepSet,
    #[error("vpg is inconsistent with the source graph: {0}")]
    InconsistentVpg(String),
    #[error("prompt cache does not match the current prompt parameters")]
    StaleCache,
    #[error("invalid prompt parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Direction of the candidate attachment test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttachRule {
    /// Connect when `sigmoid(x_i · x_j) < γ`.
    Below,
    /// Connect when `sigmoid(x_i · x_j) ≥ γ`.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptParams {
    /// Learnable scoring direction `p'`.
    pub score: Array1<f64>,
    /// Candidate node features, one row per candidate.
    pub candidates: Array2<f64>,
    pub learnable_candidates: bool,
    pub gamma: f64,
    pub alpha_n: f64,
    pub alpha_e: f64,
    pub attach_rule: AttachRule,
}

impl PromptParams {
    /// Seeded defaults: unit-norm Gaussian candidates and a unit-norm random `p'`.
    pub fn seeded(feature_dim: usize, k_prime: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit_row = |rng: &mut ChaCha8Rng| {
            let mut v: Array1<f64> =
                Array1::from_shape_fn(feature_dim, |_| StandardNormal.sample(rng));
            let n = v.dot(&v).sqrt();
            if n > 0.0 {
                v /= n;
            }
            v
        };
        let score = unit_row(&mut rng);
        let mut candidates = Array2::zeros((k_prime, feature_dim));
        for mut row in candidates.rows_mut() {
            row.assign(&unit_row(&mut rng));
        }
        PromptParams {
            score,
            candidates,
            learnable_candidates: false,
            gamma: 0.5,
            alpha_n: 0.5,
            alpha_e: 0.5,
            attach_rule: AttachRule::Below,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.score.len()
    }

    pub fn k_prime(&self) -> usize {
        self.candidates.nrows()
    }

    /// Length of the trainable block: `p'`, plus candidate rows when learnable.
    pub fn block_len(&self) -> usize {
        self.score.len()
            + if self.learnable_candidates {
                self.candidates.len()
            } else {
                0
            }
    }

    pub fn to_block(&self) -> Vec<f64> {
        let mut v = self.score.to_vec();
        if self.learnable_candidates {
            v.extend(self.candidates.iter().copied());
        }
        v
    }

    pub fn load_block(&mut self, block: &[f64]) -> Result<(), VpgError> {
        if block.len() != self.block_len() {
            return Err(VpgError::DimMismatch {
                expected: self.block_len(),
                found: block.len(),
            });
        }
        let d = self.score.len();
        self.score.assign(&Array1::from(block[..d].to_vec()));
        if self.learnable_candidates {
            for (x, &b) in self.candidates.iter_mut().zip(&block[d..]) {
                *x = b;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), VpgError> {
        if !(self.alpha_n > 0.0 && self.alpha_n <= 1.0)
            || !(self.alpha_e > 0.0 && self.alpha_e <= 1.0)
        {
            return Err(VpgError::InvalidParam(format!(
                "keep ratios must be in (0,1], got alpha_n={} alpha_e={}",
                self.alpha_n, self.alpha_e
            )));
        }
        Ok(())
    }

    pub(crate) fn fingerprint(&self) -> u64 {
        let mut h = Fingerprint::default();
        h.mix_floats(self.score.iter());
        h.mix_floats(self.candidates.iter());
        h.finish()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `G' = G` plus all candidates, each wired to the source nodes passing the
/// attachment test. Candidates get ids above the largest source id.
pub fn attach_candidates(graph: &Graph, prompt: &PromptParams) -> Result<Graph, VpgError> {
    let d0 = graph.feature_dim();
    if prompt.candidates.ncols() != d0 && prompt.k_prime() > 0 {
        return Err(VpgError::DimMismatch {
            expected: d0,
            found: prompt.candidates.ncols(),
        });
    }
    let n = graph.node_count();
    let k = prompt.k_prime();
    if k == 0 {
        return Ok(graph.clone());
    }
    let next_id = graph.node_ids().iter().max().map_or(0, |m| m + 1);
    let mut ids = graph.node_ids().to_vec();
    ids.extend((0..k as u64).map(|i| next_id + i));
    let mut edges = graph.edges().to_vec();
    let sims = prompt.candidates.dot(&graph.features().t());
    for c in 0..k {
        for j in 0..n {
            let s = sigmoid(sims[[c, j]]);
            let connect = match prompt.attach_rule {
                AttachRule::Below => s < prompt.gamma,
                AttachRule::AtLeast => s >= prompt.gamma,
            };
            if connect {
                edges.push((j, n + c));
            }
        }
    }
    let features = concatenate![Axis(0), graph.features().view(), prompt.candidates.view()];
    Ok(build_graph(ids, &edges, features)?)
}

/// Node scores, edge scores (aligned with `g_prime.edges()`) and tanh-scaled features.
#[derive(Debug, Clone, PartialEq)]
pub struct Significance {
    pub node: Array1<f64>,
    pub edge: Vec<f64>,
    pub scaled: Array2<f64>,
}

pub fn score_significance(
    g_prime: &Graph,
    prompt: &PromptParams,
) -> Result<Significance, VpgError> {
    if g_prime.feature_dim() != prompt.score.len() {
        return Err(VpgError::DimMismatch {
            expected: prompt.score.len(),
            found: g_prime.feature_dim(),
        });
    }
    let norm = prompt.score.dot(&prompt.score).sqrt();
    if !(norm > 0.0) {
        return Err(VpgError::ZeroScoreVector);
    }
    let node = g_prime.features().dot(&prompt.score) / norm;
    let edge = g_prime
        .edges()
        .iter()
        .map(|&(a, b)| (node[a] - node[b]).abs())
        .collect();
    let mut scaled = g_prime.features().clone();
    for (mut row, w) in scaled.rows_mut().into_iter().zip(node.iter()) {
        row *= w.tanh();
    }
    Ok(Significance { node, edge, scaled })
}

/// A virtual prompt graph against a source graph with `n` nodes.
///
/// Node indices below `n` refer to source nodes; indices `n..` refer to
/// candidates in `G'`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vpg {
    /// Added candidate nodes (G' indices, all ≥ n).
    pub added_nodes: Vec<usize>,
    /// Feature rows of the added nodes, aligned with `added_nodes`.
    pub added_features: Array2<f64>,
    /// Removed source nodes.
    pub anti_nodes: Vec<usize>,
    /// Added edges (G' index pairs).
    pub added_edges: Vec<(usize, usize)>,
    /// Removed source edges (source index pairs).
    pub anti_edges: Vec<(usize, usize)>,
}

impl Vpg {
    pub fn is_empty(&self) -> bool {
        self.added_nodes.is_empty()
            && self.anti_nodes.is_empty()
            && self.added_edges.is_empty()
            && self.anti_edges.is_empty()
    }

    /// Checks the disjointness and membership rules against `graph`.
    pub fn check(&self, graph: &Graph) -> Result<(), VpgError> {
        let n = graph.node_count();
        let bad = |m: &str| Err(VpgError::InconsistentVpg(m.to_string()));
        let added: BTreeSet<usize> = self.added_nodes.iter().copied().collect();
        let anti: BTreeSet<usize> = self.anti_nodes.iter().copied().collect();
        if added.len() != self.added_nodes.len() || anti.len() != self.anti_nodes.len() {
            return bad("duplicate node in a prompt set");
        }
        if added.intersection(&anti).next().is_some() {
            return bad("added and anti node sets overlap");
        }
        if anti.iter().any(|&v| v >= n) {
            return bad("anti node outside the source graph");
        }
        if added.iter().any(|&v| v < n) {
            return bad("added node is a source node");
        }
        if self.added_features.nrows() != self.added_nodes.len()
            || (!self.added_nodes.is_empty() && self.added_features.ncols() != graph.feature_dim())
        {
            return bad("added feature rows do not match added nodes");
        }
        let anti_e: BTreeSet<(usize, usize)> = self.anti_edges.iter().copied().collect();
        if anti_e.iter().any(|&(a, b)| !graph.has_edge(a, b)) {
            return bad("anti edge is not a source edge");
        }
        for &(a, b) in &self.added_edges {
            let key = (a.min(b), a.max(b));
            if anti_e.contains(&key) {
                return bad("added and anti edge sets overlap");
            }
            if a < n && b < n && graph.has_edge(a, b) {
                return bad("added edge already in the source graph");
            }
            for v in [a, b] {
                let survives = if v < n {
                    !anti.contains(&v)
                } else {
                    added.contains(&v)
                };
                if !survives {
                    return bad("added edge touches a removed node");
                }
            }
        }
        Ok(())
    }
}

/// Ranks items by descending score, ties by ascending id, and marks the first `k`.
fn top_k_mask(scores: &[f64], ids: &[u64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    let mut keep = vec![false; scores.len()];
    for &i in order.iter().take(k) {
        keep[i] = true;
    }
    keep
}

/// Keep counts `(k_n, k_e)` for a source graph.
pub fn keep_counts(nodes: usize, edges: usize, prompt: &PromptParams) -> (usize, usize) {
    (
        (prompt.alpha_n * nodes as f64).ceil() as usize,
        (prompt.alpha_e * edges as f64).ceil() as usize,
    )
}

pub fn build_vpg(
    graph: &Graph,
    g_prime: &Graph,
    scores: &Significance,
    prompt: &PromptParams,
) -> Result<Vpg, VpgError> {
    prompt.validate()?;
    let n = graph.node_count();
    let (k_n, k_e) = keep_counts(n, graph.edge_count(), prompt);
    if k_n == 0 {
        return Err(VpgError::EmptyKeepSet);
    }
    if scores.node.len() != g_prime.node_count() || scores.edge.len() != g_prime.edge_count() {
        return Err(VpgError::InconsistentVpg("scores do not match G'".into()));
    }
    let keep_node = top_k_mask(
        scores.node.as_slice().expect("contiguous"),
        g_prime.node_ids(),
        k_n,
    );
    let edge_ids: Vec<u64> = (0..g_prime.edge_count() as u64).collect();
    let keep_edge = top_k_mask(&scores.edge, &edge_ids, k_e);

    let added_nodes: Vec<usize> = (n..g_prime.node_count())
        .filter(|&v| keep_node[v])
        .collect();
    let added_features = scores.scaled.select(Axis(0), &added_nodes);
    let anti_nodes: Vec<usize> = (0..n).filter(|&v| !keep_node[v]).collect();
    let mut added_edges = Vec::new();
    let mut anti_edges = Vec::new();
    for (e, &(a, b)) in g_prime.edges().iter().enumerate() {
        let in_source = a < n && b < n && graph.has_edge(a, b);
        let passes = keep_edge[e] && keep_node[a] && keep_node[b];
        if in_source && !passes {
            anti_edges.push((a, b));
        } else if !in_source && passes {
            added_edges.push((a, b));
        }
    }
    Ok(Vpg {
        added_nodes,
        added_features,
        anti_nodes,
        added_edges,
        anti_edges,
    })
}

/// Prompted graph `Ṽ = V ∪ V̂⁺ \ V̂⁻`, `Ẽ = E ∪ Ê⁺ \ Ê⁻`.
///
/// `scaled_features` holds the tanh-scaled rows of the source nodes (any
/// extra candidate rows are ignored; added nodes use `vpg.added_features`).
pub fn apply_prompt(
    graph: &Graph,
    vpg: &Vpg,
    scaled_features: &Array2<f64>,
) -> Result<Graph, VpgError> {
    Ok(apply_prompt_mapped(graph, vpg, scaled_features)?.0)
}

/// Like [`apply_prompt`], also returning for each prompted row its G' index.
fn apply_prompt_mapped(
    graph: &Graph,
    vpg: &Vpg,
    scaled_features: &Array2<f64>,
) -> Result<(Graph, Vec<usize>), VpgError> {
    vpg.check(graph)?;
    let n = graph.node_count();
    if scaled_features.nrows() < n || scaled_features.ncols() != graph.feature_dim() {
        return Err(VpgError::InconsistentVpg(
            "scaled features do not cover the source graph".into(),
        ));
    }
    let anti: BTreeSet<usize> = vpg.anti_nodes.iter().copied().collect();
    let anti_e: BTreeSet<(usize, usize)> = vpg.anti_edges.iter().copied().collect();
    let mut row_map: Vec<usize> = (0..n).filter(|v| !anti.contains(v)).collect();
    row_map.extend(vpg.added_nodes.iter().copied());
    let mut new_index = std::collections::HashMap::with_capacity(row_map.len());
    for (r, &v) in row_map.iter().enumerate() {
        new_index.insert(v, r);
    }
    let next_id = graph.node_ids().iter().max().map_or(0, |m| m + 1);
    let ids: Vec<u64> = row_map
        .iter()
        .map(|&v| {
            if v < n {
                graph.node_ids()[v]
            } else {
                next_id + (v - n) as u64
            }
        })
        .collect();
    let mut edges = Vec::new();
    for &(a, b) in graph.edges() {
        if anti_e.contains(&(a, b)) {
            continue;
        }
        if let (Some(&x), Some(&y)) = (new_index.get(&a), new_index.get(&b)) {
            edges.push((x, y));
        }
    }
    for &(a, b) in &vpg.added_edges {
        edges.push((new_index[&a], new_index[&b]));
    }
    let d = graph.feature_dim();
    let mut features = Array2::zeros((row_map.len(), d));
    for (r, &v) in row_map.iter().enumerate() {
        if v < n {
            features.row_mut(r).assign(&scaled_features.row(v));
        } else {
            let k = r - (row_map.len() - vpg.added_nodes.len());
            features.row_mut(r).assign(&vpg.added_features.row(k));
        }
    }
    Ok((build_graph(ids, &edges, features)?, row_map))
}

/// State recorded by [`prompt_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct PromptCache {
    raw: Array2<f64>,
    scores: Array1<f64>,
    /// Prompted row → G' row.
    row_map: Vec<usize>,
    n_source: usize,
    prompt_fp: u64,
    pub vpg: Vpg,
}

impl PromptCache {
    pub fn row_map(&self) -> &[usize] {
        &self.row_map
    }
}

/// Full prompting pipeline: attach, score, select, apply.
pub fn prompt_forward(
    graph: &Graph,
    prompt: &PromptParams,
) -> Result<(Graph, PromptCache), VpgError> {
    let g_prime = attach_candidates(graph, prompt)?;
    let sig = score_significance(&g_prime, prompt)?;
    let vpg = build_vpg(graph, &g_prime, &sig, prompt)?;
    let (prompted, row_map) = apply_prompt_mapped(graph, &vpg, &sig.scaled)?;
    Ok((
        prompted,
        PromptCache {
            raw: g_prime.features().clone(),
            scores: sig.node,
            row_map,
            n_source: graph.node_count(),
            prompt_fp: prompt.fingerprint(),
            vpg,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptGrads {
    pub score: Array1<f64>,
    /// Present only when candidate features are learnable.
    pub candidates: Option<Array2<f64>>,
}

impl PromptGrads {
    pub fn to_block(&self) -> Vec<f64> {
        let mut v = self.score.to_vec();
        if let Some(c) = &self.candidates {
            v.extend(c.iter().copied());
        }
        v
    }
}

/// Gradient of the prompted features with respect to `p'` (and candidate
/// features when learnable), with the VPG selection held constant.
pub fn prompt_backward(
    prompt: &PromptParams,
    cache: &PromptCache,
    grad_prompted: &Array2<f64>,
) -> Result<PromptGrads, VpgError> {
    if cache.prompt_fp != prompt.fingerprint() {
        return Err(VpgError::StaleCache);
    }
    if grad_prompted.nrows() != cache.row_map.len() || grad_prompted.ncols() != prompt.score.len() {
        return Err(VpgError::DimMismatch {
            expected: cache.row_map.len() * prompt.score.len(),
            found: grad_prompted.len(),
        });
    }
    let norm = prompt.score.dot(&prompt.score).sqrt();
    let unit = &prompt.score / norm;
    let mut grad_p = Array1::<f64>::zeros(prompt.score.len());
    let mut grad_c = prompt
        .learnable_candidates
        .then(|| Array2::<f64>::zeros(prompt.candidates.dim()));
    for (r, &v) in cache.row_map.iter().enumerate() {
        let g = grad_prompted.row(r);
        let x = cache.raw.row(v);
        let w = cache.scores[v];
        let t = w.tanh();
        let s = g.dot(&x) * (1.0 - t * t);
        // dw/dp = x/|p| − w·p/|p|²
        grad_p.scaled_add(s / norm, &x);
        grad_p.scaled_add(-s * w / norm, &unit);
        if let (Some(gc), true) = (grad_c.as_mut(), v >= cache.n_source) {
            let mut row = gc.row_mut(v - cache.n_source);
            row.scaled_add(t, &g);
            row.scaled_add(s, &unit);
        }
    }
    Ok(PromptGrads {
        score: grad_p,
        candidates: grad_c,
    })
}
