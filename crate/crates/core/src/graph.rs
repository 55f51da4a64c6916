//! Simple undirected graphs with dense node features.
//!
//! A [`Graph`] is the payload that flows through the whole pipeline: raw
//! datasets, induced task samples, prompted graphs and the server-side
//! encoder input are all graphs. Edges are stored as `(lo, hi)` index pairs,
//! sorted and deduplicated, so two graphs with the same structure always
//! compare equal.

use std::collections::{BTreeSet, VecDeque};

use ndarray::{Array1, Array2, Axis};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must contain at least one node")]
    Empty,
    #[error("feature matrix has {rows} rows but the graph has {nodes} nodes")]
    MismatchedFeatureRows { rows: usize, nodes: usize },
    #[error("edge ({0}, {1}) references a node index outside the graph")]
    DanglingEdgeEndpoint(usize, usize),
    #[error("self-loop on node index {0}")]
    SelfLoop(usize),
    #[error("duplicate node id {0}")]
    DuplicateNodeId(u64),
    #[error("invalid center node index {0}")]
    InvalidCenter(usize),
    #[error("cannot pool an empty embedding")]
    EmptyEmbedding,
}

/// An undirected simple graph `G = (V, E, X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_ids: Vec<u64>,
    edges: Vec<(usize, usize)>,
    features: Array2<f64>,
}

/// Validates and builds a graph.
///
/// Duplicate undirected edges (including `(a, b)` vs `(b, a)`) collapse into
/// one; self-loops are rejected.
pub fn build_graph(
    node_ids: Vec<u64>,
    edges: &[(usize, usize)],
    features: Array2<f64>,
) -> Result<Graph, GraphError> {
    if node_ids.is_empty() {
        return Err(GraphError::Empty);
    }
    if features.nrows() != node_ids.len() {
        return Err(GraphError::MismatchedFeatureRows {
            rows: features.nrows(),
            nodes: node_ids.len(),
        });
    }
    let mut seen = BTreeSet::new();
    for &id in &node_ids {
        if !seen.insert(id) {
            return Err(GraphError::DuplicateNodeId(id));
        }
    }
    let n = node_ids.len();
    let mut set = BTreeSet::new();
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(GraphError::DanglingEdgeEndpoint(a, b));
        }
        if a == b {
            return Err(GraphError::SelfLoop(a));
        }
        set.insert((a.min(b), a.max(b)));
    }
    Ok(Graph {
        node_ids,
        edges: set.into_iter().collect(),
        features,
    })
}

impl Graph {
    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_ids(&self) -> &[u64] {
        &self.node_ids
    }

    /// Edges as sorted `(lo, hi)` node-index pairs.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Index of the node carrying `id`, if any.
    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.node_ids.iter().position(|&x| x == id)
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Degrees of `A + I`, i.e. neighbour count plus one.
    pub fn self_loop_degrees(&self) -> Vec<f64> {
        let mut deg = vec![1.0; self.node_count()];
        for &(a, b) in &self.edges {
            deg[a] += 1.0;
            deg[b] += 1.0;
        }
        deg
    }

    /// Returns the same graph with its features replaced.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Graph, GraphError> {
        if features.nrows() != self.node_count() {
            return Err(GraphError::MismatchedFeatureRows {
                rows: features.nrows(),
                nodes: self.node_count(),
            });
        }
        Ok(Graph {
            node_ids: self.node_ids.clone(),
            edges: self.edges.clone(),
            features,
        })
    }

    /// Computes `Â · M` for `Â = D̂^{-1/2}(A + I)D̂^{-1/2}` without materializing `Â`.
    ///
    /// `Â` is symmetric, so this also serves as `Âᵀ · M` in backward passes.
    pub fn propagate(&self, m: &Array2<f64>) -> Array2<f64> {
        assert_eq!(m.nrows(), self.node_count(), "propagate: row mismatch");
        let inv_sqrt: Vec<f64> = self
            .self_loop_degrees()
            .into_iter()
            .map(|d| 1.0 / d.sqrt())
            .collect();
        let mut out = m.clone();
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            row *= inv_sqrt[i] * inv_sqrt[i];
        }
        for &(a, b) in &self.edges {
            let w = inv_sqrt[a] * inv_sqrt[b];
            let ra = m.row(a).to_owned();
            let rb = m.row(b);
            out.row_mut(a).scaled_add(w, &rb);
            out.row_mut(b).scaled_add(w, &ra);
        }
        out
    }
}

/// Induces the κ-ego network around `centers`.
///
/// The result keeps every node within `kappa` hops of any center, all
/// original edges among those nodes, and their feature rows, ordered by
/// ascending original node id.
pub fn k_ego_induce(graph: &Graph, centers: &[usize], kappa: usize) -> Result<Graph, GraphError> {
    if centers.is_empty() {
        return Err(GraphError::Empty);
    }
    let n = graph.node_count();
    if let Some(&bad) = centers.iter().find(|&&c| c >= n) {
        return Err(GraphError::InvalidCenter(bad));
    }
    let adj = graph.adjacency_lists();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for &c in centers {
        if dist[c] != 0 {
            dist[c] = 0;
            queue.push_back(c);
        }
    }
    while let Some(u) = queue.pop_front() {
        if dist[u] == kappa {
            continue;
        }
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut kept: Vec<usize> = (0..n).filter(|&i| dist[i] != usize::MAX).collect();
    kept.sort_by_key(|&i| graph.node_ids[i]);
    induce_on(graph, &kept)
}

/// Subgraph on `kept` (old indices, in output order) with all edges among them.
pub(crate) fn induce_on(graph: &Graph, kept: &[usize]) -> Result<Graph, GraphError> {
    let mut remap = vec![usize::MAX; graph.node_count()];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = new;
    }
    let edges: Vec<(usize, usize)> = graph
        .edges
        .iter()
        .filter(|&&(a, b)| remap[a] != usize::MAX && remap[b] != usize::MAX)
        .map(|&(a, b)| (remap[a], remap[b]))
        .collect();
    let features = graph.features.select(Axis(0), kept);
    let ids = kept.iter().map(|&i| graph.node_ids[i]).collect();
    build_graph(ids, &edges, features)
}

/// Dense `D̂^{-1/2}(A + I)D̂^{-1/2}` in graph node order.
pub fn normalized_adjacency(graph: &Graph) -> Array2<f64> {
    let n = graph.node_count();
    let deg = graph.self_loop_degrees();
    let mut a = Array2::<f64>::zeros((n, n));
    for (i, d) in deg.iter().enumerate() {
        a[[i, i]] = 1.0 / d;
    }
    for &(u, v) in graph.edges() {
        let w = 1.0 / (deg[u] * deg[v]).sqrt();
        a[[u, v]] = w;
        a[[v, u]] = w;
    }
    a
}

/// Mean readout over node embeddings.
pub fn readout(node_embeddings: &Array2<f64>) -> Result<Array1<f64>, GraphError> {
    node_embeddings
        .mean_axis(Axis(0))
        .ok_or(GraphError::EmptyEmbedding)
}
