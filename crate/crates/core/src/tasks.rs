//! Datasets, task-level samples, non-IID partitioning and a synthetic generator.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::graph::{build_graph, k_ego_induce, Graph, GraphError};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("edge file references unknown node id {0}")]
    UnknownNodeReference(u64),
    #[error("node {0} has no label")]
    MissingLabel(u64),
    #[error("no adjacent node pair shares a label")]
    NoEligibleEdges,
    #[error("partition has no samples")]
    EmptyPartition,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// One global graph with a class label per node.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub graph: Graph,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl RawDataset {
    pub fn new(graph: Graph, labels: Vec<usize>) -> Result<Self, TaskError> {
        if labels.len() != graph.node_count() {
            return Err(TaskError::InvalidParam(format!(
                "{} labels for {} nodes",
                labels.len(),
                graph.node_count()
            )));
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        if n_classes < 2 {
            return Err(TaskError::InvalidParam(
                "dataset needs at least two classes".into(),
            ));
        }
        Ok(RawDataset {
            graph,
            labels,
            n_classes,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskLevel {
    Node,
    Edge,
    Graph,
}

impl TaskLevel {
    pub const ALL: [TaskLevel; 3] = [TaskLevel::Node, TaskLevel::Edge, TaskLevel::Graph];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskLevel::Node => "node",
            TaskLevel::Edge => "edge",
            TaskLevel::Graph => "graph",
        }
    }
}

impl fmt::Display for TaskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskLevel {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "node" => Ok(TaskLevel::Node),
            "edge" => Ok(TaskLevel::Edge),
            "graph" => Ok(TaskLevel::Graph),
            other => Err(TaskError::InvalidParam(format!(
                "unknown task level {other:?}"
            ))),
        }
    }
}

/// An induced graph with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub graph: Graph,
    pub label: usize,
    pub level: TaskLevel,
}

/// Per-client lists of sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn n_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn write_manifest(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "client_id\tsample_index")?;
        for (client, idx) in self.assignments.iter().enumerate() {
            for i in idx {
                writeln!(w, "{client}\t{i}")?;
            }
        }
        Ok(())
    }

    pub fn read_manifest(r: impl BufRead, n_clients: usize) -> Result<Self, TaskError> {
        let mut assignments = vec![Vec::new(); n_clients];
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 && line.starts_with("client_id") || line.trim().is_empty() {
                continue;
            }
            let (c, s) = line.split_once('\t').ok_or_else(|| TaskError::Parse {
                line: lineno + 1,
                msg: "expected client_id<TAB>sample_index".into(),
            })?;
            let c: usize = parse_field(c, lineno)?;
            let s: usize = parse_field(s, lineno)?;
            if c >= n_clients {
                return Err(TaskError::Parse {
                    line: lineno + 1,
                    msg: format!("client {c} out of range"),
                });
            }
            assignments[c].push(s);
        }
        Ok(Partition { assignments })
    }
}

fn parse_field<T: FromStr>(s: &str, lineno: usize) -> Result<T, TaskError> {
    s.trim().parse().map_err(|_| TaskError::Parse {
        line: lineno + 1,
        msg: format!("cannot parse {s:?}"),
    })
}

/// Reads `id<TAB>label<TAB>f1,f2,...` node lines and `src<TAB>dst` edge lines.
pub fn load_dataset(node_file: &Path, edge_file: &Path) -> Result<RawDataset, TaskError> {
    let nodes = BufReader::new(fs::File::open(node_file)?);
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in nodes.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let id: u64 = parse_field(parts.next().unwrap_or(""), lineno)?;
        let label = match parts.next().map(str::trim) {
            Some(l) if !l.is_empty() => parse_field::<usize>(l, lineno)?,
            _ => return Err(TaskError::MissingLabel(id)),
        };
        let feats = parts.next().unwrap_or("");
        let row = if feats.trim().is_empty() {
            Vec::new()
        } else {
            feats
                .split(',')
                .map(|f| parse_field::<f64>(f, lineno))
                .collect::<Result<Vec<_>, _>>()?
        };
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(TaskError::Parse {
                    line: lineno + 1,
                    msg: format!("expected {} features, found {}", first.len(), row.len()),
                });
            }
        }
        ids.push(id);
        labels.push(label);
        rows.push(row);
    }
    let index: HashMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let edges_in = BufReader::new(fs::File::open(edge_file)?);
    let mut edges = Vec::new();
    for (lineno, line) in edges_in.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (s, d) = line.split_once('\t').ok_or_else(|| TaskError::Parse {
            line: lineno + 1,
            msg: "expected src<TAB>dst".into(),
        })?;
        let s: u64 = parse_field(s, lineno)?;
        let d: u64 = parse_field(d, lineno)?;
        let si = *index.get(&s).ok_or(TaskError::UnknownNodeReference(s))?;
        let di = *index.get(&d).ok_or(TaskError::UnknownNodeReference(d))?;
        // raw citation dumps carry the odd self-citation; a simple graph drops it
        if si != di {
            edges.push((si, di));
        }
    }
    let dim = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let features = Array2::from_shape_vec((ids.len(), dim), flat)
        .map_err(|e| TaskError::InvalidParam(e.to_string()))?;
    RawDataset::new(build_graph(ids, &edges, features)?, labels)
}

/// Writes a dataset in the format read by [`load_dataset`].
pub fn save_dataset(raw: &RawDataset, node_file: &Path, edge_file: &Path) -> Result<(), TaskError> {
    let mut w = std::io::BufWriter::new(fs::File::create(node_file)?);
    let g = &raw.graph;
    for (i, &id) in g.node_ids().iter().enumerate() {
        let feats: Vec<String> = g
            .features()
            .row(i)
            .iter()
            .map(|x| format!("{x:?}"))
            .collect();
        writeln!(w, "{id}\t{}\t{}", raw.labels[i], feats.join(","))?;
    }
    w.flush()?;
    let mut w = std::io::BufWriter::new(fs::File::create(edge_file)?);
    for &(a, b) in g.edges() {
        writeln!(w, "{}\t{}", g.node_ids()[a], g.node_ids()[b])?;
    }
    w.flush()?;
    Ok(())
}

/// Majority label with ties broken toward the smallest class index.
pub fn majority_label(labels: impl IntoIterator<Item = usize>, n_classes: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    for l in labels {
        counts[l] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

/// Builds graph-classification samples for one task level.
///
/// * node level: one ego network per node, labelled with the node's class;
/// * edge level: one ego network per adjacent same-label pair;
/// * graph level: ego networks around seeded random centers, labelled by
///   majority vote over the induced nodes.
///
/// When `max_samples` is set, candidates are sub-sampled with `seed`.
pub fn build_task_samples(
    raw: &RawDataset,
    level: TaskLevel,
    kappa: usize,
    max_samples: Option<usize>,
    seed: u64,
) -> Result<Vec<Sample>, TaskError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = raw.graph.node_count();
    let take = |mut items: Vec<usize>, rng: &mut ChaCha8Rng| {
        if let Some(cap) = max_samples {
            if cap < items.len() {
                items.shuffle(rng);
                items.truncate(cap);
                items.sort_unstable();
            }
        }
        items
    };
    match level {
        TaskLevel::Node => take((0..n).collect(), &mut rng)
            .into_iter()
            .map(|v| {
                Ok(Sample {
                    graph: k_ego_induce(&raw.graph, &[v], kappa)?,
                    label: raw.labels[v],
                    level,
                })
            })
            .collect(),
        TaskLevel::Edge => {
            let edges = raw.graph.edges();
            let eligible: Vec<usize> = (0..edges.len())
                .filter(|&e| raw.labels[edges[e].0] == raw.labels[edges[e].1])
                .collect();
            if eligible.is_empty() {
                return Err(TaskError::NoEligibleEdges);
            }
            take(eligible, &mut rng)
                .into_iter()
                .map(|e| {
                    let (a, b) = edges[e];
                    Ok(Sample {
                        graph: k_ego_induce(&raw.graph, &[a, b], kappa)?,
                        label: raw.labels[a],
                        level,
                    })
                })
                .collect()
        }
        TaskLevel::Graph => {
            let count = max_samples.unwrap_or(n);
            (0..count)
                .map(|_| {
                    let center = rng.random_range(0..n);
                    let graph = k_ego_induce(&raw.graph, &[center], kappa)?;
                    let label = majority_label(
                        graph
                            .node_ids()
                            .iter()
                            .map(|id| raw.labels[raw_index(raw, *id)]),
                        raw.n_classes,
                    );
                    Ok(Sample {
                        graph,
                        label,
                        level,
                    })
                })
                .collect()
        }
    }
}

fn raw_index(raw: &RawDataset, id: u64) -> usize {
    // ids in raw datasets are usually 0..n in order; fall back to a scan
    let guess = id as usize;
    if raw.graph.node_ids().get(guess) == Some(&id) {
        guess
    } else {
        raw.graph
            .index_of(id)
            .expect("induced node id comes from the raw graph")
    }
}

/// Splits samples across clients with a per-class Dirichlet(α) draw.
///
/// Each class's samples are shuffled and cut into contiguous chunks whose
/// sizes follow the drawn proportions (largest-remainder rounding). Clients
/// may end up empty; a partition with no samples at all is an error.
pub fn dirichlet_partition(
    labels: &[usize],
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Partition, TaskError> {
    if n_clients == 0 {
        return Err(TaskError::InvalidParam("n_clients must be >= 1".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(TaskError::InvalidParam(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    if labels.is_empty() {
        return Err(TaskError::EmptyPartition);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| TaskError::InvalidParam(e.to_string()))?;
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut assignments = vec![Vec::new(); n_clients];
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let draws: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        let props: Vec<f64> = if total > 0.0 && total.is_finite() {
            draws.iter().map(|g| g / total).collect()
        } else {
            // every gamma draw underflowed (tiny alpha); give the class to one client
            let mut p = vec![0.0; n_clients];
            p[rng.random_range(0..n_clients)] = 1.0;
            p
        };
        let counts = largest_remainder(&props, members.len());
        let mut start = 0;
        for (client, &c) in counts.iter().enumerate() {
            assignments[client].extend_from_slice(&members[start..start + c]);
            start += c;
        }
    }
    for a in &mut assignments {
        a.sort_unstable();
    }
    Ok(Partition { assignments })
}

/// Integer allocation of `total` proportional to `props`, summing exactly to `total`.
pub fn largest_remainder(props: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Knobs for [`synth_dataset_with`] beyond the common ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub avg_degree: f64,
    /// Norm of each class mean.
    pub separation: f64,
    /// Standard deviation of the per-coordinate feature noise.
    pub noise: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            avg_degree: 4.0,
            separation: 1.0,
            noise: 0.5,
        }
    }
}

/// Class-conditioned Gaussian features with a homophilous random edge set.
pub fn synth_dataset(
    n_nodes: usize,
    n_classes: usize,
    feature_dim: usize,
    homophily: f64,
    seed: u64,
) -> Result<RawDataset, TaskError> {
    synth_dataset_with(
        n_nodes,
        n_classes,
        feature_dim,
        homophily,
        seed,
        SynthOptions::default(),
    )
}

pub fn synth_dataset_with(
    n_nodes: usize,
    n_classes: usize,
    feature_dim: usize,
    homophily: f64,
    seed: u64,
    opts: SynthOptions,
) -> Result<RawDataset, TaskError> {
    if n_classes < 2 {
        return Err(TaskError::InvalidParam("n_classes must be >= 2".into()));
    }
    if !(0.0..=1.0).contains(&homophily) {
        return Err(TaskError::InvalidParam(format!(
            "homophily {homophily} not in [0,1]"
        )));
    }
    if feature_dim < n_classes {
        return Err(TaskError::InvalidParam(
            "feature_dim must be >= n_classes for orthogonal class means".into(),
        ));
    }
    if n_nodes < 2 * n_classes {
        return Err(TaskError::InvalidParam(
            "too few nodes for the class count".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n_nodes).map(|i| i % n_classes).collect();
    labels.shuffle(&mut rng);
    let normal =
        Normal::new(0.0, opts.noise).map_err(|e| TaskError::InvalidParam(e.to_string()))?;
    let mut features = Array2::<f64>::zeros((n_nodes, feature_dim));
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        for x in row.iter_mut() {
            *x = normal.sample(&mut rng);
        }
        row[labels[i]] += opts.separation;
    }
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let target = (n_nodes as f64 * opts.avg_degree / 2.0).round() as usize;
    let mut edges = std::collections::BTreeSet::new();
    let mut attempts = 0;
    while edges.len() < target && attempts < target * 50 {
        attempts += 1;
        let u = rng.random_range(0..n_nodes);
        let v = if rng.random::<f64>() < homophily {
            *by_class[labels[u]]
                .choose(&mut rng)
                .expect("class is nonempty")
        } else {
            let mut c = rng.random_range(0..n_classes - 1);
            if c >= labels[u] {
                c += 1;
            }
            *by_class[c].choose(&mut rng).expect("class is nonempty")
        };
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    let edges: Vec<_> = edges.into_iter().collect();
    let graph = build_graph((0..n_nodes as u64).collect(), &edges, features)?;
    RawDataset::new(graph, labels)
}
