//! Client-side prompt functions behind one interface: the VPG prompt and a
//! GPF-style baseline that adds a single learnable vector to every node.

use ndarray::{Array1, Array2};

use crate::encoder::Fingerprint;
use crate::graph::Graph;
use crate::vpg::{prompt_backward, prompt_forward, PromptCache, PromptParams, VpgError};

/// Feature prompt: `x_i ← x_i + q` for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct GpfPrompt {
    pub vector: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientPrompt {
    Vpg(PromptParams),
    Gpf(GpfPrompt),
}

#[derive(Debug, Clone)]
pub enum PromptTrace {
    Vpg(Box<PromptCache>),
    Gpf { nodes: usize, prompt_fp: u64 },
}

impl PromptTrace {
    /// Number of nodes in the prompted graph.
    pub fn prompted_nodes(&self) -> usize {
        match self {
            PromptTrace::Vpg(c) => c.row_map().len(),
            PromptTrace::Gpf { nodes, .. } => *nodes,
        }
    }
}

fn vec_fp(v: &Array1<f64>) -> u64 {
    let mut h = Fingerprint::default();
    h.mix_floats(v.iter());
    h.finish()
}

impl ClientPrompt {
    pub fn block_len(&self) -> usize {
        match self {
            ClientPrompt::Vpg(p) => p.block_len(),
            ClientPrompt::Gpf(g) => g.vector.len(),
        }
    }

    pub fn to_block(&self) -> Vec<f64> {
        match self {
            ClientPrompt::Vpg(p) => p.to_block(),
            ClientPrompt::Gpf(g) => g.vector.to_vec(),
        }
    }

    pub fn load_block(&mut self, block: &[f64]) -> Result<(), VpgError> {
        match self {
            ClientPrompt::Vpg(p) => p.load_block(block),
            ClientPrompt::Gpf(g) => {
                if block.len() != g.vector.len() {
                    return Err(VpgError::DimMismatch {
                        expected: g.vector.len(),
                        found: block.len(),
                    });
                }
                g.vector.assign(&Array1::from(block.to_vec()));
                Ok(())
            }
        }
    }

    pub fn forward(&self, graph: &Graph) -> Result<(Graph, PromptTrace), VpgError> {
        match self {
            ClientPrompt::Vpg(p) => {
                let (g, cache) = prompt_forward(graph, p)?;
                Ok((g, PromptTrace::Vpg(Box::new(cache))))
            }
            ClientPrompt::Gpf(q) => {
                if q.vector.len() != graph.feature_dim() {
                    return Err(VpgError::DimMismatch {
                        expected: q.vector.len(),
                        found: graph.feature_dim(),
                    });
                }
                let feats = graph.features() + &q.vector;
                Ok((
                    graph.with_features(feats)?,
                    PromptTrace::Gpf {
                        nodes: graph.node_count(),
                        prompt_fp: vec_fp(&q.vector),
                    },
                ))
            }
        }
    }

    /// Gradient of the prompt block given the gradient on prompted features.
    pub fn backward(&self, trace: &PromptTrace, grad: &Array2<f64>) -> Result<Vec<f64>, VpgError> {
        match (self, trace) {
            (ClientPrompt::Vpg(p), PromptTrace::Vpg(cache)) => {
                Ok(prompt_backward(p, cache, grad)?.to_block())
            }
            (ClientPrompt::Gpf(q), PromptTrace::Gpf { nodes, prompt_fp }) => {
                if *prompt_fp != vec_fp(&q.vector) {
                    return Err(VpgError::StaleCache);
                }
                if grad.nrows() != *nodes || grad.ncols() != q.vector.len() {
                    return Err(VpgError::DimMismatch {
                        expected: nodes * q.vector.len(),
                        found: grad.len(),
                    });
                }
                Ok(grad.sum_axis(ndarray::Axis(0)).to_vec())
            }
            _ => Err(VpgError::StaleCache),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use ndarray::array;

    #[test]
    fn gpf_adds_vector_and_sums_grads() {
        let g = build_graph(vec![0, 1], &[(0, 1)], array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let p = ClientPrompt::Gpf(GpfPrompt {
            vector: array![0.5, -1.0],
        });
        let (out, trace) = p.forward(&g).unwrap();
        assert_eq!(out.features(), &array![[1.5, 1.0], [3.5, 3.0]]);
        assert_eq!(out.edges(), g.edges());
        let grad = p
            .backward(&trace, &array![[1.0, 0.0], [2.0, -1.0]])
            .unwrap();
        assert_eq!(grad, vec![3.0, -1.0]);
    }

    #[test]
    fn mismatched_trace_is_stale() {
        let g = build_graph(vec![0], &[], array![[1.0]]).unwrap();
        let gpf = ClientPrompt::Gpf(GpfPrompt {
            vector: array![0.0],
        });
        let (_, trace) = gpf.forward(&g).unwrap();
        let vpg = ClientPrompt::Vpg(PromptParams::seeded(1, 0, 0));
        assert_eq!(
            vpg.backward(&trace, &array![[1.0]]).unwrap_err(),
            VpgError::StaleCache
        );
    }
}
