//! Server-side GCN encoder, client-side linear head, and their exact gradients.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::Graph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("cache does not match the current parameters or graph")]
    StaleCache,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("shape mismatch between parameter vectors")]
    ShapeMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Tanh {
            z.mapv_inplace(f64::tanh);
        }
    }
}

/// Weights of an L-layer GCN, `H⁽ˡ⁺¹⁾ = act(Â H⁽ˡ⁾ W⁽ˡ⁾)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub weights: Vec<Array2<f64>>,
    pub activation: Activation,
}

impl EncoderParams {
    /// Seeded Glorot-uniform initialization: `in_dim → hidden → … → hidden`.
    pub fn glorot(in_dim: usize, hidden: usize, layers: usize, seed: u64) -> Self {
        assert!(layers >= 1, "encoder needs at least one layer");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..layers)
            .map(|l| {
                let fan_in = if l == 0 { in_dim } else { hidden };
                let bound = (6.0 / (fan_in + hidden) as f64).sqrt();
                Array2::from_shape_fn((fan_in, hidden), |_| rng.random_range(-bound..bound))
            })
            .collect();
        EncoderParams {
            weights,
            activation: Activation::Tanh,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.last().map_or(0, |w| w.ncols())
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Fingerprint::default();
        for w in &self.weights {
            h.mix(w.nrows() as u64);
            h.mix_floats(w.iter());
        }
        h.finish()
    }
}

/// Cheap FNV-style digest used to detect caches built from stale state.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Fingerprint(u64);

impl Default for Fingerprint {
    fn default() -> Self {
        Fingerprint(0xcbf2_9ce4_8422_2325)
    }
}

impl Fingerprint {
    pub(crate) fn mix(&mut self, x: u64) {
        self.0 = (self.0 ^ x).wrapping_mul(0x0100_0000_01b3);
    }

    pub(crate) fn mix_floats<'a>(&mut self, xs: impl Iterator<Item = &'a f64>) {
        for x in xs {
            self.mix(x.to_bits());
        }
    }

    pub(crate) fn finish(self) -> u64 {
        self.0
    }
}

pub(crate) fn graph_fingerprint(graph: &Graph) -> u64 {
    let mut h = Fingerprint::default();
    h.mix(graph.node_count() as u64);
    for &(a, b) in graph.edges() {
        h.mix(((a as u64) << 32) | b as u64);
    }
    h.mix_floats(graph.features().iter());
    h.finish()
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `Â H⁽ˡ⁾` for each layer input.
    propagated: Vec<Array2<f64>>,
    /// Activated outputs `H⁽ˡ⁺¹⁾`.
    outputs: Vec<Array2<f64>>,
    params_fp: u64,
    graph_fp: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("at least one layer")
    }
}

pub fn gnn_forward(
    params: &EncoderParams,
    graph: &Graph,
) -> Result<(Array2<f64>, ForwardCache), EncoderError> {
    if graph.feature_dim() != params.in_dim() {
        return Err(EncoderError::DimMismatch {
            expected: params.in_dim(),
            found: graph.feature_dim(),
        });
    }
    let mut propagated = Vec::with_capacity(params.weights.len());
    let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(params.weights.len());
    for w in &params.weights {
        let input = outputs.last().unwrap_or(graph.features());
        let p = graph.propagate(input);
        let mut z = p.dot(w);
        params.activation.apply(&mut z);
        propagated.push(p);
        outputs.push(z);
    }
    let out = outputs.last().expect("at least one layer").clone();
    Ok((
        out,
        ForwardCache {
            propagated,
            outputs,
            params_fp: params.fingerprint(),
            graph_fp: graph_fingerprint(graph),
        },
    ))
}

/// Reverse pass of [`gnn_forward`]: returns per-layer weight gradients and
/// the gradient with respect to the input node features.
pub fn gnn_backward(
    params: &EncoderParams,
    graph: &Graph,
    cache: &ForwardCache,
    grad_h: &Array2<f64>,
) -> Result<(Vec<Array2<f64>>, Array2<f64>), EncoderError> {
    if cache.params_fp != params.fingerprint() || cache.graph_fp != graph_fingerprint(graph) {
        return Err(EncoderError::StaleCache);
    }
    let out = cache.output();
    if grad_h.dim() != out.dim() {
        return Err(EncoderError::DimMismatch {
            expected: out.len(),
            found: grad_h.len(),
        });
    }
    let layers = params.weights.len();
    let mut grads = vec![Array2::zeros((0, 0)); layers];
    let mut g = grad_h.clone();
    for l in (0..layers).rev() {
        let dz = match params.activation {
            Activation::Tanh => {
                let h = &cache.outputs[l];
                &g * &h.mapv(|x| 1.0 - x * x)
            }
            Activation::Linear => g,
        };
        grads[l] = cache.propagated[l].t().dot(&dz);
        g = graph.propagate(&dz.dot(&params.weights[l].t()));
    }
    Ok((grads, g))
}

/// Bias-free linear classifier `d → C`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub weight: Array2<f64>,
}

impl HeadParams {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        HeadParams {
            weight: Array2::zeros((dim, classes)),
        }
    }

    pub fn glorot(dim: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / (dim + classes) as f64).sqrt();
        HeadParams {
            weight: Array2::from_shape_fn((dim, classes), |_| rng.random_range(-bound..bound)),
        }
    }

    pub fn classes(&self) -> usize {
        self.weight.ncols()
    }
}

pub fn head_forward(head: &HeadParams, pooled: &Array1<f64>) -> Result<Array1<f64>, EncoderError> {
    if pooled.len() != head.weight.nrows() {
        return Err(EncoderError::DimMismatch {
            expected: head.weight.nrows(),
            found: pooled.len(),
        });
    }
    Ok(pooled.dot(&head.weight))
}

/// Softmax cross-entropy and its gradient `softmax(z) − onehot(y)`.
pub fn loss_and_grad(
    logits: &Array1<f64>,
    label: usize,
) -> Result<(f64, Array1<f64>), EncoderError> {
    if label >= logits.len() {
        return Err(EncoderError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let exp = logits.mapv(|x| (x - max).exp());
    let sum = exp.sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad = exp / sum;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Layout of a client parameter vector: prompt block then head block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub prompt_len: usize,
    pub head_rows: usize,
    pub head_cols: usize,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.prompt_len + self.head_rows * self.head_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flattened client parameters `θ = (θ_p, θ_h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParamVector {
    pub fn flatten(prompt: &[f64], head: &HeadParams) -> Self {
        let mut values = Vec::with_capacity(prompt.len() + head.weight.len());
        values.extend_from_slice(prompt);
        values.extend(head.weight.iter().copied());
        ParamVector {
            values,
            layout: ParamLayout {
                prompt_len: prompt.len(),
                head_rows: head.weight.nrows(),
                head_cols: head.weight.ncols(),
            },
        }
    }

    pub fn zeros(layout: ParamLayout) -> Self {
        ParamVector {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn prompt(&self) -> &[f64] {
        &self.values[..self.layout.prompt_len]
    }

    pub fn head(&self) -> HeadParams {
        let l = self.layout;
        HeadParams {
            weight: Array2::from_shape_vec(
                (l.head_rows, l.head_cols),
                self.values[l.prompt_len..].to_vec(),
            )
            .expect("layout matches values"),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Plain gradient descent: `θ − lr·g`.
pub fn sgd_step(
    params: &ParamVector,
    grads: &ParamVector,
    lr: f64,
) -> Result<ParamVector, EncoderError> {
    if params.layout != grads.layout || params.values.len() != grads.values.len() {
        return Err(EncoderError::ShapeMismatch);
    }
    Ok(ParamVector {
        values: params
            .values
            .iter()
            .zip(&grads.values)
            .map(|(p, g)| p - lr * g)
            .collect(),
        layout: params.layout,
    })
}

/// Gradient of the mean readout: every node row receives `g / n`.
pub fn readout_backward(grad_pooled: &Array1<f64>, nodes: usize) -> Array2<f64> {
    let row = grad_pooled / nodes as f64;
    row.insert_axis(Axis(0))
        .broadcast((nodes, grad_pooled.len()))
        .expect("broadcast row")
        .to_owned()
}

/// Head weight gradient `pooledᵀ · g` and pooled-embedding gradient `W · g`.
pub fn head_backward(
    head: &HeadParams,
    pooled: &Array1<f64>,
    grad_logits: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>) {
    let gw = pooled
        .view()
        .insert_axis(Axis(1))
        .dot(&grad_logits.view().insert_axis(Axis(0)));
    (gw, head.weight.dot(grad_logits))
}
