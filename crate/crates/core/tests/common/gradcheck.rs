//! Finite-difference harness shared by the gradient tests and the acceptance suite.

use fedgpl::encoder::{
    gnn_backward, gnn_forward, head_backward, head_forward, loss_and_grad, readout_backward,
    EncoderParams, HeadParams,
};
use fedgpl::graph::{readout, Graph};
use fedgpl::vpg::{prompt_backward, prompt_forward, PromptParams, Vpg};
use ndarray::Array2;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 30;

pub struct Setup {
    pub graph: Graph,
    pub encoder: EncoderParams,
    pub head: HeadParams,
    pub prompt: PromptParams,
    pub label: usize,
}

pub fn setup(seed: u64) -> Setup {
    let mut rng = super::rng(seed);
    let n = 4 + (seed as usize % 9);
    let graph = super::random_graph(&mut rng, n, 0.35, 5);
    let mut prompt = PromptParams::seeded(5, 3, seed + 1000);
    prompt.gamma = 0.6;
    Setup {
        graph,
        encoder: EncoderParams::glorot(5, 7, 2, seed + 2000),
        head: HeadParams {
            weight: super::gaussian_matrix(&mut rng, 7, 3, 0.8),
        },
        prompt,
        label: seed as usize % 3,
    }
}

pub fn encoder_loss(enc: &EncoderParams, head: &HeadParams, g: &Graph, label: usize) -> f64 {
    let (h, _) = gnn_forward(enc, g).unwrap();
    let logits = head_forward(head, &readout(&h).unwrap()).unwrap();
    loss_and_grad(&logits, label).unwrap().0
}

pub type Selection = (
    Vec<usize>,
    Vec<usize>,
    Vec<(usize, usize)>,
    Vec<(usize, usize)>,
);

/// The discrete part of a VPG.
pub fn selection(v: &Vpg) -> Selection {
    (
        v.added_nodes.clone(),
        v.anti_nodes.clone(),
        v.added_edges.clone(),
        v.anti_edges.clone(),
    )
}

pub fn prompted_loss(s: &Setup, prompt: &PromptParams) -> (f64, Selection) {
    let (g, cache) = prompt_forward(&s.graph, prompt).unwrap();
    (
        encoder_loss(&s.encoder, &s.head, &g, s.label),
        selection(&cache.vpg),
    )
}

pub struct Analytic {
    pub weights: Vec<Array2<f64>>,
    pub head: Array2<f64>,
    pub features: Array2<f64>,
    pub score: Vec<f64>,
    pub prompted: Graph,
}

pub fn analytic(s: &Setup) -> Analytic {
    let (prompted, pcache) = prompt_forward(&s.graph, &s.prompt).unwrap();
    let (h, cache) = gnn_forward(&s.encoder, &prompted).unwrap();
    let pooled = readout(&h).unwrap();
    let logits = head_forward(&s.head, &pooled).unwrap();
    let (_, g) = loss_and_grad(&logits, s.label).unwrap();
    let (gw, gp) = head_backward(&s.head, &pooled, &g);
    let gh = readout_backward(&gp, h.nrows());
    let (weights, features) = gnn_backward(&s.encoder, &prompted, &cache, &gh).unwrap();
    let score = prompt_backward(&s.prompt, &pcache, &features)
        .unwrap()
        .score
        .to_vec();
    Analytic {
        weights,
        head: gw,
        features,
        score,
        prompted,
    }
}

pub fn rel_err(fd: &[f64], an: &[f64]) -> f64 {
    let diff: f64 = fd
        .iter()
        .zip(an)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let na = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = an.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn central(mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(H) - f(-H)) / (2.0 * H)
}

/// Worst relative error over the encoder layers.
pub fn encoder_err(s: &Setup, a: &Analytic) -> f64 {
    let mut worst = 0.0f64;
    for (l, w) in s.encoder.weights.iter().enumerate() {
        let fd: Vec<f64> = (0..w.len())
            .map(|k| {
                central(|h| {
                    let mut enc = s.encoder.clone();
                    enc.weights[l].as_slice_mut().unwrap()[k] += h;
                    encoder_loss(&enc, &s.head, &a.prompted, s.label)
                })
            })
            .collect();
        worst = worst.max(rel_err(&fd, a.weights[l].as_slice().unwrap()));
    }
    worst
}

pub fn head_err(s: &Setup, a: &Analytic) -> f64 {
    let fd: Vec<f64> = (0..s.head.weight.len())
        .map(|k| {
            central(|h| {
                let mut head = s.head.clone();
                head.weight.as_slice_mut().unwrap()[k] += h;
                encoder_loss(&s.encoder, &head, &a.prompted, s.label)
            })
        })
        .collect();
    rel_err(&fd, &a.head.iter().copied().collect::<Vec<_>>())
}

pub fn feature_err(s: &Setup, a: &Analytic) -> f64 {
    let x = a.prompted.features().clone();
    let fd: Vec<f64> = (0..x.len())
        .map(|k| {
            central(|h| {
                let mut xp = x.clone();
                xp.as_slice_mut().unwrap()[k] += h;
                encoder_loss(
                    &s.encoder,
                    &s.head,
                    &a.prompted.with_features(xp).unwrap(),
                    s.label,
                )
            })
        })
        .collect();
    rel_err(&fd, a.features.as_slice().unwrap())
}

/// Relative error on `p'`, or `None` when a ±h nudge changes the selection.
pub fn score_err(s: &Setup, a: &Analytic) -> Option<f64> {
    let (_, base) = prompted_loss(s, &s.prompt);
    let mut flipped = false;
    let fd: Vec<f64> = (0..s.prompt.score.len())
        .map(|k| {
            central(|h| {
                let mut p = s.prompt.clone();
                p.score[k] += h;
                let (loss, sel) = prompted_loss(s, &p);
                flipped |= sel != base;
                loss
            })
        })
        .collect();
    (!flipped).then(|| rel_err(&fd, &a.score))
}
