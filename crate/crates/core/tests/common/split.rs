//! One training step through the split protocol and the same step done in one place.

use fedgpl::codec::wire_round;
use fedgpl::encoder::{
    gnn_backward, gnn_forward, head_backward, head_forward, loss_and_grad, readout_backward,
    EncoderParams, HeadParams,
};
use fedgpl::federation::{
    client_grad_step, client_prompt_step, client_prompt_update, server_backprop_step,
    server_embed_step, ClientState, ServerSession, ServerState,
};
use fedgpl::graph::{build_graph, readout};
use fedgpl::privacy::PrivacyConfig;
use fedgpl::prompt::ClientPrompt;
use fedgpl::tasks::{Sample, TaskLevel};
use ndarray::Array2;

pub const LR: f64 = 0.1;
pub const TOL: f64 = 1e-10;

pub fn max_diff(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn round_all(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(wire_round)
}

pub struct Outcome {
    pub prompt: Vec<f64>,
    pub head: Array2<f64>,
    pub encoder: Vec<Array2<f64>>,
}

pub fn split(
    prompt: ClientPrompt,
    head: HeadParams,
    encoder: EncoderParams,
    sample: Sample,
) -> Outcome {
    let privacy = PrivacyConfig::default();
    let mut client = ClientState::new(4, sample.level, prompt, head, vec![sample], vec![]).unwrap();
    let mut server = ServerState::new(encoder, LR, false, 5);
    let mut session = ServerSession::new(4, true);
    let up = client_prompt_step(&mut client, 0, 1, 0, &privacy).unwrap();
    let down = server_embed_step(&server.encoder, &mut session, &up, &privacy).unwrap();
    let (_, up) = client_grad_step(&mut client, &down, LR, 0, &privacy).unwrap();
    let down = server_backprop_step(&server.encoder, &mut session, &up).unwrap();
    client_prompt_update(&mut client, &down, LR).unwrap();
    assert_eq!(client.in_flight(), 0);
    assert_eq!(session.cached(), 0);
    assert_eq!(server.apply_encoder_grads(&[session]), 1);
    Outcome {
        prompt: client.prompt.to_block(),
        head: client.head.weight,
        encoder: server.encoder.weights,
    }
}

pub fn monolithic(
    prompt: ClientPrompt,
    head: HeadParams,
    encoder: EncoderParams,
    sample: Sample,
) -> Outcome {
    let (prompted, trace) = prompt.forward(&sample.graph).unwrap();
    // the server rebuilds the graph from the wire with fresh ids
    let wire = build_graph(
        (0..prompted.node_count() as u64).collect(),
        prompted.edges(),
        round_all(prompted.features()),
    )
    .unwrap();
    let (h, cache) = gnn_forward(&encoder, &wire).unwrap();
    let h = round_all(&h);
    let pooled = readout(&h).unwrap();
    let logits = head_forward(&head, &pooled).unwrap();
    let (_, g) = loss_and_grad(&logits, sample.label).unwrap();
    let (gw, gp) = head_backward(&head, &pooled, &g);
    let new_head = &head.weight - &(LR * &gw);
    let gh = round_all(&readout_backward(&gp, h.nrows()));
    let (wgrads, gx) = gnn_backward(&encoder, &wire, &cache, &gh).unwrap();
    let gblock = prompt.backward(&trace, &round_all(&gx)).unwrap();
    let new_prompt = prompt
        .to_block()
        .iter()
        .zip(&gblock)
        .map(|(p, g)| p - LR * g)
        .collect();
    let new_encoder = encoder
        .weights
        .iter()
        .zip(&wgrads)
        .map(|(w, g)| w - &(LR * g))
        .collect();
    Outcome {
        prompt: new_prompt,
        head: new_head,
        encoder: new_encoder,
    }
}

pub fn sample(seed: u64, level: TaskLevel) -> Sample {
    let mut rng = super::rng(seed);
    let n = 5 + (seed as usize % 11);
    Sample {
        graph: super::random_graph(&mut rng, n, 0.3, 6),
        label: seed as usize % 3,
        level,
    }
}

/// Largest split-versus-monolithic difference over all updated parameters.
pub fn split_gap(prompt: ClientPrompt, seed: u64) -> f64 {
    let level = TaskLevel::ALL[seed as usize % 3];
    let s = sample(seed, level);
    let head = HeadParams::glorot(10, 3, seed + 7);
    let encoder = EncoderParams::glorot(6, 10, 2, seed + 11);
    let a = split(prompt.clone(), head.clone(), encoder.clone(), s.clone());
    let b = monolithic(prompt, head, encoder, s);
    let dp = max_diff(a.prompt.iter().copied(), b.prompt.iter().copied());
    let dh = max_diff(a.head.iter().copied(), b.head.iter().copied());
    let de = a
        .encoder
        .iter()
        .zip(&b.encoder)
        .map(|(x, y)| max_diff(x.iter().copied(), y.iter().copied()))
        .fold(0.0, f64::max);
    dp.max(dh).max(de)
}
