use std::collections::VecDeque;

use ndarray::Array2;

use super::client::{floats, reshape};
use super::{stream, FederationError};
use crate::codec::{decode_message, encode_message, Message, MessageKind, Payload};
use crate::encoder::{gnn_backward, gnn_forward, EncoderParams, ForwardCache, ParamVector};
use crate::graph::{build_graph, Graph};
use crate::hidta::TransferMatrix;
use crate::privacy::{laplace_privatize, stream_id, PrivacyConfig};

#[derive(Debug, Clone)]
pub struct ServerState {
    /// Read-only while a round is running.
    pub encoder: EncoderParams,
    pub encoder_lr: f64,
    pub freeze_encoder: bool,
    /// Last known parameters of each client, indexed by client id.
    pub client_params: Vec<Option<ParamVector>>,
    pub tau_history: Vec<(u32, TransferMatrix)>,
}

impl ServerState {
    pub fn new(
        encoder: EncoderParams,
        encoder_lr: f64,
        freeze_encoder: bool,
        n_clients: usize,
    ) -> Self {
        ServerState {
            encoder,
            encoder_lr,
            freeze_encoder,
            client_params: vec![None; n_clients],
            tau_history: Vec::new(),
        }
    }

    /// Applies the mean of the accumulated encoder gradients; returns the sample count.
    pub fn apply_encoder_grads(&mut self, sessions: &[ServerSession]) -> usize {
        let total: usize = sessions.iter().map(|s| s.samples).sum();
        if self.freeze_encoder || total == 0 {
            return total;
        }
        let mut sum: Vec<Array2<f64>> = self
            .encoder
            .weights
            .iter()
            .map(|w| Array2::zeros(w.dim()))
            .collect();
        for s in sessions {
            if let Some(acc) = &s.grad_acc {
                for (t, g) in sum.iter_mut().zip(acc) {
                    *t += g;
                }
            }
        }
        let step = self.encoder_lr / total as f64;
        for (w, g) in self.encoder.weights.iter_mut().zip(&sum) {
            w.scaled_add(-step, g);
        }
        total
    }
}

/// Per-client server state for one round.
#[derive(Debug, Clone)]
pub struct ServerSession {
    pub client_id: u32,
    cache: VecDeque<(Graph, ForwardCache, u32)>,
    /// Summed encoder weight gradients, when the encoder is trainable.
    pub grad_acc: Option<Vec<Array2<f64>>>,
    /// Completed backward passes.
    pub samples: usize,
    seq: u64,
    track_grads: bool,
}

impl ServerSession {
    pub fn new(client_id: u32, track_grads: bool) -> Self {
        ServerSession {
            client_id,
            cache: VecDeque::new(),
            grad_acc: None,
            samples: 0,
            seq: 0,
            track_grads,
        }
    }

    pub fn cached(&self) -> usize {
        self.cache.len()
    }
}

/// Encodes a prompted graph with the round snapshot and returns its (privatized) embeddings.
pub fn server_embed_step(
    encoder: &EncoderParams,
    session: &mut ServerSession,
    frame: &[u8],
    privacy: &PrivacyConfig,
) -> Result<Vec<u8>, FederationError> {
    let msg = decode_message(frame)?;
    if msg.kind != MessageKind::PromptedGraph {
        return Err(FederationError::UnexpectedKind {
            expected: MessageKind::PromptedGraph,
            found: msg.kind,
        });
    }
    if msg.client_id != session.client_id {
        return Err(FederationError::StaleState(format!(
            "client {} frame in session {}",
            msg.client_id, session.client_id
        )));
    }
    let Payload::Graph(wire) = msg.payload else {
        unreachable!("decoder yields graph payloads for PromptedGraph")
    };
    let n = wire.features.nrows();
    let edges: Vec<(usize, usize)> = wire
        .edges
        .iter()
        .map(|&(a, b)| (a as usize, b as usize))
        .collect();
    let graph = build_graph((0..n as u64).collect(), &edges, wire.features)?;
    let (h, cache) = gnn_forward(encoder, &graph)?;
    let noisy = laplace_privatize(
        h.as_slice().expect("standard layout"),
        privacy,
        stream_id(&[
            stream::EMBEDDING,
            msg.round as u64,
            msg.client_id as u64,
            session.seq,
        ]),
    )?;
    session.seq += 1;
    session.cache.push_back((graph, cache, msg.round));
    Ok(encode_message(&Message {
        kind: MessageKind::Embedding,
        round: msg.round,
        client_id: msg.client_id,
        payload: Payload::Floats(noisy),
    })?)
}

/// Backpropagates an embedding gradient through the encoder; accumulates the
/// weight gradients and returns the gradient on the prompted features.
pub fn server_backprop_step(
    encoder: &EncoderParams,
    session: &mut ServerSession,
    frame: &[u8],
) -> Result<Vec<u8>, FederationError> {
    let msg = decode_message(frame)?;
    if msg.kind != MessageKind::EmbeddingGrad {
        return Err(FederationError::UnexpectedKind {
            expected: MessageKind::EmbeddingGrad,
            found: msg.kind,
        });
    }
    let (graph, cache, round) = session
        .cache
        .pop_front()
        .ok_or(FederationError::MissingCache {
            client: session.client_id,
        })?;
    if round != msg.round || msg.client_id != session.client_id {
        return Err(FederationError::StaleState(
            "gradient does not match the cached pass".into(),
        ));
    }
    let grad_h = reshape(floats(msg)?, graph.node_count(), "embedding gradient")?;
    let (wgrads, grad_x) = gnn_backward(encoder, &graph, &cache, &grad_h)?;
    if session.track_grads {
        match session.grad_acc.as_mut() {
            None => session.grad_acc = Some(wgrads),
            Some(acc) => acc.iter_mut().zip(&wgrads).for_each(|(a, g)| *a += g),
        }
    }
    session.samples += 1;
    Ok(encode_message(&Message {
        kind: MessageKind::FeatureGrad,
        round,
        client_id: session.client_id,
        payload: Payload::Floats(grad_x.iter().copied().collect()),
    })?)
}
