//! Split client/server training over a byte-accounted in-memory transport.
//!
//! Per sample, one pass exchanges four frames:
//!
//! ```text
//! client ── PromptedGraph ─▶ server      (DP on features)
//! client ◀── Embedding ───── server      (DP on embeddings)
//! client ── EmbeddingGrad ─▶ server      (DP on gradients)
//! client ◀── FeatureGrad ─── server
//! ```
//!
//! At the end of each round clients upload their parameters, the server
//! aggregates and answers with a `ParamUpdate` delta, and the accumulated
//! encoder gradient is applied.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::codec::{CodecError, MessageKind, HEADER_LEN};
use crate::config::ConfigError;
use crate::encoder::EncoderError;
use crate::graph::GraphError;
use crate::hidta::HidtaError;
use crate::metrics::MetricError;
use crate::privacy::PrivacyError;
use crate::tasks::TaskError;
use crate::vpg::VpgError;

mod client;
mod server;
mod training;

pub use client::{
    client_grad_step, client_prompt_step, client_prompt_update, ClientState, GradStepStats,
};
pub use server::{server_backprop_step, server_embed_step, ServerSession, ServerState};
pub use training::{
    build_experiment, evaluate_client, fedavg_aggregate, load_raw, rounds_csv, run_round,
    run_training, run_training_in, task_partitions, tau_csv, ClientRoundLog, Experiment,
    ExperimentReport, RoundLog, RoundSummary,
};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Vpg(#[from] VpgError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Hidta(#[from] HidtaError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("expected a {expected:?} message, got {found:?}")]
    UnexpectedKind {
        expected: MessageKind,
        found: MessageKind,
    },
    #[error("client state does not match the incoming message: {0}")]
    StaleState(String),
    #[error("no cached activations for client {client}")]
    MissingCache { client: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot serialize report: {0}")]
    Json(#[from] serde_json::Error),
}

/// Bytes moved per message kind, split by direction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ByteLog {
    pub by_kind: BTreeMap<MessageKind, u64>,
    pub frames: BTreeMap<MessageKind, u64>,
}

impl ByteLog {
    pub fn record(&mut self, kind: MessageKind, len: usize) {
        *self.by_kind.entry(kind).or_default() += len as u64;
        *self.frames.entry(kind).or_default() += 1;
    }

    pub fn up(&self) -> u64 {
        self.by_kind
            .iter()
            .filter(|(k, _)| k.is_upstream())
            .map(|(_, b)| b)
            .sum()
    }

    pub fn down(&self) -> u64 {
        self.by_kind
            .iter()
            .filter(|(k, _)| !k.is_upstream())
            .map(|(_, b)| b)
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.by_kind.values().sum()
    }

    pub fn merge(&mut self, other: &ByteLog) {
        for (k, b) in &other.by_kind {
            *self.by_kind.entry(*k).or_default() += b;
        }
        for (k, n) in &other.frames {
            *self.frames.entry(*k).or_default() += n;
        }
    }
}

/// In-memory link: every frame is measured before the receiver sees it.
#[derive(Debug, Clone, Default)]
pub struct Transport {
    pub log: ByteLog,
}

impl Transport {
    pub fn deliver(&mut self, frame: Vec<u8>) -> Result<Vec<u8>, FederationError> {
        if frame.len() < HEADER_LEN {
            return Err(CodecError::TruncatedPayload.into());
        }
        let kind = MessageKind::ALL
            .into_iter()
            .find(|k| *k as u8 == frame[3])
            .ok_or(CodecError::UnknownKind(frame[3]))?;
        self.log.record(kind, frame.len());
        Ok(frame)
    }
}

/// Stream tags for the privacy mechanism.
pub(crate) mod stream {
    pub const FEATURES: u64 = 1;
    pub const EMBEDDING: u64 = 2;
    pub const EMBEDDING_GRAD: u64 = 3;
    pub const PARAMS: u64 = 5;
    pub const EVAL_FEATURES: u64 = 11;
    pub const EVAL_EMBEDDING: u64 = 12;
}
