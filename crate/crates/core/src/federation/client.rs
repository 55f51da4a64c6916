use std::collections::VecDeque;

use ndarray::{Array1, Array2};

use super::{stream, FederationError};
use crate::codec::{decode_message, encode_message, Message, MessageKind, Payload, WireGraph};
use crate::encoder::{
    head_backward, head_forward, loss_and_grad, readout_backward, sgd_step, HeadParams, ParamVector,
};
use crate::graph::readout;
use crate::privacy::{laplace_privatize, stream_id, PrivacyConfig};
use crate::prompt::{ClientPrompt, PromptTrace};
use crate::tasks::{Sample, TaskLevel};

/// Client-side prompt state for a sample whose pass is in flight.
#[derive(Debug, Clone)]
struct Pending {
    round: u32,
    label: usize,
    trace: PromptTrace,
    graded: bool,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: u32,
    pub level: TaskLevel,
    pub prompt: ClientPrompt,
    pub head: HeadParams,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pending: VecDeque<Pending>,
}

/// What the client learns from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStepStats {
    pub loss: f64,
    pub correct: bool,
    /// Mean-pooled embedding of the prompted graph.
    pub pooled: Array1<f64>,
}

impl ClientState {
    pub fn new(
        id: u32,
        level: TaskLevel,
        prompt: ClientPrompt,
        head: HeadParams,
        train: Vec<Sample>,
        test: Vec<Sample>,
    ) -> Result<Self, FederationError> {
        if let Some(s) = train.iter().chain(&test).find(|s| s.level != level) {
            return Err(FederationError::StaleState(format!(
                "client {id} is {level} but holds a {} sample",
                s.level
            )));
        }
        Ok(ClientState {
            id,
            level,
            prompt,
            head,
            train,
            test,
            pending: VecDeque::new(),
        })
    }

    /// `θ = (prompt block, head)`.
    pub fn params(&self) -> ParamVector {
        ParamVector::flatten(&self.prompt.to_block(), &self.head)
    }

    pub fn load_params(&mut self, p: &ParamVector) -> Result<(), FederationError> {
        let mine = self.params();
        if p.layout != mine.layout {
            return Err(FederationError::StaleState(
                "parameter layout mismatch".into(),
            ));
        }
        self.prompt.load_block(p.prompt())?;
        self.head = p.head();
        Ok(())
    }

    /// Number of samples whose split pass has not finished.
    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }
}

fn expect_kind(msg: &Message, kind: MessageKind) -> Result<(), FederationError> {
    if msg.kind != kind {
        return Err(FederationError::UnexpectedKind {
            expected: kind,
            found: msg.kind,
        });
    }
    Ok(())
}

pub(crate) fn floats(msg: Message) -> Result<Vec<f64>, FederationError> {
    match msg.payload {
        Payload::Floats(v) => Ok(v),
        Payload::Graph(_) => Err(crate::codec::CodecError::KindMismatch(msg.kind).into()),
    }
}

pub(crate) fn reshape(
    values: Vec<f64>,
    rows: usize,
    what: &str,
) -> Result<Array2<f64>, FederationError> {
    if rows == 0 || values.len() % rows != 0 {
        return Err(FederationError::StaleState(format!(
            "{what} payload of {} values does not fit {rows} rows",
            values.len()
        )));
    }
    let cols = values.len() / rows;
    Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| FederationError::StaleState(e.to_string()))
}

/// Prompts training sample `sample`, privatizes its features and frames it.
pub fn client_prompt_step(
    client: &mut ClientState,
    sample: usize,
    round: u32,
    seq: u64,
    privacy: &PrivacyConfig,
) -> Result<Vec<u8>, FederationError> {
    let s = client.train.get(sample).ok_or_else(|| {
        FederationError::StaleState(format!("client {} has no sample {sample}", client.id))
    })?;
    let (prompted, trace) = client.prompt.forward(&s.graph)?;
    let feats = prompted.features();
    let noisy = laplace_privatize(
        feats.as_slice().expect("standard layout"),
        privacy,
        stream_id(&[stream::FEATURES, round as u64, client.id as u64, seq]),
    )?;
    let wire = WireGraph {
        edges: prompted
            .edges()
            .iter()
            .map(|&(a, b)| (a as u32, b as u32))
            .collect(),
        features: Array2::from_shape_vec(feats.dim(), noisy).expect("same shape"),
    };
    let frame = encode_message(&Message {
        kind: MessageKind::PromptedGraph,
        round,
        client_id: client.id,
        payload: Payload::Graph(wire),
    })?;
    client.pending.push_back(Pending {
        round,
        label: s.label,
        trace,
        graded: false,
    });
    Ok(frame)
}

/// Loss, local head update, and the privatized gradient on the embeddings.
///
/// The emitted gradient is taken through the head as it was before the update.
pub fn client_grad_step(
    client: &mut ClientState,
    frame: &[u8],
    lr: f64,
    seq: u64,
    privacy: &PrivacyConfig,
) -> Result<(GradStepStats, Vec<u8>), FederationError> {
    let msg = decode_message(frame)?;
    expect_kind(&msg, MessageKind::Embedding)?;
    let round = msg.round;
    if msg.client_id != client.id {
        return Err(FederationError::StaleState(format!(
            "embedding for client {} delivered to {}",
            msg.client_id, client.id
        )));
    }
    let pending = client
        .pending
        .iter_mut()
        .find(|p| !p.graded)
        .ok_or_else(|| {
            FederationError::StaleState("no prompted sample awaits an embedding".into())
        })?;
    if pending.round != round {
        return Err(FederationError::StaleState(format!(
            "embedding from round {round} for a round {} sample",
            pending.round
        )));
    }
    let h = reshape(floats(msg)?, pending.trace.prompted_nodes(), "embedding")?;
    let pooled = readout(&h)?;
    let logits = head_forward(&client.head, &pooled)?;
    let (loss, g) = loss_and_grad(&logits, pending.label)?;
    let pred = logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &z)| {
            if z > best.1 {
                (i, z)
            } else {
                best
            }
        })
        .0;
    let (gw, grad_pooled) = head_backward(&client.head, &pooled, &g);
    let grad_h = readout_backward(&grad_pooled, h.nrows());
    let updated = sgd_step(
        &ParamVector::flatten(&[], &client.head),
        &ParamVector::flatten(&[], &HeadParams { weight: gw }),
        lr,
    )?;
    client.head = updated.head();
    pending.graded = true;
    let stats = GradStepStats {
        loss,
        correct: pred == pending.label,
        pooled,
    };
    let noisy = laplace_privatize(
        grad_h.as_slice().expect("standard layout"),
        privacy,
        stream_id(&[stream::EMBEDDING_GRAD, round as u64, client.id as u64, seq]),
    )?;
    let out = encode_message(&Message {
        kind: MessageKind::EmbeddingGrad,
        round,
        client_id: client.id,
        payload: Payload::Floats(noisy),
    })?;
    Ok((stats, out))
}

/// Applies the feature gradient returned by the server to the prompt.
pub fn client_prompt_update(
    client: &mut ClientState,
    frame: &[u8],
    lr: f64,
) -> Result<(), FederationError> {
    let msg = decode_message(frame)?;
    expect_kind(&msg, MessageKind::FeatureGrad)?;
    match client.pending.front() {
        Some(p) if p.graded && p.round == msg.round => {}
        _ => {
            return Err(FederationError::StaleState(
                "feature gradient without a matching graded sample".into(),
            ))
        }
    }
    let pending = client.pending.pop_front().expect("checked above");
    let grad = reshape(
        floats(msg)?,
        pending.trace.prompted_nodes(),
        "feature gradient",
    )?;
    let g = client.prompt.backward(&pending.trace, &grad)?;
    let block: Vec<f64> = client
        .prompt
        .to_block()
        .iter()
        .zip(&g)
        .map(|(p, g)| p - lr * g)
        .collect();
    client.prompt.load_block(&block)?;
    Ok(())
}
