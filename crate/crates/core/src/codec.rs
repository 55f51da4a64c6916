//! Wire format for client/server messages.
//!
//! Every frame is a 16-byte little-endian header followed by the payload:
//!
//! ```text
//! offset  size  field
//! 0       2     magic "FG"
//! 2       1     version (1)
//! 3       1     kind
//! 4       4     round
//! 8       4     client id
//! 12      4     payload length in bytes
//! ```
//!
//! Graph payloads are `node_count u32, edge_count u32`, then `edge_count`
//! pairs of `u32` node indices, then the row-major `f32` feature matrix (its
//! width is implied by the remaining length). All other kinds carry a flat
//! `f32` array whose shape both ends already know.

use ndarray::Array2;
use thiserror::Error;

pub const MAGIC: [u8; 2] = *b"FG";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported wire version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("frame shorter than its declared length")]
    TruncatedPayload,
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("payload does not match message kind {0:?}")]
    KindMismatch(MessageKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    PromptedGraph = 1,
    Embedding = 2,
    EmbeddingGrad = 3,
    FeatureGrad = 4,
    ParamUpload = 5,
    ParamUpdate = 6,
}

impl MessageKind {
    pub const ALL: [MessageKind; 6] = [
        MessageKind::PromptedGraph,
        MessageKind::Embedding,
        MessageKind::EmbeddingGrad,
        MessageKind::FeatureGrad,
        MessageKind::ParamUpload,
        MessageKind::ParamUpdate,
    ];

    fn from_u8(b: u8) -> Result<Self, CodecError> {
        MessageKind::ALL
            .into_iter()
            .find(|k| *k as u8 == b)
            .ok_or(CodecError::UnknownKind(b))
    }

    /// Client → server kinds.
    pub fn is_upstream(self) -> bool {
        matches!(
            self,
            MessageKind::PromptedGraph | MessageKind::EmbeddingGrad | MessageKind::ParamUpload
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::PromptedGraph => "prompted_graph",
            MessageKind::Embedding => "embedding",
            MessageKind::EmbeddingGrad => "embedding_grad",
            MessageKind::FeatureGrad => "feature_grad",
            MessageKind::ParamUpload => "param_upload",
            MessageKind::ParamUpdate => "param_update",
        }
    }
}

/// A graph as it travels on the wire: no node ids, `f32` features.
#[derive(Debug, Clone, PartialEq)]
pub struct WireGraph {
    pub edges: Vec<(u32, u32)>,
    pub features: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Graph(WireGraph),
    Floats(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub kind: MessageKind,
    pub round: u32,
    pub client_id: u32,
    pub payload: Payload,
}

/// Rounds a value to what survives the `f32` wire encoding.
pub fn wire_round(x: f64) -> f64 {
    x as f32 as f64
}

pub fn encode_message(msg: &Message) -> Result<Vec<u8>, CodecError> {
    let mut body = Vec::new();
    match (&msg.payload, msg.kind) {
        (Payload::Graph(g), MessageKind::PromptedGraph) => {
            let n = g.features.nrows();
            body.reserve(8 + 8 * g.edges.len() + 4 * g.features.len());
            body.extend_from_slice(&(n as u32).to_le_bytes());
            body.extend_from_slice(&(g.edges.len() as u32).to_le_bytes());
            for &(a, b) in &g.edges {
                if a as usize >= n || b as usize >= n {
                    return Err(CodecError::Malformed(format!(
                        "edge ({a}, {b}) out of range"
                    )));
                }
                body.extend_from_slice(&a.to_le_bytes());
                body.extend_from_slice(&b.to_le_bytes());
            }
            for &x in g.features.iter() {
                body.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        (Payload::Floats(v), kind) if kind != MessageKind::PromptedGraph => {
            body.reserve(4 * v.len());
            for &x in v {
                body.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        (_, kind) => return Err(CodecError::KindMismatch(kind)),
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.kind as u8);
    out.extend_from_slice(&msg.round.to_le_bytes());
    out.extend_from_slice(&msg.client_id.to_le_bytes());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().expect("4 bytes"))
}

fn f32s(b: &[u8]) -> Result<Vec<f64>, CodecError> {
    if b.len() % 4 != 0 {
        return Err(CodecError::Malformed(
            "float payload not a multiple of 4 bytes".into(),
        ));
    }
    Ok(b.chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect())
}

pub fn decode_message(bytes: &[u8]) -> Result<Message, CodecError> {
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::TruncatedPayload);
    }
    if bytes[0..2] != MAGIC {
        return Err(CodecError::BadMagic);
    }
    if bytes[2] != VERSION {
        return Err(CodecError::UnsupportedVersion(bytes[2]));
    }
    let kind = MessageKind::from_u8(bytes[3])?;
    let round = u32_at(bytes, 4);
    let client_id = u32_at(bytes, 8);
    let len = u32_at(bytes, 12) as usize;
    if bytes.len() < HEADER_LEN + len {
        return Err(CodecError::TruncatedPayload);
    }
    if bytes.len() > HEADER_LEN + len {
        return Err(CodecError::Malformed("trailing bytes after payload".into()));
    }
    let body = &bytes[HEADER_LEN..];
    let payload = if kind == MessageKind::PromptedGraph {
        if body.len() < 8 {
            return Err(CodecError::TruncatedPayload);
        }
        let n = u32_at(body, 0) as usize;
        let m = u32_at(body, 4) as usize;
        let edge_end = 8 + 8 * m;
        if body.len() < edge_end {
            return Err(CodecError::TruncatedPayload);
        }
        let mut edges = Vec::with_capacity(m);
        for e in 0..m {
            let a = u32_at(body, 8 + 8 * e);
            let b = u32_at(body, 12 + 8 * e);
            if a as usize >= n || b as usize >= n {
                return Err(CodecError::Malformed(format!(
                    "edge ({a}, {b}) out of range"
                )));
            }
            edges.push((a, b));
        }
        let feats = f32s(&body[edge_end..])?;
        let dim = match (n, feats.len()) {
            (0, 0) => 0,
            (0, _) => return Err(CodecError::Malformed("features for an empty graph".into())),
            (n, l) if l % n == 0 => l / n,
            _ => {
                return Err(CodecError::Malformed(
                    "feature block not divisible by node count".into(),
                ))
            }
        };
        let features = Array2::from_shape_vec((n, dim), feats)
            .map_err(|e| CodecError::Malformed(e.to_string()))?;
        Payload::Graph(WireGraph { edges, features })
    } else {
        Payload::Floats(f32s(body)?)
    };
    Ok(Message {
        kind,
        round,
        client_id,
        payload,
    })
}
