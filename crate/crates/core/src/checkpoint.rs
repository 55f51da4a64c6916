//! Parameter checkpoints: one text header line, then little-endian `f64` data.
//!
//! ```text
//! fedgpl-checkpoint 1 round=<r> act=<tanh|linear> enc=<rows>x<cols>,... clients=<n> layout=<prompt>+<rows>x<cols>
//! <encoder weights, row-major, layer by layer><client parameter vectors, in id order>
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::encoder::{Activation, EncoderParams, ParamLayout, ParamVector};

const MAGIC: &str = "fedgpl-checkpoint 1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint data has {found} bytes, header implies {expected}")]
    Length { expected: usize, found: usize },
    #[error("client parameter vectors have different layouts")]
    MixedLayouts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub round: u32,
    pub encoder: EncoderParams,
    pub clients: Vec<ParamVector>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>, CheckpointError> {
    let layout = ck.clients.first().map(|p| p.layout).unwrap_or(ParamLayout {
        prompt_len: 0,
        head_rows: 0,
        head_cols: 0,
    });
    if ck
        .clients
        .iter()
        .any(|p| p.layout != layout || p.values.len() != layout.len())
    {
        return Err(CheckpointError::MixedLayouts);
    }
    let enc: Vec<String> = ck
        .encoder
        .weights
        .iter()
        .map(|w| format!("{}x{}", w.nrows(), w.ncols()))
        .collect();
    let act = match ck.encoder.activation {
        Activation::Tanh => "tanh",
        Activation::Linear => "linear",
    };
    let header = format!(
        "{MAGIC} round={} act={act} enc={} clients={} layout={}+{}x{}\n",
        ck.round,
        enc.join(","),
        ck.clients.len(),
        layout.prompt_len,
        layout.head_rows,
        layout.head_cols
    );
    let mut out = header.into_bytes();
    let values = ck
        .encoder
        .weights
        .iter()
        .flat_map(|w| w.iter().copied())
        .chain(ck.clients.iter().flat_map(|p| p.values.iter().copied()));
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn dims(s: &str) -> Result<(usize, usize), CheckpointError> {
    let (r, c) = s
        .split_once('x')
        .ok_or_else(|| CheckpointError::Header(format!("bad shape {s:?}")))?;
    let p = |t: &str| {
        t.parse::<usize>()
            .map_err(|_| CheckpointError::Header(format!("bad shape {s:?}")))
    };
    Ok((p(r)?, p(c)?))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CheckpointError::Header("no header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| CheckpointError::Header("not utf-8".into()))?;
    let rest = header
        .strip_prefix(MAGIC)
        .ok_or_else(|| CheckpointError::Header("missing magic".into()))?;
    let mut round = None;
    let mut act = None;
    let mut enc = None;
    let mut n_clients = None;
    let mut layout = None;
    for field in rest.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| CheckpointError::Header(format!("bad field {field:?}")))?;
        match k {
            "round" => round = v.parse::<u32>().ok(),
            "act" => {
                act = match v {
                    "tanh" => Some(Activation::Tanh),
                    "linear" => Some(Activation::Linear),
                    _ => None,
                }
            }
            "enc" => enc = Some(v.split(',').map(dims).collect::<Result<Vec<_>, _>>()?),
            "clients" => n_clients = v.parse::<usize>().ok(),
            "layout" => {
                let (p, h) = v
                    .split_once('+')
                    .ok_or_else(|| CheckpointError::Header(format!("bad layout {v:?}")))?;
                let (head_rows, head_cols) = dims(h)?;
                layout = Some(ParamLayout {
                    prompt_len: p
                        .parse()
                        .map_err(|_| CheckpointError::Header(format!("bad layout {v:?}")))?,
                    head_rows,
                    head_cols,
                });
            }
            _ => return Err(CheckpointError::Header(format!("unknown field {k:?}"))),
        }
    }
    let missing = |name: &str| CheckpointError::Header(format!("missing {name}"));
    let (round, act, enc, n_clients, layout) = (
        round.ok_or_else(|| missing("round"))?,
        act.ok_or_else(|| missing("act"))?,
        enc.ok_or_else(|| missing("enc"))?,
        n_clients.ok_or_else(|| missing("clients"))?,
        layout.ok_or_else(|| missing("layout"))?,
    );
    let data = &bytes[nl + 1..];
    let expected = 8 * (enc.iter().map(|(r, c)| r * c).sum::<usize>() + n_clients * layout.len());
    if data.len() != expected {
        return Err(CheckpointError::Length {
            expected,
            found: data.len(),
        });
    }
    let mut vals = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let weights = enc
        .iter()
        .map(|&(r, c)| {
            Array2::from_shape_vec((r, c), vals.by_ref().take(r * c).collect()).expect("sized")
        })
        .collect();
    let clients = (0..n_clients)
        .map(|_| ParamVector {
            values: vals.by_ref().take(layout.len()).collect(),
            layout,
        })
        .collect();
    Ok(Checkpoint {
        round,
        encoder: EncoderParams {
            weights,
            activation: act,
        },
        clients,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    fs::write(path, encode_checkpoint(ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::HeadParams;

    #[test]
    fn round_trip_is_exact() {
        let encoder = EncoderParams::glorot(3, 4, 2, 9);
        let head = HeadParams::glorot(4, 2, 1);
        let ck = Checkpoint {
            round: 7,
            encoder,
            clients: vec![
                ParamVector::flatten(&[0.1, -0.2, 1e-300], &head),
                ParamVector::flatten(&[f64::MAX, 0.0, -0.0], &head),
            ],
        };
        let bytes = encode_checkpoint(&ck).unwrap();
        assert_eq!(decode_checkpoint(&bytes).unwrap(), ck);
    }

    #[test]
    fn truncated_data_is_rejected() {
        let ck = Checkpoint {
            round: 1,
            encoder: EncoderParams::glorot(2, 2, 1, 0),
            clients: vec![],
        };
        let bytes = encode_checkpoint(&ck).unwrap();
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Length { .. })
        ));
        assert!(matches!(
            decode_checkpoint(b"garbage\n"),
            Err(CheckpointError::Header(_))
        ));
    }
}
