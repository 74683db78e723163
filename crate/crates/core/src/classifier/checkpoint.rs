//! Checkpoint files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SCK1"
//! 4       4     u32 LE: header length N
//! 8       N     UTF-8 JSON header (arch, epoch, metrics, seed, tensor list)
//! 8+N     ...   f32 LE tensor data, tensors in header order, row-major
//! ```
//!
//! Tensor order: fwd.w_ih, fwd.w_hh, fwd.bias, bwd.w_ih, bwd.w_hh, bwd.bias,
//! mlp.w1, mlp.b1, mlp.w2, mlp.b2. Gate blocks inside the LSTM tensors are
//! stacked input, forget, cell, output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ClassifierArch, ClassifierParams, TensorSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SCK1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: ClassifierArch,
    /// Epoch the weights come from; 0 means untrained initialization.
    pub epoch: usize,
    pub metrics: CheckpointMetrics,
    pub seed: u64,
    /// Frame hop of the embeddings the model was trained on, if known.
    #[serde(default)]
    pub frame_hop_s: Option<f64>,
    pub tensors: Vec<TensorSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ClassifierParams,
}

impl Checkpoint {
    pub fn new(
        params: ClassifierParams,
        epoch: usize,
        metrics: CheckpointMetrics,
        seed: u64,
        frame_hop_s: Option<f64>,
    ) -> Self {
        let header = CheckpointHeader {
            arch: params.arch.clone(),
            epoch,
            metrics,
            seed,
            frame_hop_s,
            tensors: ClassifierParams::specs(&params.arch),
        };
        Self { header, params }
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&ck.header)?;
    let mut out = Vec::with_capacity(8 + header.len() + 4 * ck.params.n_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in ck.params.tensors() {
        for &x in t {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_bytes = bytes
        .get(8..8 + n)
        .ok_or_else(|| Error::Format("checkpoint header truncated".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    header
        .arch
        .validate()
        .map_err(|e| Error::Format(format!("checkpoint arch: {e}")))?;
    if header.arch.input_dim == 0 {
        return Err(Error::Format("checkpoint arch has input_dim 0".into()));
    }
    let expected = ClassifierParams::specs(&header.arch);
    if expected != header.tensors {
        return Err(Error::Format("checkpoint tensor list does not match its arch".into()));
    }
    let mut params = ClassifierParams::zeros(&header.arch);
    let payload = &bytes[8 + n..];
    if payload.len() != 4 * params.n_params() {
        return Err(Error::Format(format!(
            "checkpoint payload is {} bytes, expected {}",
            payload.len(),
            4 * params.n_params()
        )));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    for t in params.tensors_mut() {
        t.iter_mut().for_each(|x| *x = values.next().unwrap());
    }
    if !params.is_finite() {
        return Err(Error::Format("checkpoint contains non-finite weights".into()));
    }
    Ok(Checkpoint { header, params })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ck)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| e.context(path.display().to_string()))
}
