//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   8 bytes   magic "WMKCKPT1"
//! offset 8   u32       format version (currently 1)
//! offset 12  u32       header length H
//! offset 16  H bytes   UTF-8 JSON header: input shape, layer specs, seeds,
//!                      embed metadata (key seed, payload, decoder, message),
//!                      generator id, velocity flag
//! then, for every trainable layer in stack order:
//!            weights   shape.count() f64 values (row-major (i,j,k,h))
//!            bias      one f64 per output channel
//! then, if the header's has_velocity flag is set, the optimizer's momentum
//! buffers in the identical layout. The file ends exactly there.
//! ```
//!
//! The header stores the key *seed*, never the key matrix, so a checkpoint
//! is only readable by builds whose generator matches the recorded id —
//! load refuses otherwise rather than silently extracting garbage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::key::ProjectionKey;
use crate::message::WatermarkMessage;
use crate::nn::layer::LayerSpec;
use crate::nn::network::{LayerParams, Network};
use crate::nn::train::{EmbedSpec, SgdState};
use crate::regularizer::DecoderKind;
use crate::rng::GENERATOR_ID;
use crate::tensor::WeightTensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WMKCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to re-extract a watermark from the checkpoint alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedMeta {
    pub layer: String,
    pub key_seed: u64,
    pub payload: usize,
    pub decoder: DecoderKind,
    /// The embedded message as a "0101…" string.
    pub message: String,
}

impl EmbedMeta {
    pub fn from_spec(spec: &EmbedSpec) -> Self {
        EmbedMeta {
            layer: spec.layer_id.clone(),
            key_seed: spec.key.seed(),
            payload: spec.message.len(),
            decoder: spec.decoder,
            message: spec.message.to_bit_string(),
        }
    }

    /// Rebuild the full spec against a network (regenerates the key).
    pub fn to_spec(&self, net: &Network) -> Result<EmbedSpec> {
        let idx = net.layer_index(&self.layer)?;
        let params = net.layer_params(idx).ok_or_else(|| {
            Error::InvalidEmbedSpec(format!("layer `{}` has no weights", self.layer))
        })?;
        let v = params.weights.shape().host_len();
        Ok(EmbedSpec {
            layer_id: self.layer.clone(),
            key: ProjectionKey::generate(self.key_seed, self.payload, v),
            message: WatermarkMessage::parse(&self.message)?,
            decoder: self.decoder,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Pseudorandom generator id the seeds refer to.
    pub generator: String,
    #[serde(default)]
    pub data_seed: Option<u64>,
    #[serde(default)]
    pub train_seed: Option<u64>,
    #[serde(default)]
    pub epochs_trained: usize,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub embeds: Vec<EmbedMeta>,
}

impl CheckpointMeta {
    pub fn new() -> Self {
        CheckpointMeta {
            generator: GENERATOR_ID.to_string(),
            data_seed: None,
            train_seed: None,
            epochs_trained: 0,
            lambda: 0.0,
            embeds: Vec::new(),
        }
    }
}

impl Default for CheckpointMeta {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    input: [usize; 3],
    init_seed: u64,
    layers: Vec<LayerSpec>,
    meta: CheckpointMeta,
    has_velocity: bool,
}

pub struct Checkpoint {
    pub network: Network,
    pub velocity: Option<SgdState>,
    pub meta: CheckpointMeta,
}

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save(
    path: &Path,
    net: &Network,
    velocity: Option<&SgdState>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let header = Header {
        input: {
            let (h, w, c) = net.input_shape();
            [h, w, c]
        },
        init_seed: net.init_seed(),
        layers: net.specs().to_vec(),
        meta: meta.clone(),
        has_velocity: velocity.is_some(),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut buf = Vec::with_capacity(16 + header_json.len() + net.param_count() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for idx in net.trainable_indices() {
        let p = net.layer_params(idx).unwrap();
        push_f64s(&mut buf, p.weights.values());
        push_f64s(&mut buf, &p.bias);
    }
    if let Some(state) = velocity {
        for idx in net.trainable_indices() {
            let (vw, vb) = state.velocity[idx].as_ref().ok_or_else(|| {
                Error::Format("velocity buffers do not match the network".into())
            })?;
            let p = net.layer_params(idx).unwrap();
            if vw.len() != p.weights.values().len() || vb.len() != p.bias.len() {
                return Err(Error::Format(
                    "velocity buffers do not match the network".into(),
                ));
            }
            push_f64s(&mut buf, vw);
            push_f64s(&mut buf, vb);
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let data = std::fs::read(path)?;
    let mut cur = Cursor { data: &data, pos: 0 };

    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let header_len = cur.u32()? as usize;
    let header: Header = serde_json::from_slice(cur.take(header_len)?)?;
    if header.meta.generator != GENERATOR_ID {
        return Err(Error::Format(format!(
            "checkpoint was written with generator `{}`, this build uses `{}`",
            header.meta.generator, GENERATOR_ID
        )));
    }

    let mut parts = Vec::new();
    for spec in &header.layers {
        if let Some(shape) = spec.weight_shape() {
            let weights = cur.f64s(shape.count())?;
            let bias = cur.f64s(spec.bias_len().unwrap())?;
            parts.push(LayerParams {
                weights: WeightTensor::new(shape, weights),
                bias,
            });
        }
    }
    let network = Network::from_parts(
        (header.input[0], header.input[1], header.input[2]),
        header.layers.clone(),
        parts,
        header.init_seed,
    )?;

    let velocity = if header.has_velocity {
        let mut state = SgdState::zeros(&network);
        for idx in network.trainable_indices() {
            let p = network.layer_params(idx).unwrap();
            let vw = cur.f64s(p.weights.values().len())?;
            let vb = cur.f64s(p.bias.len())?;
            state.velocity[idx] = Some((vw, vb));
        }
        Some(state)
    } else {
        None
    };

    if cur.pos != data.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint payload",
            data.len() - cur.pos
        )));
    }
    Ok(Checkpoint {
        network,
        velocity,
        meta: header.meta,
    })
}
