//! Binary checkpoints: model weights, proxies and the run configuration.
//!
//! Layout: 8 magic bytes, a little-endian `u64` header length, a JSON
//! header, then every parameter as little-endian `f64` (each layer's
//! weights then bias, then each proxy vector).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{Activation, EmbeddingModel, Layer};
use crate::proxies::{AssignmentMode, ProxySet};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"PXDMLCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProxyHeader {
    count: usize,
    dim: usize,
    mode: AssignmentMode,
    label_to_proxy: Option<Vec<usize>>,
    proxy_per_class_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    layers: Vec<LayerShape>,
    embed_dim: usize,
    proxies: Option<ProxyHeader>,
    step: usize,
    seed: u64,
    payload_values: usize,
    payload_checksum: u64,
    config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EmbeddingModel,
    pub proxies: Option<ProxySet>,
    /// Training steps completed when the checkpoint was written.
    pub step: usize,
    pub seed: u64,
    /// The fully materialized run configuration.
    pub config: serde_json::Value,
}

/// FNV-1a over the payload bytes.
fn checksum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut push = |vs: &[f64]| vs.iter().for_each(|v| payload.extend_from_slice(&v.to_le_bytes()));
        for l in self.model.layers() {
            push(&l.weights);
            push(&l.bias);
        }
        if let Some(p) = &self.proxies {
            p.vectors.iter().for_each(|v| push(v));
        }
        let header = Header {
            layers: self
                .model
                .layers()
                .iter()
                .map(|l| LayerShape {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    activation: l.activation,
                })
                .collect(),
            embed_dim: self.model.embed_dim(),
            proxies: self.proxies.as_ref().map(|p| ProxyHeader {
                count: p.len(),
                dim: p.dim(),
                mode: p.mode,
                label_to_proxy: p.label_to_proxy.clone(),
                proxy_per_class_ratio: p.proxy_per_class_ratio,
            }),
            step: self.step,
            seed: self.seed,
            payload_values: payload.len() / 8,
            payload_checksum: checksum(&payload),
            config: self.config.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|h| h.checked_add(16))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file"))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..header_end]).map_err(|e| bad(&format!("unreadable header: {e}")))?;
        let payload = &bytes[header_end..];
        if payload.len() != header.payload_values * 8 {
            return Err(bad("payload length does not match header"));
        }
        if checksum(payload) != header.payload_checksum {
            return Err(bad("payload checksum mismatch"));
        }
        let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = values.by_ref().take(n).collect();
            if v.len() == n {
                Ok(v)
            } else {
                Err(bad("payload shorter than declared shapes"))
            }
        };
        let mut layers = Vec::with_capacity(header.layers.len());
        for s in &header.layers {
            let size = s.inputs.checked_mul(s.outputs).ok_or_else(|| bad("layer shape overflows"))?;
            layers.push(Layer {
                inputs: s.inputs,
                outputs: s.outputs,
                weights: take(size)?,
                bias: take(s.outputs)?,
                activation: s.activation,
            });
        }
        let model = EmbeddingModel::from_layers(layers).map_err(|e| bad(&format!("invalid model: {e}")))?;
        if model.embed_dim() != header.embed_dim {
            return Err(bad("embedding dimension does not match layers"));
        }
        let proxies = match header.proxies {
            None => None,
            Some(p) => {
                let vectors = (0..p.count).map(|_| take(p.dim)).collect::<Result<Vec<_>>>()?;
                let set = ProxySet {
                    vectors,
                    mode: p.mode,
                    label_to_proxy: p.label_to_proxy,
                    proxy_per_class_ratio: p.proxy_per_class_ratio,
                };
                set.validate().map_err(|e| bad(&format!("invalid proxies: {e}")))?;
                Some(set)
            }
        };
        if values.next().is_some() {
            return Err(bad("payload longer than declared shapes"));
        }
        Ok(Checkpoint {
            model,
            proxies,
            step: header.step,
            seed: header.seed,
            config: header.config,
        })
    }

    /// Writes to a temporary sibling and renames, so readers never see a
    /// partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
