//! Binary checkpoint container.
//!
//! Layout: magic `OCAG`, `u32` LE format version, `u64` LE header length, a
//! UTF-8 JSON header, then every tensor listed in the header as consecutive
//! little-endian `f32` values, and a trailing `u32` LE CRC-32 of everything
//! before it.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::layers::Layer;
use super::model::{OcularNet, Precision, Topology};
use super::network::Sequential;
use super::tensor::Tensor;
use super::NnError;

pub const MAGIC: &[u8; 4] = b"OCAG";
pub const FORMAT_VERSION: u32 = 1;

/// Serializable position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: Vec<u8>,
    pub stream: u64,
    /// `u128` word position, decimal.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().to_vec(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, NnError> {
        use rand::SeedableRng;
        let seed: [u8; 32] = self
            .seed
            .as_slice()
            .try_into()
            .map_err(|_| NnError::CorruptCheckpoint("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| NnError::CorruptCheckpoint("bad rng word position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: OcularNet<f32>,
    pub adam: Option<AdamState<f32>>,
    pub epoch: u32,
    pub rng: Option<RngState>,
    /// Free-form training metadata (schedule, loss weights, normalization).
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    topology: Topology,
    precision: Precision,
    epoch: u32,
    adam_step: Option<u64>,
    rng: Option<RngState>,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn new(net: OcularNet<f32>) -> Self {
        Self {
            net,
            adam: None,
            epoch: 0,
            rng: None,
            meta: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, NnError> {
        let mut named: Vec<(String, &Tensor<f32>)> = self.net.named_params();
        named.extend(self.net.named_buffers());
        if let Some(adam) = &self.adam {
            let names: Vec<String> = self.net.named_params().into_iter().map(|(n, _)| n).collect();
            if adam.m.len() != names.len() || adam.v.len() != names.len() {
                return Err(NnError::ShapeMismatch("optimizer state does not match parameters".into()));
            }
            named.extend(names.iter().zip(&adam.m).map(|(n, t)| (format!("adam.m.{n}"), t)));
            named.extend(names.iter().zip(&adam.v).map(|(n, t)| (format!("adam.v.{n}"), t)));
        }
        let header = Header {
            topology: self.net.topology.clone(),
            precision: self.net.precision,
            epoch: self.epoch,
            adam_step: self.adam.as_ref().map(|a| a.step),
            rng: self.rng.clone(),
            meta: self.meta.clone(),
            tensors: named
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| NnError::CorruptCheckpoint(e.to_string()))?;
        let body: usize = named.iter().map(|(_, t)| t.len() * 4).sum();
        let mut out = Vec::with_capacity(16 + json.len() + body + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &named {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let corrupt = |m: &str| NnError::CorruptCheckpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err(corrupt("missing OCAG magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(NnError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (bytes, trailer) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(bytes).to_le_bytes() != trailer {
            return Err(corrupt("checksum mismatch"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body_start = 16usize.checked_add(hlen).ok_or_else(|| corrupt("header length overflow"))?;
        if body_start > bytes.len() {
            return Err(corrupt("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&bytes[16..body_start]).map_err(|e| corrupt(&format!("header: {e}")))?;
        let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>() * 4).sum();
        if bytes.len() - body_start != expected {
            return Err(corrupt(&format!(
                "tensor payload is {} bytes, header declares {expected}",
                bytes.len() - body_start
            )));
        }
        let mut off = body_start;
        let mut tensors = std::collections::HashMap::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let data = bytes[off..off + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            off += 4 * n;
            tensors.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
        }
        let mut take = |name: String| tensors.remove(&name).ok_or_else(|| corrupt(&format!("missing tensor {name}")));

        let topo = header.topology;
        let mut build = |prefix: &str, specs: &[super::layers::LayerSpec]| -> Result<Sequential<f32>, NnError> {
            let mut layers = Vec::with_capacity(specs.len());
            for (i, spec) in specs.iter().enumerate() {
                let params = spec
                    .param_names()
                    .iter()
                    .map(|n| take(format!("{prefix}.{i}.{n}")))
                    .collect::<Result<Vec<_>, _>>()?;
                let buffers = spec
                    .buffer_names()
                    .iter()
                    .map(|n| take(format!("{prefix}.{i}.{n}")))
                    .collect::<Result<Vec<_>, _>>()?;
                layers.push(Layer::with_params(*spec, params, buffers)?);
            }
            Ok(Sequential { layers })
        };
        let parts = [
            build("backbone", &topo.backbone)?,
            build("neck", &topo.neck)?,
            build("cls_head", &topo.cls_head)?,
            build("reg_head", &topo.reg_head)?,
        ];
        let net = OcularNet::from_parts(topo, parts, header.precision)?;
        let adam = match header.adam_step {
            Some(step) => {
                let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
                let m = names.iter().map(|n| take(format!("adam.m.{n}"))).collect::<Result<_, _>>()?;
                let v = names.iter().map(|n| take(format!("adam.v.{n}"))).collect::<Result<_, _>>()?;
                Some(AdamState { step, m, v })
            }
            None => None,
        };
        Ok(Self {
            net,
            adam,
            epoch: header.epoch,
            rng: header.rng,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
