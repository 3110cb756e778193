//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DMSR" | u32 version | u64 header length | JSON header | f32 blobs
//! ```
//!
//! The header carries the model config, a manifest of `(name, shape, byte
//! offset, element count)` entries into the blob section, the optional
//! optimizer hyper-parameters, the sampler RNG state and training metadata.
//! Adam moments are stored as ordinary blobs named `adam.m.<param>` and
//! `adam.v.<param>`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{layers, ModelConfig, Network, ParamStore};
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"DMSR";
pub const VERSION: u32 = 1;

const FIRST_MOMENT: &str = "adam.m.";
const SECOND_MOMENT: &str = "adam.v.";

/// Position of the patch sampler: every sample index owns its own stream, so
/// the seed and the next index are enough to resume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_sample: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iteration: u64,
    /// Most recent training losses, oldest first.
    pub loss_tail: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub optimizer: Option<AdamState<f32>>,
    pub rng: Option<RngState>,
    pub meta: TrainingMeta,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: [usize; 4],
    /// Byte offset into the blob section.
    offset: u64,
    /// Number of f32 values.
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    tensors: Vec<ManifestEntry>,
    optimizer: Option<OptimizerHeader>,
    rng: Option<RngState>,
    meta: TrainingMeta,
}

impl Checkpoint {
    pub fn from_network(network: Network<f32>) -> Self {
        Checkpoint {
            network,
            optimizer: None,
            rng: None,
            meta: TrainingMeta::default(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: Vec<(String, &Tensor<f32>)> = self
            .network
            .params()
            .iter()
            .map(|(k, v)| (k.clone(), v))
            .collect();
        let optimizer = self.optimizer.as_ref().map(|opt| {
            for (k, v) in &opt.first {
                tensors.push((format!("{FIRST_MOMENT}{k}"), v));
            }
            for (k, v) in &opt.second {
                tensors.push((format!("{SECOND_MOMENT}{k}"), v));
            }
            OptimizerHeader {
                step: opt.step,
                beta1: opt.beta1,
                beta2: opt.beta2,
                eps: opt.eps,
            }
        });
        let mut offset = 0u64;
        let manifest = tensors
            .iter()
            .map(|(name, t)| {
                let e = ManifestEntry {
                    name: name.clone(),
                    shape: t.shape().dims(),
                    offset,
                    len: t.numel() as u64,
                };
                offset += 4 * t.numel() as u64;
                e
            })
            .collect();
        let header = Header {
            config: self.network.config().clone(),
            tensors: manifest,
            optimizer,
            rng: self.rng,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a DMSR checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}, expected {VERSION}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let blob_start = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad(format!("header length {header_len} exceeds file size {}", bytes.len())))?;
        let header: Header = serde_json::from_slice(&bytes[16..blob_start])
            .map_err(|e| bad(format!("malformed header: {e}")))?;
        let blobs = &bytes[blob_start..];

        let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let numel = Shape::from(e.shape).numel() as u64;
            if numel != e.len {
                return Err(bad(format!("{}: shape {:?} holds {numel} values, manifest says {}", e.name, e.shape, e.len)));
            }
            let end = e.offset.checked_add(4 * e.len);
            match end {
                Some(end) if end <= blobs.len() as u64 => spans.push((e.offset, end, &e.name)),
                _ => {
                    return Err(bad(format!(
                        "{}: span at offset {} of {} bytes is out of bounds (blob section is {} bytes)",
                        e.name,
                        e.offset,
                        4 * e.len,
                        blobs.len()
                    )))
                }
            }
        }
        spans.sort_unstable();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(bad(format!("{} overlaps {}", w[1].2, w[0].2)));
            }
        }
        let expected: u64 = header.tensors.iter().map(|e| 4 * e.len).sum();
        if expected != blobs.len() as u64 {
            return Err(bad(format!(
                "blob section is {} bytes, manifest accounts for {expected}",
                blobs.len()
            )));
        }

        let mut params = ParamStore::new();
        let mut first = ParamStore::new();
        let mut second = ParamStore::new();
        for e in header.tensors {
            let raw = &blobs[e.offset as usize..(e.offset + 4 * e.len) as usize];
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::from_vec(e.shape, data)?;
            if let Some(name) = e.name.strip_prefix(FIRST_MOMENT) {
                first.insert(name.to_string(), t);
            } else if let Some(name) = e.name.strip_prefix(SECOND_MOMENT) {
                second.insert(name.to_string(), t);
            } else {
                params.insert(e.name, t);
            }
        }
        let expected_params = layers(&header.config).iter().map(|l| l.params().len()).sum::<usize>();
        if params.len() != expected_params {
            return Err(bad(format!(
                "config implies {expected_params} parameter tensors, manifest has {}",
                params.len()
            )));
        }
        let network = Network::from_params(header.config, params)?;
        let optimizer = match header.optimizer {
            Some(h) => {
                for (store, kind) in [(&first, "first"), (&second, "second")] {
                    for (name, t) in network.params() {
                        match store.get(name) {
                            Some(m) if m.shape() == t.shape() => {}
                            _ => return Err(bad(format!("{kind} moment of {name} missing or misshapen"))),
                        }
                    }
                    if store.len() != network.params().len() {
                        return Err(bad(format!("{kind} moments do not match the parameters")));
                    }
                }
                // Align moment order with the parameter order.
                let order = |s: &ParamStore<f32>| -> ParamStore<f32> {
                    network.params().keys().map(|k| (k.clone(), s[k].clone())).collect()
                };
                Some(AdamState {
                    beta1: h.beta1,
                    beta2: h.beta2,
                    eps: h.eps,
                    step: h.step,
                    first: order(&first),
                    second: order(&second),
                })
            }
            None if first.is_empty() && second.is_empty() => None,
            None => return Err(bad("moment blobs present without optimizer header".into())),
        };
        Ok(Checkpoint {
            network,
            optimizer,
            rng: header.rng,
            meta: header.meta,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let net = Network::<f32>::build(ModelConfig::toy(), 5).unwrap();
        let mut opt = AdamState::new(net.params(), 0.9, 0.99, 1e-8);
        opt.step = 3;
        opt.first.values_mut().for_each(|t| *t = t.map(|_| 0.25));
        Checkpoint {
            network: net,
            optimizer: Some(opt),
            rng: Some(RngState {
                seed: 9,
                next_sample: 72,
            }),
            meta: TrainingMeta {
                iteration: 3,
                loss_tail: vec![0.5, 0.25, 0.125],
            },
        }
    }

    fn header_of(bytes: &[u8]) -> (serde_json::Value, usize) {
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        (serde_json::from_slice(&bytes[16..16 + len]).unwrap(), len)
    }

    fn with_header(bytes: &[u8], header: &serde_json::Value) -> Vec<u8> {
        let (_, len) = header_of(bytes);
        let json = serde_json::to_vec(header).unwrap();
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes[16 + len..]);
        out
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_offset_is_a_bounds_error() {
        let bytes = sample().to_bytes().unwrap();
        let (mut h, _) = header_of(&bytes);
        h["tensors"][3]["offset"] = serde_json::json!(1u64 << 40);
        let err = Checkpoint::from_bytes(&with_header(&bytes, &h)).unwrap_err();
        assert!(err.to_string().contains("out of bounds"), "{err}");

        let (mut h, _) = header_of(&bytes);
        h["tensors"][1]["offset"] = serde_json::json!(4);
        let err = Checkpoint::from_bytes(&with_header(&bytes, &h)).unwrap_err();
        assert!(err.to_string().contains("overlaps"), "{err}");
    }

    #[test]
    fn rejects_version_truncation_and_shape_mismatch() {
        let bytes = sample().to_bytes().unwrap();
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(Checkpoint::from_bytes(&v2).unwrap_err().to_string().contains("version"));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        assert!(Checkpoint::from_bytes(b"PNG\0garbage-garbage").is_err());

        let (mut h, _) = header_of(&bytes);
        h["config"]["channels"] = serde_json::json!(20);
        assert!(Checkpoint::from_bytes(&with_header(&bytes, &h)).is_err());
    }

    #[test]
    fn ablation_config_reloads_with_narrow_coefficients() {
        let cfg = ModelConfig::toy().with_flags(false, true);
        let ck = Checkpoint::from_network(Network::build(cfg, 1).unwrap());
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        let w = back.network.param("blocks.0.feb.coeff.weight").unwrap();
        assert_eq!(w.shape().n, 2 * 16);
        assert!(!back.network.config().enable_attention);
    }
}
