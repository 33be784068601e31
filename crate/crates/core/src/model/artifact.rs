//! Model persistence: a JSON manifest next to a binary parameter container.
//!
//! Container layout (little-endian): magic `CSTM`, `u32` format version,
//! `u64` block count, then per block a `u64` length followed by that many
//! `f64` values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CalibrationParams, GaussianKde, LinearClassifier, MlpClassifier, Model, ModelKind, Network};
use crate::seed::fingerprint;
use crate::{Error, Result, Shape};

pub const ARTIFACT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CSTM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub id: String,
    pub kind: ModelKind,
    pub shape: Shape,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    pub calibration: Option<CalibrationParams>,
    pub training_seed: u64,
    pub dataset_fingerprint: String,
    pub params_file: String,
    pub params_sha256: String,
    pub block_lengths: Vec<usize>,
}

fn blocks(model: &Model) -> Vec<Vec<f64>> {
    match &model.network {
        Network::Linear(m) => vec![m.weights().to_vec(), m.biases().to_vec()],
        Network::Mlp(m) => vec![m.params().to_vec()],
        Network::Kde(m) => {
            let mut out = vec![m.bandwidths().to_vec()];
            out.extend(m.exemplars().iter().cloned());
            out
        }
    }
}

fn encode(blocks: &[Vec<f64>]) -> Vec<u8> {
    let total: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = Vec::with_capacity(16 + 8 * (blocks.len() + total));
    out.extend_from_slice(MAGIC);
    out.extend(ARTIFACT_VERSION.to_le_bytes());
    out.extend((blocks.len() as u64).to_le_bytes());
    for block in blocks {
        out.extend((block.len() as u64).to_le_bytes());
        for v in block {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

fn decode(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let err = |m: &str| Error::Format(format!("parameter container: {m}"));
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(err("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != ARTIFACT_VERSION {
        return Err(err(&format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let mut at = 16;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let len_bytes = bytes.get(at..at + 8).ok_or_else(|| err("truncated block header"))?;
        let len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes")) as usize;
        at += 8;
        let body = bytes.get(at..at + 8 * len).ok_or_else(|| err("truncated block"))?;
        blocks.push(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect());
        at += 8 * len;
    }
    if at != bytes.len() {
        return Err(err("trailing bytes"));
    }
    Ok(blocks)
}

/// Writes `<dir>/<id>.json` and `<dir>/<id>.params`; returns the manifest path.
pub fn save_model(model: &Model, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let blocks = blocks(model);
    let bytes = encode(&blocks);
    let params_file = format!("{}.params", model.id);
    std::fs::write(dir.join(&params_file), &bytes)?;
    let manifest = ModelManifest {
        format_version: ARTIFACT_VERSION,
        id: model.id.clone(),
        kind: model.kind(),
        shape: model.shape(),
        num_classes: model.num_classes(),
        hidden: match &model.network {
            Network::Mlp(m) => Some(m.hidden()),
            _ => None,
        },
        calibration: model.calibration,
        training_seed: model.seed,
        dataset_fingerprint: model.dataset_fingerprint.clone(),
        params_file,
        params_sha256: fingerprint(&bytes),
        block_lengths: blocks.iter().map(|b| b.len()).collect(),
    };
    let path = dir.join(format!("{}.json", model.id));
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

pub fn load_model(manifest_path: &Path) -> Result<Model> {
    let manifest: ModelManifest = serde_json::from_slice(&std::fs::read(manifest_path)?)?;
    if manifest.format_version != ARTIFACT_VERSION {
        return Err(Error::Format(format!("unsupported model manifest version {}", manifest.format_version)));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let bytes = std::fs::read(dir.join(&manifest.params_file))?;
    if fingerprint(&bytes) != manifest.params_sha256 {
        return Err(Error::Format(format!("parameter checksum mismatch for `{}`", manifest.id)));
    }
    let mut blocks = decode(&bytes)?;
    if blocks.iter().map(|b| b.len()).collect::<Vec<_>>() != manifest.block_lengths {
        return Err(Error::Format("block lengths disagree with manifest".into()));
    }
    let network = match manifest.kind {
        ModelKind::Linear => {
            if blocks.len() != 2 {
                return Err(Error::Format("linear model needs two blocks".into()));
            }
            let biases = blocks.pop().expect("two blocks");
            let weights = blocks.pop().expect("two blocks");
            Network::Linear(LinearClassifier::from_parts(manifest.shape, weights, biases)?)
        }
        ModelKind::Mlp => {
            let hidden = manifest.hidden.ok_or_else(|| Error::Format("MLP manifest lacks hidden width".into()))?;
            let params = blocks.pop().ok_or_else(|| Error::Format("MLP model needs one block".into()))?;
            Network::Mlp(MlpClassifier::from_params(manifest.shape, hidden, manifest.num_classes, params)?)
        }
        ModelKind::GaussianKde => {
            if blocks.is_empty() {
                return Err(Error::Format("KDE model needs a bandwidth block".into()));
            }
            let bandwidths = blocks.remove(0);
            Network::Kde(GaussianKde::from_parts(manifest.shape, blocks, bandwidths)?)
        }
    };
    let mut model = Model::new(manifest.id, network);
    model.calibration = manifest.calibration;
    model.seed = manifest.training_seed;
    model.dataset_fingerprint = manifest.dataset_fingerprint;
    Ok(model)
}
