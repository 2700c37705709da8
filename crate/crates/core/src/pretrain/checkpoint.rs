//! Checkpoint file: `CTGSSL01` magic, u64 LE manifest length, JSON manifest,
//! a little-endian f32 blob (parameters, then optimizer moments), and a
//! SHA-256 trailer over everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ModelConfig, TrainConfig};
use crate::features::FeatureStats;
use crate::model::Model;
use crate::nn::{Param, ParamStore};
use crate::pretrain::data::MetaStats;
use crate::pretrain::optim::AdamW;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CTGSSL01";
pub const CHECKPOINT_FORMAT: &str = "ctg-ssl-checkpoint/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    /// Byte offset from the start of the blob.
    offset: usize,
    trainable: bool,
    decay: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QuantizerSeeds {
    signal: u64,
    feature: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    code_version: String,
    model: ModelConfig,
    train: TrainConfig,
    step: usize,
    quantizer_seeds: QuantizerSeeds,
    feature_stats: FeatureStats,
    meta_stats: MetaStats,
    tensors: Vec<TensorEntry>,
    optimizer_t: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub train: TrainConfig,
    /// Completed optimizer steps.
    pub step: usize,
    pub feature_stats: FeatureStats,
    pub meta_stats: MetaStats,
    pub optimizer: Option<AdamW>,
}

/// Writes the checkpoint and returns the hex SHA-256 trailer.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<String> {
    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut push = |name: String, shape: &[usize], values: &[f32], trainable: bool, decay: bool| {
        tensors.push(TensorEntry {
            name,
            shape: shape.to_vec(),
            dtype: "f32".into(),
            offset: blob.len(),
            trainable,
            decay,
        });
        for v in values {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    };
    for p in ck.model.params.iter() {
        push(p.name.clone(), &p.shape, &p.value, p.trainable, p.decay);
    }
    if let Some(opt) = &ck.optimizer {
        for (kind, state) in [("m", &opt.m), ("v", &opt.v)] {
            for (p, s) in ck.model.params.iter().zip(state) {
                if p.trainable {
                    push(format!("adam.{kind}.{}", p.name), &p.shape, s, false, false);
                }
            }
        }
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        model: ck.model.cfg.clone(),
        train: ck.train.clone(),
        step: ck.step,
        quantizer_seeds: QuantizerSeeds {
            signal: ck.model.cfg.sig_q_seed,
            feature: ck.model.cfg.feat_q_seed,
        },
        feature_stats: ck.feature_stats.clone(),
        meta_stats: ck.meta_stats.clone(),
        tensors,
        optimizer_t: ck.optimizer.as_ref().map(|o| o.t),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + blob.len() + 32);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&blob);
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    // write-then-rename so an interrupted save never leaves a torn file
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(crate::io::hex(&digest))
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Hex SHA-256 stored in the trailer (identifies the checkpoint contents).
pub fn checkpoint_digest(path: &Path) -> Result<String> {
    let bytes = read_verified(path)?;
    Ok(crate::io::hex(&bytes[bytes.len() - 32..]))
}

fn read_verified(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 48 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic or truncated file"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(corrupt("checksum mismatch"));
    }
    Ok(bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read_verified(path)?;
    let body = &bytes[..bytes.len() - 32];
    let mlen = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    if 16 + mlen > body.len() {
        return Err(corrupt("manifest length out of range"));
    }
    let manifest: Manifest =
        serde_json::from_slice(&body[16..16 + mlen]).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(corrupt(format!("unsupported format {}", manifest.format)));
    }
    let blob = &body[16 + mlen..];
    let read = |e: &TensorEntry| -> Result<Vec<f32>> {
        let n: usize = e.shape.iter().product();
        let end = e.offset + 4 * n;
        if e.dtype != "f32" || end > blob.len() {
            return Err(corrupt(format!("tensor {} out of range", e.name)));
        }
        Ok(blob[e.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let mut store = ParamStore::<f32>::new();
    let mut moments: std::collections::HashMap<&str, Vec<f32>> = Default::default();
    for e in &manifest.tensors {
        if e.name.starts_with("adam.") {
            moments.insert(&e.name, read(e)?);
        } else {
            store.add(Param {
                name: e.name.clone(),
                shape: e.shape.clone(),
                value: read(e)?,
                trainable: e.trainable,
                decay: e.decay,
            });
        }
    }
    let model = Model::from_store(manifest.model.clone(), store)?;
    let optimizer = match manifest.optimizer_t {
        Some(t) => {
            let mut opt = AdamW::new(&model.params);
            for (i, p) in model.params.iter().enumerate() {
                if !p.trainable {
                    continue;
                }
                for (kind, dst) in [("m", &mut opt.m[i]), ("v", &mut opt.v[i])] {
                    let src = moments
                        .get(format!("adam.{kind}.{}", p.name).as_str())
                        .filter(|s| s.len() == dst.len())
                        .ok_or_else(|| corrupt(format!("missing optimizer state for {}", p.name)))?;
                    dst.copy_from_slice(src);
                }
            }
            opt.t = t;
            Some(opt)
        }
        None => None,
    };
    Ok(Checkpoint {
        model,
        train: manifest.train,
        step: manifest.step,
        feature_stats: manifest.feature_stats,
        meta_stats: manifest.meta_stats,
        optimizer,
    })
}
