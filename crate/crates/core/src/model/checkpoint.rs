//! Checkpoint file format.
//!
//! Layout: 8-byte magic, little-endian u64 manifest length, JSON manifest
//! (names, shapes, byte offsets, seed, config hash, and the model config
//! itself), then the parameter values as raw little-endian f64. The binary
//! payload makes write -> read -> write byte-identical.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"CFSCKPT1";

/// SHA-256 of the model config JSON alone (the training report carries the
/// full run hash including optimizer settings).
pub fn model_config_hash(cfg: &ModelConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    seed: u64,
    config_hash: String,
    model: ModelConfig,
    params: Vec<ParamRecord>,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the value blob.
    offset: u64,
}

pub fn save_to_vec(model: &Model) -> Result<Vec<u8>> {
    let mut records = Vec::with_capacity(model.params.len());
    let mut offset = 0u64;
    for (_, entry) in model.params.iter() {
        records.push(ParamRecord {
            name: entry.name.clone(),
            shape: entry.tensor.shape().to_vec(),
            offset,
        });
        offset += (entry.tensor.numel() * 8) as u64;
    }
    let manifest = Manifest {
        version: 1,
        seed: model.seed,
        config_hash: model_config_hash(&model.config),
        model: model.config.clone(),
        params: records,
    };
    let manifest_json = serde_json::to_vec(&manifest)?;

    let mut out = Vec::with_capacity(16 + manifest_json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    for (_, entry) in model.params.iter() {
        for v in entry.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_from_slice(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Data("not a checkpoint file (bad magic)".into()));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let blob_start = 16 + manifest_len;
    if bytes.len() < blob_start {
        return Err(Error::Data("truncated checkpoint manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..blob_start])?;
    if manifest.version != 1 {
        return Err(Error::Data(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    let expected_hash = model_config_hash(&manifest.model);
    if manifest.config_hash != expected_hash {
        return Err(Error::Data(
            "checkpoint config hash does not match embedded config".into(),
        ));
    }

    let mut model = Model::new(manifest.model, manifest.seed)?;
    if manifest.params.len() != model.params.len() {
        return Err(Error::Data(format!(
            "checkpoint has {} parameters, model defines {}",
            manifest.params.len(),
            model.params.len()
        )));
    }
    let blob = &bytes[blob_start..];
    for record in &manifest.params {
        let id = model.params.by_name(&record.name).ok_or_else(|| {
            Error::Data(format!("checkpoint parameter {:?} unknown to model", record.name))
        })?;
        let entry = model.params.entry_mut(id);
        if entry.tensor.shape() != record.shape.as_slice() {
            return Err(Error::Data(format!(
                "checkpoint parameter {:?} has shape {:?}, model expects {:?}",
                record.name,
                record.shape,
                entry.tensor.shape()
            )));
        }
        let start = record.offset as usize;
        let end = start + entry.tensor.numel() * 8;
        if end > blob.len() {
            return Err(Error::Data(format!(
                "checkpoint parameter {:?} overruns value blob",
                record.name
            )));
        }
        for (i, chunk) in blob[start..end].chunks_exact(8).enumerate() {
            entry.tensor.data_mut()[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let bytes = save_to_vec(model)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    load_from_slice(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Modality, ModelConfig, TopologySpec};

    fn small_model() -> Model {
        let mut cfg = ModelConfig::defaults(Modality::Joint);
        cfg.topology = TopologySpec::Named("chain(4)".into());
        cfg.channels = vec![4, 8];
        cfg.strides = vec![1, 2];
        cfg.kt_block = 3;
        cfg.taps = vec![1, 2];
        cfg.kt = 3;
        cfg.num_classes = 3;
        cfg.target_t = 8;
        Model::new(cfg, 17).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise_and_second_write_identical() {
        let model = small_model();
        let bytes = save_to_vec(&model).unwrap();
        let loaded = load_from_slice(&bytes).unwrap();
        for ((_, a), (_, b)) in model.params.iter().zip(loaded.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.data(), b.tensor.data());
            assert_eq!(a.decay, b.decay);
        }
        let again = save_to_vec(&loaded).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let model = small_model();
        let mut bytes = save_to_vec(&model).unwrap();
        assert!(load_from_slice(&bytes[..10]).is_err());
        bytes[0] = b'X';
        assert!(load_from_slice(&bytes).is_err());
    }

    #[test]
    fn loaded_model_reproduces_logits() {
        let model = small_model();
        let t = model.config.effective_t();
        let clip = crate::tensor::Tensor::full(vec![3, t, 4], 0.25);
        let before = model.infer(&clip).unwrap().logits;
        let loaded = load_from_slice(&save_to_vec(&model).unwrap()).unwrap();
        let after = loaded.infer(&clip).unwrap().logits;
        assert_eq!(before, after);
    }
}
