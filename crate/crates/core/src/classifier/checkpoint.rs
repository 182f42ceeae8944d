//! Checkpoint directory: `manifest.json` plus a little-endian f64 blob in
//! `params.bin`. The manifest records the blob's sha256.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{is_registered_backend, Checkpoint, ClassifierConfig, ClassifierError, Lineage};
use crate::corpus::Label;
use crate::text::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub backend_id: String,
    pub backend_options: serde_json::Value,
    pub labels: [Label; 3],
    pub config: Option<ClassifierConfig>,
    pub lineage: Lineage,
    pub model_name: String,
    pub n_params: usize,
    pub params_sha256: String,
}

fn encode_params(params: &[f64]) -> Vec<u8> {
    params.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<(), ClassifierError> {
    fs::create_dir_all(dir)?;
    let blob = encode_params(&ckpt.params);
    let manifest = CheckpointManifest {
        backend_id: ckpt.backend_id.clone(),
        backend_options: ckpt.backend_options.clone(),
        labels: ckpt.labels,
        config: ckpt.config.clone(),
        lineage: ckpt.lineage.clone(),
        model_name: ckpt.model_name(),
        n_params: ckpt.params.len(),
        params_sha256: sha256_hex(&blob),
    };
    fs::write(dir.join(PARAMS_FILE), &blob)?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, ClassifierError> {
    let corrupt = |m: String| ClassifierError::CorruptCheckpoint(m);
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if !is_registered_backend(&manifest.backend_id) {
        return Err(ClassifierError::UnknownBackend(manifest.backend_id));
    }
    let blob = fs::read(dir.join(PARAMS_FILE))?;
    if blob.len() != manifest.n_params * 8 {
        return Err(corrupt(format!(
            "parameter blob has {} bytes, expected {}",
            blob.len(),
            manifest.n_params * 8
        )));
    }
    if sha256_hex(&blob) != manifest.params_sha256 {
        return Err(corrupt("parameter blob hash mismatch".into()));
    }
    let params = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Checkpoint {
        backend_id: manifest.backend_id,
        backend_options: manifest.backend_options,
        params,
        labels: manifest.labels,
        config: manifest.config,
        lineage: manifest.lineage,
    })
}
