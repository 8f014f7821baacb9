//! Versioned JSON checkpoints, written atomically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::extractor::{ExtractorConfig, ExtractorHistory, SparseAutoencoder};
use crate::training::{TrainConfig, XSense};

pub const FORMAT_VERSION: u32 = 1;
pub const EXTRACTOR_KIND: &str = "xsense-extractor";
pub const MODEL_KIND: &str = "xsense-model";

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    kind: String,
    version: u32,
    payload: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorCheckpoint {
    pub extractor: SparseAutoencoder,
    pub config: ExtractorConfig,
    pub history: Option<ExtractorHistory>,
}

/// A trained model plus the pretrained table it reads target and context
/// vectors from, so generation needs no other input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub model: XSense,
    pub embeddings: EmbeddingTable,
    pub config: TrainConfig,
    /// Completed phase-2 epochs.
    pub epoch: usize,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Checkpoint(format!("not a file path: {}", path.display())))?;
    let mut tmp = PathBuf::from(path);
    tmp.set_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn to_bytes<T: Serialize>(kind: &str, payload: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec(&Envelope {
        kind: kind.to_string(),
        version: FORMAT_VERSION,
        payload,
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn from_bytes<T: DeserializeOwned>(kind: &str, bytes: &[u8]) -> Result<T> {
    let env: Envelope<serde_json::Value> = serde_json::from_slice(bytes)?;
    if env.kind != kind {
        return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", env.kind)));
    }
    if env.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {FORMAT_VERSION})",
            env.version
        )));
    }
    Ok(serde_json::from_value(env.payload)?)
}

/// Saves and returns the SHA-256 digest of the written bytes.
pub fn save<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<String> {
    let bytes = to_bytes(kind, payload)?;
    write_atomic(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    from_bytes(kind, &fs::read(path)?)
}

pub fn save_model(path: &Path, ckpt: &ModelCheckpoint) -> Result<String> {
    save(path, MODEL_KIND, ckpt)
}

pub fn load_model(path: &Path) -> Result<ModelCheckpoint> {
    let ckpt: ModelCheckpoint = load(path, MODEL_KIND)?;
    ckpt.model
        .validate()
        .map_err(|e| Error::Checkpoint(format!("invalid model: {e}")))?;
    if ckpt.embeddings.dim() != ckpt.model.dim() {
        return Err(Error::Checkpoint("embedding dimension does not match the model".into()));
    }
    Ok(ckpt)
}

pub fn save_extractor(path: &Path, ckpt: &ExtractorCheckpoint) -> Result<String> {
    save(path, EXTRACTOR_KIND, ckpt)
}

pub fn load_extractor(path: &Path) -> Result<ExtractorCheckpoint> {
    let ckpt: ExtractorCheckpoint = load(path, EXTRACTOR_KIND)?;
    ckpt.extractor
        .validate()
        .map_err(|e| Error::Checkpoint(format!("invalid extractor: {e}")))?;
    Ok(ckpt)
}
