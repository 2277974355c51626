//! Checkpoint layout: `MNMT` magic, format byte, little-endian `u32` header
//! length, JSON header, then every parameter as little-endian `f32` in
//! manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ModelConfig, Variant};
use super::network::{parameter_shapes, Model};
use crate::autodiff::{ParameterSet, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MNMT";
const FORMAT: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub config_hash: String,
    pub seed: u64,
    /// Hash of the vocabularies the model was trained with.
    pub vocab_hash: String,
    pub manifest: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn config_hash(config: &ModelConfig) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

/// Hash over several vocabulary files, in the given order.
pub fn vocab_hash<S: AsRef<str>>(parts: &[S]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.as_ref().len() as u64).to_le_bytes());
        h.update(p.as_ref().as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn save_checkpoint(path: &Path, model: &Model, seed: u64, vocab_hash: &str) -> Result<()> {
    let mut manifest = Vec::new();
    let mut data = Vec::new();
    for (_, p) in model.params.iter() {
        manifest.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: data.len(),
        });
        for &x in p.value.data() {
            data.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        config: model.config().clone(),
        config_hash: config_hash(model.config())?,
        seed,
        vocab_hash: vocab_hash.to_string(),
        manifest,
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(9 + json.len() + data.len());
    bytes.extend_from_slice(MAGIC);
    bytes.push(FORMAT);
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&data);
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

pub fn read_header(path: &Path) -> Result<(CheckpointHeader, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    if bytes[4] != FORMAT {
        return Err(bad("unsupported format version"));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(9..9 + len).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| bad(&format!("bad header: {e}")))?;
    if header.config_hash != config_hash(&header.config)? {
        return Err(bad("config hash mismatch"));
    }
    let data = bytes[9 + len..].to_vec();
    Ok((header, data))
}

/// Loads a checkpoint, optionally insisting on a variant and a vocabulary hash.
pub fn load_checkpoint(
    path: &Path,
    expect_variant: Option<Variant>,
    expect_vocab_hash: Option<&str>,
) -> Result<(Model, CheckpointHeader)> {
    let (header, data) = read_header(path)?;
    let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if let Some(v) = expect_variant {
        if v != header.config.variant {
            return Err(bad(format!("checkpoint holds variant {}, expected {v}", header.config.variant)));
        }
    }
    if let Some(h) = expect_vocab_hash {
        if h != header.vocab_hash {
            return Err(bad("vocabulary hash mismatch".into()));
        }
    }
    let expected = parameter_shapes(&header.config);
    let listed: Vec<(&str, &[usize])> = header.manifest.iter().map(|e| (e.name.as_str(), e.shape.as_slice())).collect();
    let wanted: Vec<(&str, &[usize])> = expected.iter().map(|(n, s)| (n.as_str(), s.as_slice())).collect();
    if listed != wanted {
        return Err(bad("parameter manifest does not match the configured variant".into()));
    }
    let mut params = ParameterSet::new();
    let mut offset = 0;
    for entry in &header.manifest {
        if entry.offset != offset {
            return Err(bad(format!("parameter `{}` at unexpected offset", entry.name)));
        }
        let n: usize = entry.shape.iter().product();
        let raw = data
            .get(offset..offset + 4 * n)
            .ok_or_else(|| bad(format!("truncated data for `{}`", entry.name)))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        params.add(entry.name.clone(), Tensor::new(entry.shape.clone(), values)?)?;
        offset += 4 * n;
    }
    if offset != data.len() {
        return Err(bad("trailing bytes after parameter data".into()));
    }
    let model = Model::from_params(header.config.clone(), params)?;
    Ok((model, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::network::tests::tiny_config;

    #[test]
    fn round_trip_is_exact_at_single_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Model::init(tiny_config(Variant::Mo), 5).unwrap();
        save_checkpoint(&path, &m, 5, "abc").unwrap();
        let (back, header) = load_checkpoint(&path, Some(Variant::Mo), Some("abc")).unwrap();
        assert_eq!(header.seed, 5);
        for (_, p) in m.params.iter() {
            let q = back.params.by_name(&p.name).unwrap();
            for (a, b) in p.value.data().iter().zip(q.value.data()) {
                assert_eq!((*a as f32).to_bits(), (*b as f32).to_bits());
                assert!((a - b).abs() <= a.abs() * 2f64.powi(-24));
            }
        }
        assert!(load_checkpoint(&path, Some(Variant::M), None).is_err());
        assert!(load_checkpoint(&path, None, Some("xyz")).is_err());
    }

    #[test]
    fn truncated_and_foreign_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Model::init(tiny_config(Variant::O), 1).unwrap();
        save_checkpoint(&path, &m, 1, "").unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path, None, None), Err(Error::Checkpoint(_))));
        fs::write(&path, b"hello world").unwrap();
        assert!(load_checkpoint(&path, None, None).is_err());
    }

    #[test]
    fn variant_m_checkpoint_is_not_an_mo_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Model::init(tiny_config(Variant::M), 1).unwrap();
        save_checkpoint(&path, &m, 1, "").unwrap();
        // rewrite the header to claim mo while keeping m's parameters
        let (mut header, data) = read_header(&path).unwrap();
        header.config.variant = Variant::Mo;
        header.config_hash = config_hash(&header.config).unwrap();
        let json = serde_json::to_vec(&header).unwrap();
        let mut bytes = MAGIC.to_vec();
        bytes.push(FORMAT);
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&json);
        bytes.extend_from_slice(&data);
        fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path, None, None).unwrap_err();
        assert!(err.to_string().contains("manifest"), "{err}");
    }
}
