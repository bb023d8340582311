//! Checkpoint files: `PCK1` magic, a little-endian `u32` manifest length, a
//! TOML manifest, then every parameter tensor as little-endian scalars in
//! manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{ParamStore, Real, Tensor};
use crate::unet::{Model, ModelConfig, Normalizer};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PCK1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub precision: String,
    pub seed: u64,
    /// Hex SHA-256 of the TOML-encoded config.
    pub config_hash: String,
    /// Optimizer steps taken when saved.
    pub step: u64,
    pub validation_loss: Option<f64>,
    pub config: ModelConfig,
    pub normalizer: Normalizer,
    pub params: Vec<ParamRecord>,
}

pub fn config_hash(config: &ModelConfig) -> Result<String> {
    let text = toml::to_string(config).map_err(|e| Error::invalid(format!("config: {e}")))?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

/// Serializes a model. Parameters are stored at the precision of `T`.
pub fn encode_checkpoint<T: Real>(model: &Model, step: u64, validation_loss: Option<f64>) -> Result<Vec<u8>> {
    let params: ParamStore<T> = model.params.cast();
    let manifest = CheckpointManifest {
        version: 1,
        precision: T::NAME.to_string(),
        seed: model.seed,
        config_hash: config_hash(&model.config)?,
        step,
        validation_loss,
        config: model.config.clone(),
        normalizer: model.normalizer.clone(),
        params: params
            .entries()
            .iter()
            .map(|e| ParamRecord {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
            })
            .collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::invalid(format!("manifest: {e}")))?;
    let mut out = Vec::with_capacity(12 + text.len() + params.num_scalars() * T::BYTES);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for e in params.entries() {
        for &v in e.value.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn read_payload<T: Real>(records: &[ParamRecord], mut bytes: &[u8], path: &Path) -> Result<ParamStore<f64>> {
    let mut store = ParamStore::<T>::new();
    for r in records {
        let n: usize = r.shape.iter().product();
        let len = n * T::BYTES;
        if bytes.len() < len {
            return Err(fmt_err(path, format!("payload ends inside {}", r.name)));
        }
        let data = bytes[..len].chunks_exact(T::BYTES).map(T::read_le).collect();
        store.add(r.name.clone(), Tensor::new(r.shape.clone(), data)?);
        bytes = &bytes[len..];
    }
    if !bytes.is_empty() {
        return Err(fmt_err(path, format!("{} trailing payload bytes", bytes.len())));
    }
    Ok(store.cast())
}

/// Rebuilds a model from bytes. `path` is only used in error messages.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<(Model, CheckpointManifest)> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fmt_err(path, "not a checkpoint"));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let text = bytes
        .get(8..8 + len)
        .ok_or_else(|| fmt_err(path, "truncated manifest"))
        .and_then(|b| std::str::from_utf8(b).map_err(|e| fmt_err(path, e.to_string())))?;
    let manifest: CheckpointManifest = toml::from_str(text).map_err(|e| fmt_err(path, e.to_string()))?;
    if manifest.config_hash != config_hash(&manifest.config)? {
        return Err(fmt_err(path, "config hash does not match the stored config"));
    }
    let payload = &bytes[8 + len..];
    let stored = match manifest.precision.as_str() {
        "f64" => read_payload::<f64>(&manifest.params, payload, path)?,
        "f32" => read_payload::<f32>(&manifest.params, payload, path)?,
        p => return Err(fmt_err(path, format!("unknown precision {p:?}"))),
    };
    let mut model = Model::new(manifest.config.clone(), manifest.seed)?;
    model.params.load_from(&stored).map_err(|e| fmt_err(path, e.to_string()))?;
    manifest
        .normalizer
        .validate(model.config.raw_width())
        .map_err(|e| fmt_err(path, e.to_string()))?;
    model.normalizer = manifest.normalizer.clone();
    Ok((model, manifest))
}

/// Writes through a temporary file in the same folder, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, model: &Model, step: u64, validation_loss: Option<f64>) -> Result<()> {
    write_atomic(path, &encode_checkpoint::<f64>(model, step, validation_loss)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointManifest)> {
    decode_checkpoint(&fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::tiny_config;
    use crate::unet::InputMode;

    fn model() -> Model {
        let mut m = Model::new(tiny_config(InputMode::PointCloud, false), 5).unwrap();
        m.randomize_head(6);
        m.normalizer.output = [0.5, 0.25, 2.0];
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/best.ckpt");
        let m = model();
        save_checkpoint(&path, &m, 17, Some(0.25)).unwrap();
        let (back, man) = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(man.step, 17);
        assert_eq!(man.validation_loss, Some(0.25));
        assert_eq!(man.config_hash.len(), 64);
        assert!(!dir.path().join("sub/best.ckpt.tmp").exists());
    }

    #[test]
    fn single_precision_payload() {
        let m = model();
        let bytes = encode_checkpoint::<f32>(&m, 0, None).unwrap();
        let (back, man) = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(man.precision, "f32");
        for (a, b) in back.params.entries().iter().zip(m.params.entries()) {
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = model();
        let bytes = encode_checkpoint::<f64>(&m, 0, None).unwrap();
        let p = Path::new("mem");
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1], p), Err(Error::Format { .. })));
        assert!(matches!(decode_checkpoint(b"nope", p), Err(Error::Format { .. })));
        // config edited without updating its hash
        let mut edited = bytes.clone();
        let start = bytes.windows(17).position(|w| w == b"base_channels = 8").unwrap();
        edited[start + 16] = b'9';
        assert!(matches!(decode_checkpoint(&edited, p), Err(Error::Format { .. })));
    }
}
