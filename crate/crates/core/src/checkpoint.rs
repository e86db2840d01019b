//! Single-file checkpoint container: a JSON header followed by raw f64
//! little-endian parameter payloads. Reload reproduces parameter values
//! bit-for-bit and preserves allocation order, so `ParamId` handles built
//! by the same model code remain valid.

use crate::error::CoreError;
use crate::params::ParamSet;
use crate::tensor::Arr;
use ndarray::IxDyn;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SATQACK\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// Artifact kind, e.g. "scl-encoder" or "quality-model".
    pub kind: String,
    /// Kind-specific metadata (config hash, temperature, corpus hash, ...).
    pub metadata: serde_json::Value,
}

impl CheckpointHeader {
    pub fn new(kind: &str, metadata: serde_json::Value) -> Self {
        CheckpointHeader {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            metadata,
        }
    }
}

pub fn save(path: &Path, header: &CheckpointHeader, params: &ParamSet) -> Result<(), CoreError> {
    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| CoreError::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    let header_bytes = serde_json::to_vec(header)
        .map_err(|e| CoreError::CheckpointFormat(format!("header serialization: {e}")))?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&header_bytes).map_err(io_err)?;
    w.write_all(&(params.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    for (name, value) in params.entries() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u64).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(name_bytes).map_err(io_err)?;
        w.write_all(&(value.ndim() as u64).to_le_bytes())
            .map_err(io_err)?;
        for &dim in value.shape() {
            w.write_all(&(dim as u64).to_le_bytes()).map_err(io_err)?;
        }
        for &x in value.iter() {
            w.write_all(&x.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load(path: &Path) -> Result<(CheckpointHeader, ParamSet), CoreError> {
    let file = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut r = BufReader::new(file);
    let io_err = |e: std::io::Error| CoreError::io(path, e);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(CoreError::CheckpointFormat(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let header_len = read_u64(&mut r).map_err(io_err)? as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(io_err)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| CoreError::CheckpointFormat(format!("header parse: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(CoreError::CheckpointFormat(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    let n_params = read_u64(&mut r).map_err(io_err)? as usize;
    let mut params = ParamSet::new();
    for _ in 0..n_params {
        let name_len = read_u64(&mut r).map_err(io_err)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name)
            .map_err(|e| CoreError::CheckpointFormat(format!("parameter name: {e}")))?;
        let ndim = read_u64(&mut r).map_err(io_err)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r).map_err(io_err)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = vec![0f64; len];
        let mut buf = [0u8; 8];
        for slot in &mut data {
            r.read_exact(&mut buf).map_err(io_err)?;
            *slot = f64::from_le_bytes(buf);
        }
        let value = Arr::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| CoreError::CheckpointFormat(format!("parameter shape: {e}")))?;
        params.alloc(name, value);
    }
    Ok((header, params))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init;
    use crate::rng::rng_from_seed;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = rng_from_seed(3);
        let mut params = ParamSet::new();
        params.alloc("layer.w", init::normal(&mut rng, &[4, 3], 1.0));
        params.alloc("layer.b", init::zeros(&[3]));
        params.alloc("conv.w", init::he_conv(&mut rng, &[2, 3, 3, 3]));
        let header = CheckpointHeader::new("test", serde_json::json!({"tau": 0.1}));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&path, &header, &params).unwrap();
        let (loaded_header, loaded) = load(&path).unwrap();

        assert_eq!(loaded_header.kind, "test");
        assert_eq!(loaded_header.metadata["tau"], 0.1);
        assert_eq!(params.checksum(), loaded.checksum());
        assert_eq!(loaded.name(loaded.id_by_name("conv.w").unwrap()), "conv.w");
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load(&path).is_err());
    }
}
