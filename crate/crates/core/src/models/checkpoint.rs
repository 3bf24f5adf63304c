//! Checkpoint directories: `manifest.json` lists every tensor, `weights.bin`
//! holds their little-endian `f32` values back to back in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::numerics::{ParamSet, Tensor};

pub const MANIFEST: &str = "manifest.json";
pub const WEIGHTS: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
    pub byte_len: u64,
}

pub fn encode(params: &ParamSet) -> (Vec<ManifestEntry>, Vec<u8>) {
    let mut entries = Vec::with_capacity(params.len());
    let mut bytes = Vec::with_capacity(params.numel() * 4);
    for p in params.iter() {
        let offset = bytes.len() as u64;
        for v in p.tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            dtype: "f32".into(),
            byte_offset: offset,
            byte_len: bytes.len() as u64 - offset,
        });
    }
    (entries, bytes)
}

/// Parses and validates a manifest/weights pair. `dir` only labels errors.
pub fn decode(dir: &Path, manifest: &[u8], weights: &[u8]) -> Result<ParamSet> {
    let mpath = dir.join(MANIFEST);
    let wpath = dir.join(WEIGHTS);
    let entries: Vec<ManifestEntry> = serde_json::from_slice(manifest)
        .map_err(|e| Error::format(&mpath, e.column() as u64, e.to_string()))?;
    let mut params = ParamSet::new();
    let mut expected_offset = 0u64;
    for e in &entries {
        if e.dtype != "f32" {
            return Err(Error::format(&mpath, 0, format!("{}: unsupported dtype {}", e.name, e.dtype)));
        }
        let numel: usize = e.shape.iter().product();
        if e.shape.is_empty() || numel == 0 || e.byte_len != numel as u64 * 4 {
            return Err(Error::format(
                &mpath,
                0,
                format!("{}: shape {:?} does not match byte_len {}", e.name, e.shape, e.byte_len),
            ));
        }
        if e.byte_offset != expected_offset {
            return Err(Error::format(
                &wpath,
                e.byte_offset,
                format!("{}: expected offset {expected_offset}", e.name),
            ));
        }
        let end = e.byte_offset + e.byte_len;
        if end > weights.len() as u64 {
            return Err(Error::format(
                &wpath,
                weights.len() as u64,
                format!("truncated: {} needs bytes up to {end}", e.name),
            ));
        }
        let data = weights[e.byte_offset as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params
            .insert(e.name.clone(), Tensor::new(&e.shape, data)?)
            .map_err(|err| Error::format(&mpath, 0, err.to_string()))?;
        expected_offset = end;
    }
    if expected_offset != weights.len() as u64 {
        return Err(Error::format(
            &wpath,
            expected_offset,
            format!("{} trailing bytes", weights.len() as u64 - expected_offset),
        ));
    }
    Ok(params)
}

pub fn save(dir: &Path, params: &ParamSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (entries, bytes) = encode(params);
    let manifest = serde_json::to_vec_pretty(&entries).expect("manifest serializes");
    write_atomic(&dir.join(WEIGHTS), &bytes)?;
    write_atomic(&dir.join(MANIFEST), &manifest)
}

pub fn load(dir: &Path) -> Result<ParamSet> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read(&p).map_err(|e| Error::io(p, e))
    };
    decode(dir, &read(MANIFEST)?, &read(WEIGHTS)?)
}
