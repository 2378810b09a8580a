//! Checkpoint directories: a text manifest plus a flat little-endian blob.
//!
//! ```text
//! fuselang-ckpt-v1
//! seed 42
//! meta step 500
//! param encoders.image.conv0.bias f64 4 0 4
//! param encoders.image.conv0.weight f64 4x1x3x3 32 36
//! ```
//!
//! Each `param` line is `name dtype shape byte-offset count`. Parameters are
//! listed in store order and the blob holds their values back to back.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: &str = "fuselang-ckpt-v1";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const BLOB_FILE: &str = "params.bin";

/// Writes `store` and free-form `meta` entries into `dir`, creating it if needed.
pub fn save(dir: &Path, store: &ParameterStore, meta: &BTreeMap<String, String>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = format!("{CHECKPOINT_VERSION}\nseed {}\n", store.seed());
    for (k, v) in meta {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(CoreError::Checkpoint(format!("meta entry `{k}` cannot be stored")));
        }
        manifest.push_str(&format!("meta {k} {v}\n"));
    }
    let mut blob = Vec::new();
    for (name, p) in store.iter() {
        let shape = p
            .value
            .shape()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x");
        let shape = if shape.is_empty() { "scalar".to_string() } else { shape };
        manifest.push_str(&format!(
            "param {name} f64 {shape} {} {}\n",
            blob.len(),
            p.value.numel()
        ));
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    fs::write(dir.join(BLOB_FILE), blob)?;
    Ok(())
}

/// Reads a checkpoint written by [`save`].
pub fn load(dir: &Path) -> Result<(ParameterStore, BTreeMap<String, String>)> {
    let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let blob = fs::read(dir.join(BLOB_FILE))?;
    let mut lines = manifest.lines();
    let version = lines.next().unwrap_or_default();
    if version != CHECKPOINT_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported version `{version}`, expected `{CHECKPOINT_VERSION}`"
        )));
    }
    let bad = |line: &str| CoreError::Checkpoint(format!("malformed manifest line `{line}`"));
    let mut seed = 0;
    let mut meta = BTreeMap::new();
    let mut entries = Vec::new();
    for line in lines {
        let mut parts = line.splitn(2, ' ');
        match (parts.next(), parts.next()) {
            (Some("seed"), Some(s)) => seed = s.trim().parse().map_err(|_| bad(line))?,
            (Some("meta"), Some(rest)) => {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.insert(k.to_string(), v.to_string());
            }
            (Some("param"), Some(rest)) => {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 5 || f[1] != "f64" {
                    return Err(bad(line));
                }
                let shape: Vec<usize> = if f[2] == "scalar" {
                    Vec::new()
                } else {
                    f[2].split('x')
                        .map(|d| d.parse().map_err(|_| bad(line)))
                        .collect::<Result<_>>()?
                };
                let offset: usize = f[3].parse().map_err(|_| bad(line))?;
                let count: usize = f[4].parse().map_err(|_| bad(line))?;
                entries.push((f[0].to_string(), shape, offset, count));
            }
            (Some(""), None) => {}
            _ => return Err(bad(line)),
        }
    }
    let mut store = ParameterStore::new(seed);
    for (name, shape, offset, count) in entries {
        let end = offset + count * 8;
        if end > blob.len() {
            return Err(CoreError::Checkpoint(format!(
                "`{name}` spans bytes {offset}..{end} of a {}-byte blob",
                blob.len()
            )));
        }
        let data = blob[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.insert(name, Tensor::new(&shape, data)?)?;
    }
    Ok((store, meta))
}
