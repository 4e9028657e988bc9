//! Checkpoint archive: a tar file holding
//! - `config.json`: the [`ModelSpec`]
//! - `manifest.json`: `[{name, shape: [rows, cols], offset}]` in parameter order,
//!   `offset` counted in values
//! - `tensors.bin`: every parameter as little-endian `f64`, row-major, concatenated
//! - `extra.json`: free-form metadata (normalisation, dataset, training state)

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Cl4st, ModelSpec};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint<S> {
    pub model: Cl4st,
    pub store: ParamStore<S>,
    pub extra: BTreeMap<String, serde_json::Value>,
}

fn ck(e: impl ToString) -> Error {
    Error::Checkpoint(e.to_string())
}

fn append<W: std::io::Write>(b: &mut tar::Builder<W>, name: &str, data: &[u8]) -> Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_size(data.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_cksum();
    b.append_data(&mut header, name, data).map_err(ck)
}

pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    model: &Cl4st,
    store: &ParamStore<S>,
    extra: &BTreeMap<String, serde_json::Value>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut manifest = Vec::with_capacity(store.len());
    let mut tensors = Vec::with_capacity(store.numel() * 8);
    let mut offset = 0;
    for (_, name, value) in store.iter() {
        manifest.push(ManifestEntry {
            name: name.to_string(),
            shape: [value.nrows(), value.ncols()],
            offset,
        });
        for v in value.iter() {
            tensors.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        offset += value.len();
    }
    let file = std::fs::File::create(path)?;
    let mut b = tar::Builder::new(file);
    append(&mut b, "config.json", &serde_json::to_vec_pretty(&model.spec)?)?;
    append(&mut b, "manifest.json", &serde_json::to_vec_pretty(&manifest)?)?;
    append(&mut b, "tensors.bin", &tensors)?;
    append(&mut b, "extra.json", &serde_json::to_vec_pretty(extra)?)?;
    b.into_inner().map_err(ck)?.sync_all()?;
    Ok(())
}

/// Raw archive contents.
pub fn read_archive(path: &Path) -> Result<(ModelSpec, Vec<ManifestEntry>, Vec<f64>, BTreeMap<String, serde_json::Value>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut archive = tar::Archive::new(file);
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for entry in archive.entries().map_err(ck)? {
        let mut entry = entry.map_err(ck)?;
        let name = entry.path().map_err(ck)?.to_string_lossy().into_owned();
        let mut buf = Vec::new();
        entry.read_to_end(&mut buf).map_err(ck)?;
        files.insert(name, buf);
    }
    let get = |name: &str| files.get(name).ok_or_else(|| ck(format!("archive lacks {name}")));
    let spec: ModelSpec = serde_json::from_slice(get("config.json")?)?;
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(get("manifest.json")?)?;
    let raw = get("tensors.bin")?;
    if raw.len() % 8 != 0 {
        return Err(ck("tensors.bin length is not a multiple of 8"));
    }
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let extra = match files.get("extra.json") {
        Some(b) => serde_json::from_slice(b)?,
        None => BTreeMap::new(),
    };
    Ok((spec, manifest, values, extra))
}

/// Rebuild the model layout from `config.json` and fill in stored values by name.
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let (spec, manifest, values, extra) = read_archive(path)?;
    let mut store = ParamStore::new();
    let model = Cl4st::new(spec, &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut loaded = ParamStore::new();
    for e in &manifest {
        let n = e.shape[0] * e.shape[1];
        let slice = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| ck(format!("tensor {} runs past the end of tensors.bin", e.name)))?;
        let arr = Array2::from_shape_vec((e.shape[0], e.shape[1]), slice.iter().map(|&v| S::of(v)).collect())
            .map_err(ck)?;
        loaded.add(e.name.clone(), arr);
    }
    store.load_from(&loaded)?;
    Ok(Checkpoint { model, store, extra })
}
