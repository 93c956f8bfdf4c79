use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GntConfig;
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the weights file.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GntConfig,
    /// Optimizer step the weights were saved at.
    pub step: usize,
    pub params: Vec<ManifestEntry>,
}

/// Writes `manifest.json` and `weights.bin` (little-endian f32, manifest order)
/// into `dir`, creating it if needed.
pub fn save_checkpoint(dir: &Path, cfg: &GntConfig, step: usize, params: &ParamStore<f32>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(params.len());
    let mut bytes = Vec::with_capacity(params.numel() * 4);
    for p in params.iter() {
        entries.push(ManifestEntry {
            name: p.name.clone(),
            group: p.group,
            shape: p.value.shape().to_vec(),
            dtype: "f32".into(),
            offset: bytes.len(),
        });
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        config: cfg.clone(),
        step,
        params: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, bytes).map_err(|e| Error::io(&wpath, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(Manifest, ParamStore<f32>)> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&mpath, &text, e))?;
    let wpath = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    let mut store = ParamStore::new();
    for entry in &manifest.params {
        if entry.dtype != "f32" {
            return Err(Error::parse(&mpath, 0, format!("unsupported dtype {} for {}", entry.dtype, entry.name)));
        }
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + 4 * n;
        let Some(raw) = bytes.get(entry.offset..end) else {
            return Err(Error::parse(
                &wpath,
                bytes.len(),
                format!("{} needs bytes {}..{end}", entry.name, entry.offset),
            ));
        };
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse(&wpath, entry.offset + 4 * i, format!("non-finite weight in {}", entry.name)));
        }
        store.insert(entry.name.clone(), entry.group, Tensor::new(entry.shape.clone(), data)?)?;
    }
    Ok((manifest, store))
}
