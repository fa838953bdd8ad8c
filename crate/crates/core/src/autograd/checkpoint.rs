//! Checkpoint directory layout: a `manifest.json` describing every
//! parameter plus one binary matrix file per parameter under `params/`.
//!
//! The manifest keeps the run configuration as raw JSON so the trainer can
//! round-trip its own config type without this module knowing it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{load_matrix, save_matrix};

use super::params::{ParamStore, Parameter};

pub const CHECKPOINT_FORMAT: &str = "cauvis-checkpoint-v1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    step: u64,
    config: serde_json::Value,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    id: u32,
    name: String,
    rows: usize,
    cols: usize,
    trainable: bool,
    lr_scale: f64,
    file: String,
}

fn blob_name(param: &Parameter) -> String {
    // Parameter names are short identifiers; keep the file name readable
    // but strip anything the filesystem could object to.
    let safe: String = param
        .name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    format!("p{:04}_{}.cmat", param.id.0, safe)
}

/// Writes `store` under `dir`, creating it if needed. Any existing manifest
/// and parameter files are overwritten.
pub fn save_checkpoint(
    dir: &Path,
    store: &ParamStore,
    step: u64,
    config: &serde_json::Value,
) -> Result<()> {
    let params_dir = dir.join("params");
    fs::create_dir_all(&params_dir)?;
    let mut entries = Vec::with_capacity(store.len());
    for param in store.iter() {
        let file = blob_name(param);
        save_matrix(&params_dir.join(&file), &param.value)?;
        entries.push(ParamEntry {
            id: param.id.0,
            name: param.name.clone(),
            rows: param.value.rows(),
            cols: param.value.cols(),
            trainable: param.trainable,
            lr_scale: param.lr_scale,
            file,
        });
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.to_string(),
        step,
        config: config.clone(),
        params: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

/// What a checkpoint directory contained.
pub struct LoadedCheckpoint {
    pub store: ParamStore,
    pub step: u64,
    pub config: serde_json::Value,
}

/// Reads a checkpoint written by [`save_checkpoint`]. Parameter ids and
/// registration order are restored exactly, so a training run resumed from
/// disk sees the same store it saved.
pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest parse: {e}")))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!(
            "unsupported checkpoint format {:?}",
            manifest.format
        )));
    }
    let mut store = ParamStore::new();
    for (seq, entry) in manifest.params.iter().enumerate() {
        if entry.id as usize != seq {
            return Err(Error::Format(format!(
                "manifest parameter ids must be contiguous from 0, found {} at position {seq}",
                entry.id
            )));
        }
        let value = load_matrix(&dir.join("params").join(&entry.file))?;
        if value.rows() != entry.rows || value.cols() != entry.cols {
            return Err(Error::Format(format!(
                "parameter {} is {}x{} on disk, manifest says {}x{}",
                entry.name,
                value.rows(),
                value.cols(),
                entry.rows,
                entry.cols
            )));
        }
        store.register_scaled(&entry.name, value, entry.trainable, entry.lr_scale);
    }
    Ok(LoadedCheckpoint { store, step: manifest.step, config: manifest.config })
}
