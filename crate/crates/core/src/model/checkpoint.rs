//! Weight checkpoints: concatenated `TNSR` blobs plus a JSON index mapping
//! tensor names to byte ranges.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extent {
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub blob: String,
    pub tensors: BTreeMap<String, Extent>,
}

/// Paths of the index (`<stem>.json`) and blob (`<stem>.tnsr`).
pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("tnsr"))
}

fn entries<T: Scalar>(store: &ParamStore<T>) -> Vec<(String, &Tensor<T>)> {
    let mut out: Vec<(String, &Tensor<T>)> =
        store.trainable().iter().map(|p| (p.name.clone(), &p.tensor)).collect();
    for (name, s) in store.running_stats() {
        out.push((format!("{name}.running_mean"), &s.mean));
        out.push((format!("{name}.running_var"), &s.var));
    }
    out
}

pub fn save_checkpoint<T: Scalar>(store: &ParamStore<T>, stem: &Path) -> Result<()> {
    let (index_path, blob_path) = checkpoint_paths(stem);
    let mut blob = Vec::new();
    let mut tensors = BTreeMap::new();
    for (name, t) in entries(store) {
        let bytes = t.to_tnsr_bytes();
        tensors.insert(
            name,
            Extent {
                offset: blob.len() as u64,
                bytes: bytes.len() as u64,
            },
        );
        blob.extend_from_slice(&bytes);
    }
    let index = CheckpointIndex {
        blob: blob_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        tensors,
    };
    fs::write(&blob_path, blob)?;
    fs::write(&index_path, serde_json::to_vec_pretty(&index)?)?;
    Ok(())
}

/// Overwrites every tensor of `store` from the checkpoint at `stem`.
pub fn load_checkpoint<T: Scalar>(store: &mut ParamStore<T>, stem: &Path) -> Result<()> {
    let (index_path, blob_path) = checkpoint_paths(stem);
    let index: CheckpointIndex = serde_json::from_slice(&fs::read(&index_path)?)?;
    let blob = fs::read(&blob_path)?;
    let read = |name: &str, like: &Tensor<T>| -> Result<Tensor<T>> {
        let ext = index
            .tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{name}`")))?;
        let (start, end) = (ext.offset as usize, (ext.offset + ext.bytes) as usize);
        if end > blob.len() {
            return Err(Error::Format(format!("tensor `{name}` runs past the blob")));
        }
        let t = Tensor::<T>::read_tnsr(&blob[start..end])?;
        if t.shape() != like.shape() {
            return Err(Error::Format(format!(
                "tensor `{name}` has shape {:?}, model expects {:?}",
                t.shape(),
                like.shape()
            )));
        }
        Ok(t)
    };
    for p in store.params.iter_mut() {
        p.tensor = read(&p.name, &p.tensor)?;
    }
    for (name, s) in store.stats.iter_mut() {
        s.mean = read(&format!("{name}.running_mean"), &s.mean)?;
        s.var = read(&format!("{name}.running_var"), &s.var)?;
    }
    Ok(())
}
