//! Checkpoint directory: one binary tensor file per parameter plus a
//! `manifest.json` listing names, files, shapes and the model config.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{io, Tensor};

pub const MANIFEST: &str = "manifest.json";
const SCHEMA: &str = "listenlab-checkpoint";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    #[serde(default)]
    pub epoch: Option<usize>,
    #[serde(default)]
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    schema: String,
    version: u32,
    dtype: String,
    config: ModelConfig,
    meta: CheckpointMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data_manifest: Option<String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<Tensor<f32>>,
    pub meta: CheckpointMeta,
    /// Manifest the model was trained from, used to look clips up later.
    pub data_manifest: Option<String>,
}

pub fn save(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::new();
    for (name, t) in ckpt.params.fields() {
        let file = format!("{name}.mtns");
        io::save(t, &dir.join(&file))?;
        tensors.push(TensorEntry {
            name,
            file,
            shape: t.shape().to_vec(),
        });
    }
    let manifest = Manifest {
        schema: SCHEMA.into(),
        version: 1,
        dtype: "f32".into(),
        config: ckpt.config,
        meta: ckpt.meta.clone(),
        data_manifest: ckpt.data_manifest.clone(),
        tensors,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = dir.join(MANIFEST);
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.schema != SCHEMA || manifest.version != 1 {
        return Err(Error::Format(format!(
            "unsupported checkpoint schema {} v{}",
            manifest.schema, manifest.version
        )));
    }
    let template = ModelParams::<Tensor<f32>>::init(&manifest.config, 0)?;
    if manifest.tensors.len() != template.fields().len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} tensors, model needs {}",
            manifest.tensors.len(),
            template.fields().len()
        )));
    }
    let params = template.try_map(|name, t| {
        let entry = manifest
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor `{name}`")))?;
        let loaded: Tensor<f32> = io::load(&dir.join(&entry.file))?;
        if loaded.shape() != t.shape() || entry.shape != t.shape() {
            return Err(Error::Format(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                loaded.shape(),
                t.shape()
            )));
        }
        Ok(loaded)
    })?;
    Ok(Checkpoint {
        config: manifest.config,
        params,
        meta: manifest.meta,
        data_manifest: manifest.data_manifest,
    })
}
