//! Model checkpoints: `model.json` (config, variant and array index) plus
//! `model.bin` with the weights as little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{NetConfig, Variant};
use super::model::Model;
use crate::blob::{self, ArrayEntry};
use crate::error::{Error, Result};

pub const MODEL_MANIFEST: &str = "model.json";
pub const MODEL_BLOB: &str = "model.bin";
const FORMAT: &str = "ratsir-model-v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelManifest {
    format: String,
    variant: Variant,
    seed: u64,
    config: NetConfig,
    params: Vec<ArrayEntry>,
}

pub fn save_model(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let named = model.store.names().iter().map(String::as_str).zip(model.store.values());
    let (params, data) = blob::encode(named);
    let manifest = ModelManifest {
        format: FORMAT.into(),
        variant: model.variant,
        seed: model.seed,
        config: model.config.clone(),
        params,
    };
    fs::write(dir.join(MODEL_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(dir.join(MODEL_BLOB), data)?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<Model> {
    let manifest: ModelManifest = serde_json::from_str(&fs::read_to_string(dir.join(MODEL_MANIFEST))?)?;
    if manifest.format != FORMAT {
        return Err(Error::DataIntegrity(format!("unknown model format {:?}", manifest.format)));
    }
    let data = fs::read(dir.join(MODEL_BLOB))?;
    let arrays = blob::decode(&manifest.params, &data)?;
    let mut model = Model::new(manifest.config, manifest.variant, manifest.seed)?;
    if arrays.len() != model.store.len() {
        return Err(Error::DataIntegrity(format!(
            "checkpoint has {} arrays, model expects {}",
            arrays.len(),
            model.store.len()
        )));
    }
    for (name, value) in arrays {
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| Error::DataIntegrity(format!("checkpoint array {name} is not a model parameter")))?;
        if model.store.get(id).dim() != value.dim() {
            return Err(Error::DataIntegrity(format!("checkpoint array {name} has the wrong shape")));
        }
        *model.store.get_mut(id) = value;
    }
    Ok(model)
}
