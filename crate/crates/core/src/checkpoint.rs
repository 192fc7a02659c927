//! Checkpoint directories: `manifest.json` plus `params.bin`, the
//! concatenation of little-endian `f32` arrays in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{ParamSet, Tensor};

pub const FORMAT: &str = "kgicl-checkpoint/1";
pub const MANIFEST: &str = "manifest.json";
pub const PARAMS: &str = "params.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Seed of the run that produced the parameters.
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    config: ModelConfig,
    seed: u64,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: [usize; 2],
}

impl Checkpoint {
    pub fn new(model: Model, seed: u64) -> Self {
        Checkpoint { model, seed }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            format: FORMAT.to_string(),
            config: self.model.config,
            seed: self.seed,
            params: self
                .model
                .params
                .iter()
                .map(|(name, t)| ParamEntry {
                    name: name.to_string(),
                    shape: t.shape(),
                })
                .collect(),
        };
        let mut blob = Vec::with_capacity(self.model.num_parameters() * 4);
        for (_, t) in self.model.params.iter() {
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mpath = dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
        let ppath = dir.join(PARAMS);
        fs::write(&ppath, blob).map_err(|e| Error::io(&ppath, e))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mpath = dir.join(MANIFEST);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let raw: serde_json::Value = serde_json::from_str(&text)?;
        match raw.get("format").and_then(|v| v.as_str()) {
            Some(FORMAT) => {}
            Some(other) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported checkpoint format '{other}' (expected '{FORMAT}')"
                )))
            }
            None => return Err(Error::Checkpoint("manifest has no format tag".into())),
        }
        let manifest: Manifest = serde_json::from_value(raw)?;
        manifest.config.validate()?;

        let ppath = dir.join(PARAMS);
        let blob = fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
        let mut params = ParamSet::new();
        let mut at = 0usize;
        for p in &manifest.params {
            let n = p.shape[0] * p.shape[1];
            let end = at + 4 * n;
            if end > blob.len() {
                return Err(Error::Checkpoint(format!(
                    "params.bin truncated in parameter '{}': needs bytes {at}..{end}, file has {}",
                    p.name,
                    blob.len()
                )));
            }
            let data = blob[at..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.insert(
                p.name.clone(),
                Tensor::from_vec(p.shape[0], p.shape[1], data)?,
            );
            at = end;
        }
        if at != blob.len() {
            return Err(Error::Checkpoint(format!(
                "params.bin has {} trailing bytes after the last parameter",
                blob.len() - at
            )));
        }
        let model = Model::from_params(manifest.config, params)?;
        Ok(Checkpoint {
            model,
            seed: manifest.seed,
        })
    }
}
