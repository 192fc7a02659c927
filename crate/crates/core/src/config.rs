//! JSON run configuration. Unknown keys are rejected; every key is
//! optional and defaults to the standard setup.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Ablation, ModelConfig};
use crate::prompt::{PromptSettings, PromptVariant};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Source dataset directories.
    pub sources: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub shots: usize,
    pub k: u32,
    pub prompt_variant: PromptVariant,
    pub prompt_fact_cap: usize,
    pub dim: usize,
    pub prompt_layers: usize,
    pub kg_layers: usize,
    pub lr: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub no_prompt_graph: bool,
    pub no_unified_tokenizer: bool,
    pub grail_labeling: bool,
    pub relation_slots: usize,
    pub valid_limit: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        RunConfig {
            sources: Vec::new(),
            out: None,
            shots: m.prompt.shots,
            k: m.prompt.k,
            prompt_variant: m.prompt.variant,
            prompt_fact_cap: m.prompt.fact_cap,
            dim: m.dim,
            prompt_layers: m.prompt_layers,
            kg_layers: m.kg_layers,
            lr: t.lr,
            patience: t.patience,
            max_epochs: t.max_epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            no_prompt_graph: false,
            no_unified_tokenizer: false,
            grail_labeling: false,
            relation_slots: m.relation_slots,
            valid_limit: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn ablation(&self) -> Result<Ablation> {
        match (
            self.no_prompt_graph,
            self.no_unified_tokenizer,
            self.grail_labeling,
        ) {
            (false, false, false) => Ok(Ablation::None),
            (true, false, false) => Ok(Ablation::NoPromptGraph),
            (false, true, false) => Ok(Ablation::NoUnifiedTokenizer),
            (false, false, true) => Ok(Ablation::GrailLabeling),
            _ => Err(Error::Config(
                "at most one ablation switch may be set".into(),
            )),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = ModelConfig {
            dim: self.dim,
            prompt_layers: self.prompt_layers,
            kg_layers: self.kg_layers,
            prompt: PromptSettings {
                shots: self.shots,
                k: self.k,
                variant: self.prompt_variant,
                fact_cap: self.prompt_fact_cap,
            },
            ablation: self.ablation()?,
            relation_slots: self.relation_slots,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            model: self.model_config()?,
            lr: self.lr,
            patience: self.patience,
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            valid_limit: self.valid_limit,
            cache_dir: None,
        };
        t.validate()?;
        Ok(t)
    }
}
