//! The learnable model: a prompt encoder that turns tokenized prompt graphs
//! into relation representations, and a conditional message-passing
//! reasoner that scores candidate entities from them.

mod prompt_encoder;
mod reasoner;

pub use prompt_encoder::{
    aggregate_prompts, encode_prompt_graph, init_token_reps, prompt_layer, readout, PromptInput,
};
pub use reasoner::{
    init_kg_reps, kg_layer, multiclass_log_loss, score_query, score_query_traced, FactMask,
    LayerTrace, QueryScores, ScoreVector,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, RelationId};
use crate::prompt::{PromptSettings, TokenizedPromptGraph};
use crate::rng::{rng_for, stream};
use crate::tensor::{ParamId, ParamSet, Real, Tape, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

/// Ablation switches. At most one is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Relation representations come from a learnable slot table instead
    /// of prompt graphs.
    NoPromptGraph,
    /// Prompt-graph inputs are fresh Xavier-normal draws per graph.
    NoUnifiedTokenizer,
    /// Prompt-graph entity inputs are one-hot distance pairs.
    GrailLabeling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub prompt_layers: usize,
    pub kg_layers: usize,
    pub prompt: PromptSettings,
    pub ablation: Ablation,
    /// Rows of the relation table used by [`Ablation::NoPromptGraph`].
    pub relation_slots: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 32,
            prompt_layers: 3,
            kg_layers: 6,
            prompt: PromptSettings::default(),
            ablation: Ablation::None,
            relation_slots: 512,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.prompt.validate()?;
        if self.dim == 0 || self.prompt_layers == 0 || self.kg_layers == 0 {
            return Err(Error::Config(
                "dim and layer counts must be positive".into(),
            ));
        }
        if self.ablation == Ablation::GrailLabeling && 2 * (self.prompt.k as usize + 1) > self.dim {
            return Err(Error::Config(format!(
                "one-hot labeling needs dim >= 2(k+1) = {}",
                2 * (self.prompt.k + 1)
            )));
        }
        if self.ablation == Ablation::NoPromptGraph && self.relation_slots == 0 {
            return Err(Error::Config("relation_slots must be positive".into()));
        }
        Ok(())
    }

    /// Architecture fields that a checkpoint and a run must agree on.
    pub fn check_compatible(&self, other: &ModelConfig) -> Result<()> {
        let pairs = [
            ("dim", self.dim, other.dim),
            ("prompt_layers", self.prompt_layers, other.prompt_layers),
            ("kg_layers", self.kg_layers, other.kg_layers),
            ("k", self.prompt.k as usize, other.prompt.k as usize),
        ];
        for (name, a, b) in pairs {
            if a != b {
                return Err(Error::Incompatible(format!("{name}: {a} vs {b}")));
            }
        }
        if self.ablation != other.ablation {
            return Err(Error::Incompatible(format!(
                "ablation: {:?} vs {:?}",
                self.ablation, other.ablation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PromptLayerIds {
    pub entity_msg: ParamId,
    pub entity_attn: ParamId,
    pub relation_msg: ParamId,
    pub relation_attn: ParamId,
    pub entity_ln: (ParamId, ParamId),
    pub relation_ln: (ParamId, ParamId),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct KgLayerIds {
    pub relation_w: ParamId,
    pub msg: ParamId,
    pub attn_subject: ParamId,
    pub attn_relation: ParamId,
    pub attn_query: ParamId,
    pub attn_row: ParamId,
    pub relation_ln: (ParamId, ParamId),
    pub entity_ln: (ParamId, ParamId),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub token_table: ParamId,
    pub q_token: ParamId,
    pub prompt_layers: Vec<PromptLayerIds>,
    pub readout: ParamId,
    pub kg_layers: Vec<KgLayerIds>,
    pub score: ParamId,
    pub free_relations: Option<ParamId>,
}

/// Builds the parameter set for `config` in canonical order. Weight
/// matrices, the entity-token table and the query token are Xavier-normal;
/// layer-norm gains start at one and biases at zero.
pub fn init_params(config: &ModelConfig, seed: u64) -> ParamSet<f32> {
    let d = config.dim;
    let mut rng = rng_for(seed, &[stream::INIT]);
    let mut p = ParamSet::new();
    let mut xavier = |p: &mut ParamSet<f32>, name: String, r: usize, c: usize| {
        p.insert(name, Tensor::xavier_normal(r, c, &mut rng));
    };
    let ln = |p: &mut ParamSet<f32>, prefix: String| {
        p.insert(format!("{prefix}.gain"), Tensor::filled(1, d, 1.0));
        p.insert(format!("{prefix}.bias"), Tensor::zeros(1, d));
    };

    xavier(
        &mut p,
        "prompt.token_table".into(),
        config.prompt.num_entity_tokens(),
        d,
    );
    xavier(&mut p, "prompt.q_token".into(), 1, d);
    for l in 0..config.prompt_layers {
        let pre = format!("prompt.layer{l}");
        xavier(&mut p, format!("{pre}.entity_msg"), d, 3 * d);
        xavier(&mut p, format!("{pre}.entity_attn"), 1, 2 * d);
        xavier(&mut p, format!("{pre}.relation_msg"), d, 3 * d);
        xavier(&mut p, format!("{pre}.relation_attn"), 1, 2 * d);
        ln(&mut p, format!("{pre}.entity_ln"));
        ln(&mut p, format!("{pre}.relation_ln"));
    }
    xavier(&mut p, "prompt.readout".into(), d, config.prompt_layers * d);
    for l in 0..config.kg_layers {
        let pre = format!("kg.layer{l}");
        xavier(&mut p, format!("{pre}.relation_w"), d, d);
        xavier(&mut p, format!("{pre}.msg"), d, d);
        xavier(&mut p, format!("{pre}.attn_subject"), d, d);
        xavier(&mut p, format!("{pre}.attn_relation"), d, d);
        xavier(&mut p, format!("{pre}.attn_query"), d, d);
        xavier(&mut p, format!("{pre}.attn_row"), 1, d);
        ln(&mut p, format!("{pre}.relation_ln"));
        ln(&mut p, format!("{pre}.entity_ln"));
    }
    xavier(&mut p, "kg.score".into(), 1, d);
    if config.ablation == Ablation::NoPromptGraph {
        xavier(&mut p, "free_relations".into(), config.relation_slots, d);
    }
    p
}

fn layout_of<T: Real>(config: &ModelConfig, p: &ParamSet<T>) -> Result<Layout> {
    let id = |name: String| {
        p.id(&name)
            .ok_or_else(|| Error::Incompatible(format!("missing parameter {name}")))
    };
    let ln = |prefix: String| -> Result<(ParamId, ParamId)> {
        Ok((id(format!("{prefix}.gain"))?, id(format!("{prefix}.bias"))?))
    };
    let prompt_layers = (0..config.prompt_layers)
        .map(|l| {
            let pre = format!("prompt.layer{l}");
            Ok(PromptLayerIds {
                entity_msg: id(format!("{pre}.entity_msg"))?,
                entity_attn: id(format!("{pre}.entity_attn"))?,
                relation_msg: id(format!("{pre}.relation_msg"))?,
                relation_attn: id(format!("{pre}.relation_attn"))?,
                entity_ln: ln(format!("{pre}.entity_ln"))?,
                relation_ln: ln(format!("{pre}.relation_ln"))?,
            })
        })
        .collect::<Result<_>>()?;
    let kg_layers = (0..config.kg_layers)
        .map(|l| {
            let pre = format!("kg.layer{l}");
            Ok(KgLayerIds {
                relation_w: id(format!("{pre}.relation_w"))?,
                msg: id(format!("{pre}.msg"))?,
                attn_subject: id(format!("{pre}.attn_subject"))?,
                attn_relation: id(format!("{pre}.attn_relation"))?,
                attn_query: id(format!("{pre}.attn_query"))?,
                attn_row: id(format!("{pre}.attn_row"))?,
                relation_ln: ln(format!("{pre}.relation_ln"))?,
                entity_ln: ln(format!("{pre}.entity_ln"))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Layout {
        token_table: id("prompt.token_table".into())?,
        q_token: id("prompt.q_token".into())?,
        prompt_layers,
        readout: id("prompt.readout".into())?,
        kg_layers,
        score: id("kg.score".into())?,
        free_relations: match config.ablation {
            Ablation::NoPromptGraph => Some(id("free_relations".into())?),
            _ => None,
        },
    })
}

/// Configuration plus parameters. `T = f64` is the shadow model used for
/// gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real = f32> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    layout: Layout,
}

impl Model<f32> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, seed);
        Self::from_params(config, params)
    }
}

impl<T: Real> Model<T> {
    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        let expected = init_params(&config, 0);
        if !expected.same_layout(&params) {
            return Err(Error::Incompatible(
                "parameter names or shapes do not match the configuration".into(),
            ));
        }
        let layout = layout_of(&config, &params)?;
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config,
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn session(&self) -> Session<'_, T> {
        Session {
            tape: Tape::new(),
            model: self,
            bound: vec![None; self.params.len()],
        }
    }

    /// Prompt representation of `q`: the mean of the encodings of its
    /// prompt graphs, or the slot table row under the no-prompt ablation.
    /// Returns `None` when `q` has no prompt graphs.
    pub fn relation_prompts(
        &self,
        kg: &KnowledgeGraph,
        prompts: &[TokenizedPromptGraph],
        run_seed: u64,
    ) -> Result<Option<Tensor<T>>> {
        let mut sess = self.session();
        Ok(sess
            .prompt_representation(kg.num_relations(), prompts, run_seed)?
            .map(|v| sess.tape.value(v).clone()))
    }

    /// Scores every entity for `(s, q, ?)` given a precomputed prompt
    /// representation.
    pub fn score(
        &self,
        kg: &KnowledgeGraph,
        s: u32,
        q: RelationId,
        hbar: &Tensor<T>,
        mask: &FactMask,
    ) -> Result<ScoreVector> {
        let mut sess = self.session();
        let h = sess.tape.constant(hbar.clone());
        let qs = score_query(&mut sess, kg, s, q, h, mask)?;
        Ok(qs.to_dense(&sess, kg.num_entities()))
    }
}

/// A tape bound to a model. Parameters are registered on first use.
pub struct Session<'m, T: Real> {
    pub tape: Tape<T>,
    model: &'m Model<T>,
    bound: Vec<Option<Var>>,
}

impl<'m, T: Real> Session<'m, T> {
    pub fn model(&self) -> &'m Model<T> {
        self.model
    }

    pub fn config(&self) -> &'m ModelConfig {
        &self.model.config
    }

    pub(crate) fn layout(&self) -> &'m Layout {
        &self.model.layout
    }

    pub(crate) fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id] {
            return v;
        }
        let v = self.tape.param(id, self.model.params.by_id(id));
        self.bound[id] = Some(v);
        v
    }

    /// `|R| x d` prompt representation for the query relation of `prompts`
    /// (all must share one query relation). `None` if `prompts` is empty
    /// and the model needs prompt graphs.
    pub fn prompt_representation(
        &mut self,
        num_relations: usize,
        prompts: &[TokenizedPromptGraph],
        run_seed: u64,
    ) -> Result<Option<Var>> {
        if let Some(free) = self.layout().free_relations {
            let slots = self.config().relation_slots as u32;
            let idx: Vec<u32> = (0..num_relations as u32).map(|r| r % slots).collect();
            let table = self.p(free);
            return Ok(Some(self.tape.gather_rows(table, &idx)?));
        }
        if prompts.is_empty() {
            return Ok(None);
        }
        let reps = prompts
            .iter()
            .map(|t| {
                let input = PromptInput::new(t, run_seed);
                encode_prompt_graph(self, &input, num_relations)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(aggregate_prompts(&mut self.tape, &reps)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shapes() {
        let m = Model::new(ModelConfig::default(), 0).unwrap();
        let p = &m.params;
        assert_eq!(p.get("prompt.token_table").unwrap().shape(), [16, 32]);
        assert_eq!(p.get("prompt.q_token").unwrap().shape(), [1, 32]);
        assert_eq!(p.get("prompt.layer0.entity_msg").unwrap().shape(), [32, 96]);
        assert_eq!(
            p.get("prompt.layer2.relation_attn").unwrap().shape(),
            [1, 64]
        );
        assert_eq!(p.get("prompt.readout").unwrap().shape(), [32, 96]);
        assert_eq!(p.get("kg.layer5.attn_row").unwrap().shape(), [1, 32]);
        assert_eq!(p.get("kg.score").unwrap().shape(), [1, 32]);
        assert!(p.get("kg.layer6.msg").is_none());
    }

    #[test]
    fn parameter_count_is_in_the_expected_band() {
        let m = Model::new(ModelConfig::default(), 0).unwrap();
        let n = m.num_parameters();
        assert_eq!(n, 54_528);
        assert!((44_500..=133_500).contains(&n));
    }

    #[test]
    fn init_is_seeded() {
        let a = init_params(&ModelConfig::default(), 5);
        let b = init_params(&ModelConfig::default(), 5);
        let c = init_params(&ModelConfig::default(), 6);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a
            .get("prompt.q_token")
            .unwrap()
            .data()
            .iter()
            .any(|v| *v != 0.0));
    }

    #[test]
    fn incompatible_configs_are_reported() {
        let a = ModelConfig::default();
        let b = ModelConfig { dim: 16, ..a };
        assert!(matches!(
            a.check_compatible(&b),
            Err(Error::Incompatible(_))
        ));
        let c = ModelConfig {
            prompt: PromptSettings {
                shots: 3,
                ..a.prompt
            },
            ..a
        };
        assert!(a.check_compatible(&c).is_ok());
    }

    #[test]
    fn grail_labeling_needs_room() {
        let cfg = ModelConfig {
            dim: 4,
            ablation: Ablation::GrailLabeling,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
