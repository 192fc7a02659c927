//! Browser front end: prompt-graph extraction on a pasted graph, the
//! reasoning frontier layer by layer, and a small training run on a
//! synthetic composition-rule graph.

use std::path::Path;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use kgicl::dataset::{Dataset, GraphRole, Split};
use kgicl::eval::evaluate;
use kgicl::kg::{parse_triples, Fact, TripleFile};
use kgicl::model::{score_query_traced, FactMask, Model, ModelConfig};
use kgicl::prompt::{
    extract_prompt_graph, prompts_for_relation, tokenize, PromptCache, PromptSettings,
    PromptVariant,
};
use kgicl::synth::{make_synthetic_kg, SynthSpec};
use kgicl::tensor::Tensor;
use kgicl::train::{TrainConfig, Trainer};

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(js)
}

#[derive(Serialize)]
struct Summary {
    entities: Vec<String>,
    relations: Vec<String>,
    facts: usize,
}

#[derive(Serialize)]
struct PromptEntity {
    name: String,
    token: (u32, u32),
}

#[derive(Serialize)]
struct PromptView {
    entities: Vec<PromptEntity>,
    facts: Vec<(String, String, String)>,
    relations: Vec<(String, bool)>,
}

#[derive(Serialize)]
struct FrontierLayer {
    layer: usize,
    entities: Vec<String>,
}

#[derive(Serialize)]
struct EpochView {
    epoch: usize,
    loss: f64,
    test_mrr: f64,
    test_hits10: f64,
}

/// A graph parsed from tab-separated triples.
#[wasm_bindgen]
pub struct Graph {
    ds: Dataset,
}

#[wasm_bindgen]
impl Graph {
    #[wasm_bindgen(constructor)]
    pub fn new(tsv: &str) -> Result<Graph, JsError> {
        let train = parse_triples(tsv, Path::new("input")).map_err(js)?;
        let none = TripleFile::default();
        let ds = Dataset::transductive("input".into(), Path::new("."), &train, &none, &none)
            .map_err(js)?;
        Ok(Graph { ds })
    }

    pub fn summary(&self) -> Result<String, JsError> {
        let g = &self.ds.train;
        to_json(&Summary {
            entities: g.vocab.entity_names().map(str::to_string).collect(),
            relations: g.vocab.relation_names().map(str::to_string).collect(),
            facts: g.kg.num_base_facts(),
        })
    }

    /// Prompt graph of the fact `(head, relation, tail)` with its tokens.
    pub fn prompt_graph(
        &self,
        head: &str,
        relation: &str,
        tail: &str,
        k: u32,
        variant: &str,
    ) -> Result<String, JsError> {
        let g = &self.ds.train;
        let fact = Fact::new(
            g.vocab.entity_id(head).map_err(js)?,
            g.vocab.resolve_relation(relation).map_err(js)?,
            g.vocab.entity_id(tail).map_err(js)?,
        );
        if g.kg.find(&fact).is_none() {
            return Err(JsError::new("that fact is not in the graph"));
        }
        let variant: PromptVariant = variant.parse().map_err(|e: String| JsError::new(&e))?;
        let pg = extract_prompt_graph(&g.kg, fact, k, variant, 4096, 0).map_err(js)?;
        let t = tokenize(&pg, k);
        let ename = |e: u32| g.vocab.entity_name(e).unwrap_or("?").to_string();
        let rname = |r: u32| g.vocab.relation_name(r).unwrap_or_default();
        to_json(&PromptView {
            entities: pg
                .entities
                .iter()
                .zip(&t.entity_tokens)
                .map(|(&e, &token)| PromptEntity {
                    name: ename(e),
                    token,
                })
                .collect(),
            facts: pg
                .facts
                .iter()
                .map(|f| (ename(f.head), rname(f.relation), ename(f.tail)))
                .collect(),
            relations: pg
                .relations
                .iter()
                .zip(&t.relation_flags)
                .map(|(&r, &flag)| (rname(r), flag))
                .collect(),
        })
    }

    /// Entities carrying state after each reasoning layer for the query
    /// `(head, relation, ?)`, from an untrained model.
    pub fn frontier(&self, head: &str, relation: &str, layers: usize) -> Result<String, JsError> {
        let g = &self.ds.train;
        let s = g.vocab.entity_id(head).map_err(js)?;
        let q = g.vocab.resolve_relation(relation).map_err(js)?;
        let config = ModelConfig {
            dim: 8,
            prompt_layers: 1,
            kg_layers: layers.clamp(1, 12),
            ..ModelConfig::default()
        };
        let model = Model::new(config, 0).map_err(js)?;
        let prompts = prompts_for_relation(&g.kg, q, &config.prompt, 0, None).map_err(js)?;
        let hbar = model
            .relation_prompts(&g.kg, &prompts, 0)
            .map_err(js)?
            .unwrap_or_else(|| Tensor::zeros(g.kg.num_relations(), config.dim));
        let mut sess = model.session();
        let h = sess.tape.constant(hbar);
        let (_, trace) =
            score_query_traced(&mut sess, &g.kg, s, q, h, &FactMask::none()).map_err(js)?;
        let view: Vec<FrontierLayer> = trace
            .iter()
            .enumerate()
            .map(|(layer, t)| FrontierLayer {
                layer,
                entities: t
                    .frontier
                    .iter()
                    .map(|&e| g.vocab.entity_name(e).unwrap_or("?").to_string())
                    .collect(),
            })
            .collect();
        to_json(&view)
    }
}

/// Training on a synthetic graph, one epoch per call.
#[wasm_bindgen]
pub struct SynthRun {
    trainer: Trainer,
    ds: Dataset,
    cache: PromptCache,
    seed: u64,
}

#[wasm_bindgen]
impl SynthRun {
    #[wasm_bindgen(constructor)]
    pub fn new(entities: usize, seed: u32, dim: usize, lr: f64) -> Result<SynthRun, JsError> {
        let seed = seed as u64;
        let kg = make_synthetic_kg(&SynthSpec {
            entities,
            noise: 0,
            seed,
        })
        .map_err(js)?;
        let file =
            |rows: &Vec<(String, String, String)>| TripleFile::from_rows(rows.iter().cloned());
        let ds = Dataset::transductive(
            "synthetic".into(),
            Path::new("."),
            &file(&kg.train),
            &file(&kg.valid),
            &file(&kg.test),
        )
        .map_err(js)?;
        let config = TrainConfig {
            model: ModelConfig {
                dim,
                ..ModelConfig::default()
            },
            lr,
            seed,
            ..TrainConfig::default()
        };
        let settings: PromptSettings = config.model.prompt;
        let cache = PromptCache::build(&ds.train.kg, settings, seed).map_err(js)?;
        let model = Model::new(config.model, seed).map_err(js)?;
        let trainer = Trainer::new(model, vec![ds.clone()], config).map_err(js)?;
        Ok(SynthRun {
            trainer,
            ds,
            cache,
            seed,
        })
    }

    pub fn parameters(&self) -> usize {
        self.trainer.model().num_parameters()
    }

    /// Trains one epoch and reports the loss and test metrics.
    pub fn step(&mut self) -> Result<String, JsError> {
        let loss = self.trainer.train_epoch().map_err(js)?;
        let (g, test) = self.ds.split(Split::Test);
        debug_assert_eq!(self.ds.role_of(Split::Test), GraphRole::Inference);
        let rep = evaluate(
            self.trainer.model(),
            g,
            &self.cache,
            test,
            "synthetic",
            Split::Test,
            self.seed,
        )
        .map_err(js)?;
        to_json(&EpochView {
            epoch: self.trainer.epoch(),
            loss,
            test_mrr: rep.mrr(),
            test_hits10: rep.hits10(),
        })
    }
}
