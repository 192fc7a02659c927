//! Pre-training over several graphs, finetuning, and early stopping.
//!
//! Every training triple yields two queries, `(s, r, ?)` and
//! `(o, r^-1, ?)`. Batches of one dataset are cut from a shuffled query
//! list; batches of all datasets are interleaved at random in proportion to
//! how many each has left. Inside a batch, queries of one relation share one
//! prompt encoding and one tape. The query fact and its reverse are hidden
//! from message passing, and a prompt whose example is one of the batch's
//! query facts is swapped for a fresh draw.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::checkpoint::Checkpoint;
use crate::dataset::{Dataset, GraphRole, Split};
use crate::error::{Error, Result};
use crate::eval::{directed_queries, metrics, rank_queries, DirectedQuery};
use crate::kg::{FactId, KnowledgeGraph, RelationId};
use crate::model::{multiclass_log_loss, score_query, FactMask, Model, ModelConfig};
use crate::prompt::{extract_prompt_graph, tokenize, PromptCache, TokenizedPromptGraph};
use crate::rng::{rng_for, stream};
use crate::tensor::{adam_step, AdamState, Gradients};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Cap on validation triples per dataset (the first ones in file order).
    pub valid_limit: Option<usize>,
    /// Where to look for preprocessed prompt caches, per dataset. `None`
    /// uses the dataset directory.
    pub cache_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 1e-3,
            patience: 5,
            max_epochs: 50,
            batch_size: 32,
            seed: 0,
            valid_limit: None,
            cache_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} is invalid",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean query loss over the epoch.
    pub loss: f64,
    /// Macro-averaged validation MRR, when any dataset has validation
    /// queries.
    pub valid_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLog>,
    /// Epoch (1-based) whose parameters were kept; 0 for the initial ones.
    pub best_epoch: usize,
    pub best_valid_mrr: Option<f64>,
}

struct Source {
    data: Dataset,
    train_cache: PromptCache,
    valid_cache: Option<PromptCache>,
    valid_queries: Vec<DirectedQuery>,
}

impl Source {
    fn new(data: Dataset, config: &TrainConfig) -> Result<Self> {
        let settings = config.model.prompt;
        let dir = Some(config.cache_dir.as_deref().unwrap_or(&data.root));
        let (train_cache, _) = data.prompt_cache(GraphRole::Train, settings, config.seed, dir)?;
        for q in 0..data.train.kg.num_base_relations() as RelationId {
            if data.train.kg.relation_facts(q).is_empty() {
                log::warn!(
                    "{}: relation '{}' has no training facts",
                    data.name,
                    data.train.vocab.relation_name(q).unwrap_or_default()
                );
            }
        }
        let (graph, valid) = data.split(Split::Valid);
        let valid = match config.valid_limit {
            Some(n) => &valid[..valid.len().min(n)],
            None => valid,
        };
        let valid_queries: Vec<DirectedQuery> = valid
            .iter()
            .flat_map(|&f| directed_queries(&graph.kg, f))
            .collect();
        let valid_cache = match data.role_of(Split::Valid) {
            _ if valid_queries.is_empty() => None,
            GraphRole::Train => None,
            GraphRole::Inference => Some(
                data.prompt_cache(GraphRole::Inference, settings, config.seed, dir)?
                    .0,
            ),
        };
        Ok(Source {
            data,
            train_cache,
            valid_cache,
            valid_queries,
        })
    }

    fn train_queries(&self) -> Vec<DirectedQuery> {
        let kg = &self.data.train.kg;
        kg.base_facts()
            .iter()
            .flat_map(|&f| directed_queries(kg, f))
            .collect()
    }

    fn valid_mrr(&self, model: &Model, seed: u64) -> Result<Option<f64>> {
        if self.valid_queries.is_empty() {
            return Ok(None);
        }
        let (graph, _) = self.data.split(Split::Valid);
        let cache = self.valid_cache.as_ref().unwrap_or(&self.train_cache);
        let (ranks, _) = rank_queries(model, graph, cache, &self.valid_queries, seed)?;
        Ok(Some(metrics(&ranks).0))
    }
}

/// Prompt graphs for relation `q` with every example that is one of
/// `avoid` replaced by a fresh draw from the other facts of `q`. When `q`
/// has no other facts the original example stays.
fn prompts_avoiding(
    kg: &KnowledgeGraph,
    cache: &PromptCache,
    q: RelationId,
    avoid: &[FactId],
    seed: u64,
    tags: [u64; 2],
) -> Result<Vec<TokenizedPromptGraph>> {
    let settings = &cache.settings;
    let prompts = cache.prompts(q);
    let hit = |t: &TokenizedPromptGraph| {
        kg.find(&t.graph.example)
            .is_some_and(|id| avoid.contains(&id))
    };
    if !prompts.iter().any(hit) {
        return Ok(prompts.to_vec());
    }
    let pool: Vec<FactId> = kg
        .relation_facts(q)
        .iter()
        .copied()
        .filter(|f| !avoid.contains(f))
        .collect();
    if pool.is_empty() {
        return Ok(prompts.to_vec());
    }
    let mut rng = rng_for(seed, &[stream::RESAMPLE, tags[0], tags[1], q as u64]);
    prompts
        .iter()
        .map(|t| {
            if !hit(t) {
                return Ok(t.clone());
            }
            let c = kg.fact(pool[rng.random_range(0..pool.len())]);
            let pg =
                extract_prompt_graph(kg, c, settings.k, settings.variant, settings.fact_cap, seed)?;
            Ok(tokenize(&pg, settings.k))
        })
        .collect()
}

/// Loss and gradients of one relation group, summed over its queries.
fn group_step(
    model: &Model,
    kg: &KnowledgeGraph,
    cache: &PromptCache,
    q: RelationId,
    queries: &[DirectedQuery],
    seed: u64,
    tags: [u64; 2],
) -> Result<Option<(Gradients<f32>, f64)>> {
    let avoid: Vec<FactId> = queries.iter().filter_map(|x| x.fact).collect();
    let prompts = prompts_avoiding(kg, cache, q, &avoid, seed, tags)?;
    let mut sess = model.session();
    let Some(hbar) = sess.prompt_representation(kg.num_relations(), &prompts, seed)? else {
        return Ok(None);
    };
    let mut total = None;
    for x in queries {
        let mask = match x.fact {
            Some(f) => FactMask::fact_and_inverse(kg, f),
            None => FactMask::none(),
        };
        let scores = score_query(&mut sess, kg, x.head, q, hbar, &mask)?;
        let loss = multiclass_log_loss(&mut sess, &scores, x.target, kg.num_entities())?;
        total = Some(match total {
            None => loss,
            Some(t) => sess.tape.add(t, loss)?,
        });
    }
    let total = total.expect("group has at least one query");
    let value = sess.tape.value(total).item() as f64;
    let grads = sess.tape.backward(total)?;
    Ok(Some((grads, value)))
}

/// Stepwise training loop. [`pretrain`] and [`finetune`] drive it; it is
/// public for callers that want to watch training epoch by epoch.
pub struct Trainer {
    config: TrainConfig,
    model: Model,
    adam: AdamState,
    sources: Vec<Source>,
    step: u64,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, datasets: Vec<Dataset>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        model.config.check_compatible(&config.model)?;
        if datasets.is_empty() {
            return Err(Error::Config("no source datasets".into()));
        }
        let sources = datasets
            .into_iter()
            .map(|d| Source::new(d, &config))
            .collect::<Result<Vec<_>>>()?;
        let adam = AdamState::new(&model.params);
        Ok(Trainer {
            config,
            model,
            adam,
            sources,
            step: 0,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One optimizer step on a batch of one dataset. Returns the summed
    /// loss and the number of queries that contributed.
    fn batch(&mut self, src: usize, batch: &[DirectedQuery], index: usize) -> Result<(f64, usize)> {
        let source = &self.sources[src];
        let kg = &source.data.train.kg;
        let mut groups: BTreeMap<RelationId, Vec<DirectedQuery>> = BTreeMap::new();
        for q in batch {
            groups.entry(q.relation).or_default().push(*q);
        }
        let groups: Vec<(RelationId, Vec<DirectedQuery>)> = groups.into_iter().collect();
        let model = &self.model;
        let seed = self.config.seed;
        let tags = [self.epoch as u64, self.step];
        let results = crate::par::map(&groups, |(q, qs)| {
            group_step(model, kg, &source.train_cache, *q, qs, seed, tags).map(|r| (r, qs.len()))
        });
        let mut grads = Gradients::empty(self.model.params.len());
        let (mut loss, mut count) = (0.0, 0usize);
        for r in results {
            if let (Some((g, l)), n) = r? {
                grads.merge(g);
                loss += l;
                count += n;
            }
        }
        self.step += 1;
        if count == 0 {
            return Ok((0.0, 0));
        }
        let mean = loss / count as f64;
        if !mean.is_finite() || !grads.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss: mean,
                epoch: self.epoch + 1,
                batch: index,
                dataset: source.data.name.clone(),
            });
        }
        grads.scale(1.0 / count as f64);
        adam_step(
            &mut self.model.params,
            &grads,
            &mut self.adam,
            self.config.lr,
        );
        Ok((loss, count))
    }

    /// Runs one epoch over every dataset and returns the mean query loss.
    pub fn train_epoch(&mut self) -> Result<f64> {
        let epoch = self.epoch as u64 + 1;
        let seed = self.config.seed;
        let mut batches: Vec<Vec<Vec<DirectedQuery>>> = Vec::new();
        for (d, s) in self.sources.iter().enumerate() {
            let mut qs = s.train_queries();
            qs.shuffle(&mut rng_for(seed, &[stream::SHUFFLE, epoch, d as u64]));
            let mut chunks: Vec<Vec<DirectedQuery>> = qs
                .chunks(self.config.batch_size)
                .map(<[_]>::to_vec)
                .collect();
            chunks.reverse();
            batches.push(chunks);
        }
        let mut rng = rng_for(seed, &[stream::INTERLEAVE, epoch]);
        let (mut loss, mut count, mut index) = (0.0, 0usize, 0usize);
        loop {
            let left: usize = batches.iter().map(Vec::len).sum();
            if left == 0 {
                break;
            }
            let mut pick = rng.random_range(0..left);
            let d = batches
                .iter()
                .position(|b| {
                    if pick < b.len() {
                        true
                    } else {
                        pick -= b.len();
                        false
                    }
                })
                .expect("pick is below the number of batches left");
            let batch = batches[d].pop().expect("chosen dataset has batches left");
            let (l, n) = self.batch(d, &batch, index)?;
            loss += l;
            count += n;
            index += 1;
        }
        self.epoch += 1;
        Ok(if count == 0 { 0.0 } else { loss / count as f64 })
    }

    /// Validation MRR averaged over datasets that have validation queries.
    pub fn validate(&self) -> Result<Option<f64>> {
        let mut vals = Vec::new();
        for s in &self.sources {
            if let Some(m) = s.valid_mrr(&self.model, self.config.seed)? {
                vals.push(m);
            }
        }
        Ok((!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64))
    }

    /// Trains up to `epochs` more epochs. With `early_stop`, validates after
    /// every epoch, stops once `patience` epochs pass without a new best and
    /// returns the best parameters (later epochs win ties); otherwise
    /// returns the final ones.
    pub fn run(mut self, epochs: usize, early_stop: bool) -> Result<TrainOutcome> {
        let mut history = Vec::new();
        let mut best: Option<(f64, usize, Model)> = None;
        for _ in 0..epochs {
            let loss = self.train_epoch()?;
            let epoch = self.epoch;
            let valid_mrr = if early_stop { self.validate()? } else { None };
            log::info!(
                "epoch {epoch}: loss {loss:.5}{}",
                valid_mrr
                    .map(|m| format!(", valid mrr {m:.4}"))
                    .unwrap_or_default()
            );
            history.push(EpochLog {
                epoch,
                loss,
                valid_mrr,
            });
            if let Some(m) = valid_mrr {
                if best.as_ref().is_none_or(|b| m >= b.0) {
                    best = Some((m, epoch, self.model.clone()));
                } else if epoch - best.as_ref().map_or(0, |b| b.1) >= self.config.patience {
                    log::info!("early stop at epoch {epoch}");
                    break;
                }
            }
        }
        let seed = self.config.seed;
        let (model, best_epoch, best_valid_mrr) = match best {
            Some((m, e, model)) => (model, e, Some(m)),
            None => (self.model, self.epoch, None),
        };
        Ok(TrainOutcome {
            checkpoint: Checkpoint::new(model, seed),
            history,
            best_epoch,
            best_valid_mrr,
        })
    }
}

/// Trains a fresh model on `datasets` with early stopping on macro
/// validation MRR, returning the best-validation parameters.
pub fn pretrain(datasets: &[Dataset], config: &TrainConfig) -> Result<TrainOutcome> {
    let model = Model::new(config.model, config.seed)?;
    log::info!("model has {} parameters", model.num_parameters());
    Trainer::new(model, datasets.to_vec(), config.clone())?.run(config.max_epochs, true)
}

/// Continues training `ckpt` on one dataset for exactly `epochs` epochs
/// with a fresh optimizer state, returning the final parameters.
pub fn finetune(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    epochs: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    ckpt.model.config.check_compatible(&config.model)?;
    let config = TrainConfig {
        model: ckpt.model.config,
        ..config.clone()
    };
    if epochs == 0 {
        return Ok(TrainOutcome {
            checkpoint: ckpt.clone(),
            history: Vec::new(),
            best_epoch: 0,
            best_valid_mrr: None,
        });
    }
    let mut out =
        Trainer::new(ckpt.model.clone(), vec![dataset.clone()], config)?.run(epochs, false)?;
    out.checkpoint.seed = ckpt.seed;
    Ok(out)
}

/// Mean loss of `queries` (training-style: masked, prompts avoiding the
/// query facts) without updating anything.
pub fn mean_loss(
    model: &Model,
    dataset: &Dataset,
    cache: &PromptCache,
    queries: &[DirectedQuery],
    seed: u64,
) -> Result<f64> {
    let kg = &dataset.train.kg;
    let mut total = 0.0;
    let mut n = 0;
    for q in queries {
        if let Some((_, l)) = group_step(
            model,
            kg,
            cache,
            q.relation,
            std::slice::from_ref(q),
            seed,
            [0, 0],
        )? {
            total += l;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}
