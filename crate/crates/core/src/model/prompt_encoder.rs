//! Prompt-graph encoder: token initialization, `L` layers of
//! entity-centric then relation-centric max-pool message passing, and a
//! linear readout over the concatenated per-layer relation states.

use super::{Ablation, PromptLayerIds, Session, LN_EPS};
use crate::error::Result;
use crate::kg::RelationId;
use crate::prompt::{token_id, TokenizedPromptGraph};
use crate::rng::{derive_seed, rng_for, stream};
use crate::tensor::{Real, Tape, Tensor, Var};

/// A tokenized prompt graph re-indexed locally: entities `0..n` in the
/// order of `graph.entities`, relations `0..m` in the order of
/// `graph.relations`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptInput {
    pub k: u32,
    pub entity_tokens: Vec<(u32, u32)>,
    pub heads: Vec<u32>,
    pub rels: Vec<u32>,
    pub tails: Vec<u32>,
    /// Global relation id of each local relation.
    pub relations: Vec<RelationId>,
    pub query: u32,
    /// Seed for the random inputs of the no-tokenizer ablation.
    pub free_seed: u64,
}

impl PromptInput {
    pub fn new(t: &TokenizedPromptGraph, run_seed: u64) -> Self {
        let g = &t.graph;
        let ent = |e: u32| {
            g.entities
                .binary_search(&e)
                .expect("fact endpoint in entity set") as u32
        };
        let rel = |r: u32| {
            g.relations
                .binary_search(&r)
                .expect("fact relation in relation set") as u32
        };
        let ex = g.example;
        PromptInput {
            k: t.k,
            entity_tokens: t.entity_tokens.clone(),
            heads: g.facts.iter().map(|f| ent(f.head)).collect(),
            rels: g.facts.iter().map(|f| rel(f.relation)).collect(),
            tails: g.facts.iter().map(|f| ent(f.tail)).collect(),
            relations: g.relations.clone(),
            query: rel(ex.relation),
            free_seed: derive_seed(
                run_seed,
                &[
                    stream::FREE_INPUTS,
                    ex.head as u64,
                    ex.relation as u64,
                    ex.tail as u64,
                ],
            ),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entity_tokens.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_facts(&self) -> usize {
        self.heads.len()
    }
}

/// `(H_E, H_R)` at layer 0. Entities read their token row; the query
/// relation reads `q_token` and every other relation starts at zero.
pub fn init_token_reps<T: Real>(
    sess: &mut Session<'_, T>,
    input: &PromptInput,
) -> Result<(Var, Var)> {
    let d = sess.config().dim;
    let ne = input.num_entities();
    let nr = input.num_relations();
    match sess.config().ablation {
        Ablation::NoUnifiedTokenizer => {
            let mut rng = rng_for(input.free_seed, &[]);
            let he = Tensor::<T>::xavier_normal(ne, d, &mut rng);
            let hr = Tensor::<T>::xavier_normal(nr, d, &mut rng);
            Ok((sess.tape.constant(he), sess.tape.constant(hr)))
        }
        ablation => {
            let he = if ablation == Ablation::GrailLabeling {
                let k1 = input.k as usize + 1;
                let mut t = Tensor::<T>::zeros(ne, d);
                for (i, &(a, b)) in input.entity_tokens.iter().enumerate() {
                    let row = t.row_mut(i);
                    row[a as usize] = T::ONE;
                    row[k1 + b as usize] = T::ONE;
                }
                sess.tape.constant(t)
            } else {
                let ids: Vec<u32> = input
                    .entity_tokens
                    .iter()
                    .map(|&p| token_id(p, input.k))
                    .collect();
                let table = sess.p(sess.layout().token_table);
                sess.tape.gather_rows(table, &ids)?
            };
            let q_token = sess.p(sess.layout().q_token);
            let hr = sess.tape.scatter_rows(q_token, &[input.query], nr)?;
            Ok((he, hr))
        }
    }
}

fn attention<T: Real>(
    tape: &mut Tape<T>,
    hr: Var,
    query: u32,
    nr: usize,
    w: Var,
    rels: &[u32],
) -> Result<Var> {
    let hq = tape.gather_rows(hr, &vec![query; nr])?;
    let cat = tape.concat(&[hr, hq])?;
    let logits = tape.linear(cat, w)?;
    let alpha = tape.sigmoid(logits);
    Ok(tape.gather_rows(alpha, rels)?)
}

/// One encoder layer: entities first, then relations from the updated
/// entity states. The query vector is the current row of the query
/// relation.
pub fn prompt_layer<T: Real>(
    sess: &mut Session<'_, T>,
    input: &PromptInput,
    he: Var,
    hr: Var,
    layer: usize,
) -> Result<(Var, Var)> {
    let ids: PromptLayerIds = sess.layout().prompt_layers[layer].clone();
    let ne = input.num_entities();
    let nr = input.num_relations();
    let nf = input.num_facts();
    let q_rows = vec![input.query; nf];

    // entity-centric: messages along (s, r, e) into e
    let e_msg_w = sess.p(ids.entity_msg);
    let e_attn_w = sess.p(ids.entity_attn);
    let (e_g, e_b) = (sess.p(ids.entity_ln.0), sess.p(ids.entity_ln.1));
    let tape = &mut sess.tape;
    let hs = tape.gather_rows(he, &input.heads)?;
    let hrf = tape.gather_rows(hr, &input.rels)?;
    let hq = tape.gather_rows(hr, &q_rows)?;
    let cat = tape.concat(&[hs, hrf, hq])?;
    let msg = tape.linear(cat, e_msg_w)?;
    let alpha = attention(tape, hr, input.query, nr, e_attn_w, &input.rels)?;
    let m = tape.row_scale(alpha, msg)?;
    let pooled = tape.segment_max(m, &input.tails, ne)?;
    let act = tape.relu(pooled);
    let he_next = tape.layer_norm(act, e_g, e_b, LN_EPS)?;

    // relation-centric: messages from (s, o) of each fact into r
    let r_msg_w = sess.p(ids.relation_msg);
    let r_attn_w = sess.p(ids.relation_attn);
    let (r_g, r_b) = (sess.p(ids.relation_ln.0), sess.p(ids.relation_ln.1));
    let tape = &mut sess.tape;
    let hs = tape.gather_rows(he_next, &input.heads)?;
    let ho = tape.gather_rows(he_next, &input.tails)?;
    let cat = tape.concat(&[hs, ho, hq])?;
    let msg = tape.linear(cat, r_msg_w)?;
    let alpha = attention(tape, hr, input.query, nr, r_attn_w, &input.rels)?;
    let m = tape.row_scale(alpha, msg)?;
    let pooled = tape.segment_max(m, &input.rels, nr)?;
    let act = tape.relu(pooled);
    let res = tape.add(act, hr)?;
    let hr_next = tape.layer_norm(res, r_g, r_b, LN_EPS)?;
    Ok((he_next, hr_next))
}

/// Projects the concatenated layer outputs of every prompt relation and
/// scatters them into an `|R| x d` matrix; absent relations stay zero.
pub fn readout<T: Real>(
    sess: &mut Session<'_, T>,
    layer_states: &[Var],
    relations: &[RelationId],
    num_relations: usize,
) -> Result<Var> {
    let w = sess.p(sess.layout().readout);
    let tape = &mut sess.tape;
    let cat = tape.concat(layer_states)?;
    let local = tape.linear(cat, w)?;
    Ok(tape.scatter_rows(local, relations, num_relations)?)
}

pub fn encode_prompt_graph<T: Real>(
    sess: &mut Session<'_, T>,
    input: &PromptInput,
    num_relations: usize,
) -> Result<Var> {
    let (mut he, mut hr) = init_token_reps(sess, input)?;
    let mut states = Vec::with_capacity(sess.config().prompt_layers);
    for l in 0..sess.config().prompt_layers {
        (he, hr) = prompt_layer(sess, input, he, hr, l)?;
        states.push(hr);
    }
    readout(sess, &states, &input.relations, num_relations)
}

/// Elementwise mean of the per-graph representations.
pub fn aggregate_prompts<T: Real>(tape: &mut Tape<T>, reps: &[Var]) -> Result<Var> {
    let (first, rest) = reps
        .split_first()
        .ok_or_else(|| crate::Error::Config("no prompt representations to aggregate".into()))?;
    let mut acc = *first;
    for r in rest {
        acc = tape.add(acc, *r)?;
    }
    Ok(tape.scalar_mul(acc, 1.0 / reps.len() as f64))
}
