//! Conditional message passing over the whole graph for one query
//! `(s, q, ?)`.
//!
//! Only entities within `l` hops of `s` carry state at layer `l`. State is
//! stored compactly: row `i` of the entity matrix belongs to `frontier[i]`,
//! and rows for entities outside the frontier do not exist, so they are
//! exactly zero by construction. Messages at layer `l` are only sent from
//! entities already in the layer-`l` frontier.

use super::{KgLayerIds, Session, LN_EPS};
use crate::error::{Error, Result};
use crate::kg::{EntityId, FactId, KnowledgeGraph, RelationId};
use crate::tensor::{Real, Tensor, Var};

/// Facts hidden from message passing (the query fact and its reverse
/// during training).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FactMask(Vec<FactId>);

impl FactMask {
    pub fn none() -> Self {
        FactMask(Vec::new())
    }

    pub fn new(mut ids: Vec<FactId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        FactMask(ids)
    }

    /// Masks `f` and its reverse.
    pub fn fact_and_inverse(kg: &KnowledgeGraph, f: FactId) -> Self {
        Self::new(vec![f, kg.inverse_fact(f)])
    }

    pub fn contains(&self, f: FactId) -> bool {
        self.0.contains(&f)
    }

    pub fn ids(&self) -> &[FactId] {
        &self.0
    }
}

/// Dense per-entity scores with the reached mask. Unreached entities
/// score exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f32>,
    pub reached: Vec<bool>,
}

/// Scores for the entities of the final frontier, still on the tape.
#[derive(Debug, Clone)]
pub struct QueryScores {
    pub frontier: Vec<EntityId>,
    /// `|frontier| x 1`.
    pub scores: Var,
}

impl QueryScores {
    pub fn to_dense<T: Real>(&self, sess: &Session<'_, T>, num_entities: usize) -> ScoreVector {
        let mut scores = vec![0.0f32; num_entities];
        let mut reached = vec![false; num_entities];
        let vals = sess.tape.value(self.scores).data();
        for (i, &e) in self.frontier.iter().enumerate() {
            scores[e as usize] = vals[i].f64() as f32;
            reached[e as usize] = true;
        }
        ScoreVector { scores, reached }
    }
}

/// Entity states after one layer, for inspection.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub frontier: Vec<EntityId>,
    pub entities: Var,
    pub relations: Var,
}

impl LayerTrace {
    /// `|E| x d` matrix with zeros outside the frontier.
    pub fn dense_entities<T: Real>(&self, sess: &Session<'_, T>, num_entities: usize) -> Tensor<T> {
        let v = sess.tape.value(self.entities);
        let mut out = Tensor::zeros(num_entities, v.cols());
        for (i, &e) in self.frontier.iter().enumerate() {
            out.row_mut(e as usize).copy_from_slice(v.row(i));
        }
        out
    }
}

pub(crate) struct Frontier {
    pub entities: Vec<EntityId>,
    pos: Vec<u32>,
}

impl Frontier {
    fn start(s: EntityId, num_entities: usize) -> Self {
        let mut pos = vec![u32::MAX; num_entities];
        pos[s as usize] = 0;
        Frontier {
            entities: vec![s],
            pos,
        }
    }

    fn local_or_insert(&mut self, e: EntityId) -> u32 {
        let p = &mut self.pos[e as usize];
        if *p == u32::MAX {
            *p = self.entities.len() as u32;
            self.entities.push(e);
        }
        *p
    }
}

/// `(V_E, V_R)` at layer 0: relations take the prompt matrix and the
/// subject takes the query relation's row. The entity matrix holds only
/// the subject row.
pub fn init_kg_reps<T: Real>(
    sess: &mut Session<'_, T>,
    hbar: Var,
    s: EntityId,
    q: RelationId,
    kg: &KnowledgeGraph,
) -> Result<(Var, Var)> {
    if s as usize >= kg.num_entities() {
        return Err(Error::OutOfRange {
            what: "entity",
            index: s as usize,
            limit: kg.num_entities(),
        });
    }
    if q as usize >= kg.num_relations() {
        return Err(Error::OutOfRange {
            what: "relation",
            index: q as usize,
            limit: kg.num_relations(),
        });
    }
    let [rows, _] = sess.tape.shape(hbar);
    if rows != kg.num_relations() {
        return Err(Error::Config(format!(
            "prompt matrix has {rows} rows for {} relations",
            kg.num_relations()
        )));
    }
    let ve = sess.tape.gather_rows(hbar, &[q])?;
    Ok((ve, hbar))
}

/// One reasoning layer. Relations update first; entities then aggregate
/// gated messages from frontier senders, and the frontier grows by one hop.
/// The subject additionally receives its own previous state as a message.
#[allow(clippy::too_many_arguments)]
pub fn kg_layer<T: Real>(
    sess: &mut Session<'_, T>,
    kg: &KnowledgeGraph,
    ve: Var,
    vr: Var,
    frontier: &mut Vec<EntityId>,
    layer: usize,
    q: RelationId,
    mask: &FactMask,
) -> Result<(Var, Var)> {
    let mut f = Frontier {
        entities: std::mem::take(frontier),
        pos: vec![u32::MAX; kg.num_entities()],
    };
    for (i, &e) in f.entities.iter().enumerate() {
        f.pos[e as usize] = i as u32;
    }
    let out = kg_layer_inner(sess, kg, ve, vr, &mut f, layer, q, mask);
    *frontier = f.entities;
    out
}

#[allow(clippy::too_many_arguments)]
fn kg_layer_inner<T: Real>(
    sess: &mut Session<'_, T>,
    kg: &KnowledgeGraph,
    ve: Var,
    vr: Var,
    frontier: &mut Frontier,
    layer: usize,
    q: RelationId,
    mask: &FactMask,
) -> Result<(Var, Var)> {
    let ids: KgLayerIds = sess.layout().kg_layers[layer].clone();
    let w_r = sess.p(ids.relation_w);
    let w_msg = sess.p(ids.msg);
    let p_s = sess.p(ids.attn_subject);
    let p_r = sess.p(ids.attn_relation);
    let p_q = sess.p(ids.attn_query);
    let a_row = sess.p(ids.attn_row);
    let (r_g, r_b) = (sess.p(ids.relation_ln.0), sess.p(ids.relation_ln.1));
    let (e_g, e_b) = (sess.p(ids.entity_ln.0), sess.p(ids.entity_ln.1));
    let tape = &mut sess.tape;

    // relations: LN(V + relu(W V))
    let lin = tape.linear(vr, w_r)?;
    let act = tape.relu(lin);
    let res = tape.add(vr, act)?;
    let vr_next = tape.layer_norm(res, r_g, r_b, LN_EPS)?;

    // edges from the current frontier
    let senders = frontier.entities.len();
    let (mut src, mut rel, mut dst) = (Vec::new(), Vec::new(), Vec::new());
    for xi in 0..senders {
        let x = frontier.entities[xi];
        for &fid in kg.out_facts(x) {
            if mask.contains(fid) {
                continue;
            }
            let fact = kg.fact(fid);
            src.push(xi as u32);
            rel.push(fact.relation);
            dst.push(frontier.local_or_insert(fact.tail));
        }
    }
    let receivers = frontier.entities.len();
    let nf = src.len();

    // message W_msg (x + r) = W_msg x + W_msg r, projected once per row
    let x_proj = tape.linear(ve, w_msg)?;
    let r_proj = tape.linear(vr_next, w_msg)?;
    // gate a . (P_s x + P_r r + P_q q), likewise split per row
    let xs = tape.linear(ve, p_s)?;
    let gx = tape.linear(xs, a_row)?;
    let rs = tape.linear(vr_next, p_r)?;
    let gr = tape.linear(rs, a_row)?;
    let qrow = tape.gather_rows(vr_next, &[q])?;
    let qs = tape.linear(qrow, p_q)?;
    let gq = tape.linear(qs, a_row)?;

    // one extra row: the subject's self-message
    let total = nf + 1;
    let mut seg = dst;
    seg.push(0);
    let edge_rows: Vec<u32> = (0..nf as u32).collect();

    let mx = tape.gather_rows(x_proj, &src)?;
    let mr = tape.gather_rows(r_proj, &rel)?;
    let msg = tape.add(mx, mr)?;
    let lx = tape.gather_rows(gx, &src)?;
    let lr = tape.gather_rows(gr, &rel)?;
    let lq = tape.gather_rows(gq, &vec![0; nf])?;
    let l1 = tape.add(lx, lr)?;
    let logits = tape.add(l1, lq)?;
    let alpha = tape.sigmoid(logits);
    let gated = tape.row_scale(alpha, msg)?;

    let edges = tape.scatter_rows(gated, &edge_rows, total)?;
    let own = tape.gather_rows(ve, &[0])?;
    let own = tape.scatter_rows(own, &[nf as u32], total)?;
    let all = tape.add(edges, own)?;
    let pooled = tape.segment_mean(all, &seg, receivers)?;
    let act = tape.relu(pooled);
    let ve_next = tape.layer_norm(act, e_g, e_b, LN_EPS)?;
    Ok((ve_next, vr_next))
}

fn run<T: Real>(
    sess: &mut Session<'_, T>,
    kg: &KnowledgeGraph,
    s: EntityId,
    q: RelationId,
    hbar: Var,
    mask: &FactMask,
    mut trace: Option<&mut Vec<LayerTrace>>,
) -> Result<QueryScores> {
    let (mut ve, mut vr) = init_kg_reps(sess, hbar, s, q, kg)?;
    let mut frontier = Frontier::start(s, kg.num_entities());
    if let Some(t) = trace.as_deref_mut() {
        t.push(LayerTrace {
            frontier: frontier.entities.clone(),
            entities: ve,
            relations: vr,
        });
    }
    for l in 0..sess.config().kg_layers {
        (ve, vr) = kg_layer_inner(sess, kg, ve, vr, &mut frontier, l, q, mask)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(LayerTrace {
                frontier: frontier.entities.clone(),
                entities: ve,
                relations: vr,
            });
        }
    }
    let w = sess.p(sess.layout().score);
    let scores = sess.tape.linear(ve, w)?;
    Ok(QueryScores {
        frontier: frontier.entities,
        scores,
    })
}

/// Runs initialization and all layers, then scores the final frontier.
pub fn score_query<T: Real>(
    sess: &mut Session<'_, T>,
    kg: &KnowledgeGraph,
    s: EntityId,
    q: RelationId,
    hbar: Var,
    mask: &FactMask,
) -> Result<QueryScores> {
    run(sess, kg, s, q, hbar, mask, None)
}

/// Like [`score_query`], also returning the state after every layer
/// (index 0 is the initialization).
pub fn score_query_traced<T: Real>(
    sess: &mut Session<'_, T>,
    kg: &KnowledgeGraph,
    s: EntityId,
    q: RelationId,
    hbar: Var,
    mask: &FactMask,
) -> Result<(QueryScores, Vec<LayerTrace>)> {
    let mut trace = Vec::new();
    let qs = run(sess, kg, s, q, hbar, mask, Some(&mut trace))?;
    Ok((qs, trace))
}

/// `-f(target) + log sum_e exp f(e)` over all entities, unreached entities
/// contributing `exp(0)`.
pub fn multiclass_log_loss<T: Real>(
    sess: &mut Session<'_, T>,
    scores: &QueryScores,
    target: EntityId,
    num_entities: usize,
) -> Result<Var> {
    if target as usize >= num_entities {
        return Err(Error::OutOfRange {
            what: "entity",
            index: target as usize,
            limit: num_entities,
        });
    }
    let tape = &mut sess.tape;
    let unreached = num_entities - scores.frontier.len();
    let lse = tape.reduce_logsumexp(scores.scores, unreached)?;
    match scores.frontier.iter().position(|&e| e == target) {
        Some(i) => {
            let pick = tape.gather_rows(scores.scores, &[i as u32])?;
            Ok(tape.sub(lse, pick)?)
        }
        None => Ok(lse),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Fact;
    use crate::model::{Model, ModelConfig};
    use crate::tensor::Tensor;

    fn small() -> Model<f64> {
        let config = ModelConfig {
            dim: 4,
            prompt_layers: 1,
            kg_layers: 3,
            ..ModelConfig::default()
        };
        Model::<f32>::new(config, 3).unwrap().cast()
    }

    fn chain(n: u32) -> KnowledgeGraph {
        KnowledgeGraph::from_base_facts(n as usize, 1, (0..n - 1).map(|i| Fact::new(i, 0, i + 1)))
            .unwrap()
    }

    fn hbar(kg: &KnowledgeGraph, dim: usize) -> Tensor<f64> {
        let data = (0..kg.num_relations() * dim)
            .map(|i| 0.1 * (i as f64 + 1.0))
            .collect();
        Tensor::from_vec(kg.num_relations(), dim, data).unwrap()
    }

    #[test]
    fn frontier_grows_one_hop_per_layer() {
        let m = small();
        let kg = chain(6);
        let mut sess = m.session();
        let h = sess.tape.constant(hbar(&kg, 4));
        let (qs, trace) = score_query_traced(&mut sess, &kg, 0, 0, h, &FactMask::none()).unwrap();
        let sizes: Vec<usize> = trace.iter().map(|t| t.frontier.len()).collect();
        assert_eq!(sizes, vec![1, 2, 3, 4]);
        let sv = qs.to_dense(&sess, 6);
        assert_eq!(sv.reached, vec![true, true, true, true, false, false]);
        assert_eq!(&sv.scores[4..], &[0.0, 0.0]);
        for t in &trace {
            let dense = t.dense_entities(&sess, 6);
            for e in 0..6u32 {
                if !t.frontier.contains(&e) {
                    assert!(dense.row(e as usize).iter().all(|&x| x == 0.0));
                }
            }
        }
    }

    #[test]
    fn isolated_subject_reaches_nothing_else() {
        let m = small();
        let kg = KnowledgeGraph::from_base_facts(4, 1, [Fact::new(1, 0, 2)]).unwrap();
        let mut sess = m.session();
        let h = sess.tape.constant(hbar(&kg, 4));
        let qs = score_query(&mut sess, &kg, 3, 0, h, &FactMask::none()).unwrap();
        assert_eq!(qs.frontier, vec![3]);
        let sv = qs.to_dense(&sess, 4);
        assert_eq!(&sv.scores[..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn masking_cuts_the_only_path() {
        let m = small();
        let kg = chain(3);
        let mask = FactMask::fact_and_inverse(&kg, kg.find(&Fact::new(0, 0, 1)).unwrap());
        let mut sess = m.session();
        let h = sess.tape.constant(hbar(&kg, 4));
        let qs = score_query(&mut sess, &kg, 0, 0, h, &mask).unwrap();
        assert_eq!(qs.frontier, vec![0]);
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let m = small();
        let kg = chain(5);
        let h = hbar(&kg, 4);
        let run = || {
            let mut sess = m.session();
            let hv = sess.tape.constant(h.clone());
            let qs = score_query(&mut sess, &kg, 1, 1, hv, &FactMask::none()).unwrap();
            qs.to_dense(&sess, 5).scores
        };
        let a = run();
        assert_eq!(a, run());
    }

    #[test]
    fn loss_with_zero_scorer_is_log_entity_count() {
        let mut m = small();
        m.params.get_mut("kg.score").unwrap().data_mut().fill(0.0);
        let kg = chain(4);
        let mut sess = m.session();
        let h = sess.tape.constant(hbar(&kg, 4));
        let qs = score_query(&mut sess, &kg, 0, 0, h, &FactMask::none()).unwrap();
        let loss = multiclass_log_loss(&mut sess, &qs, 2, 4).unwrap();
        assert!((sess.tape.value(loss).item() - 4f64.ln()).abs() < 1e-12);

        let kg = KnowledgeGraph::from_base_facts(2, 1, []).unwrap();
        let mut sess = m.session();
        let h = sess.tape.constant(hbar(&kg, 4));
        let qs = score_query(&mut sess, &kg, 0, 0, h, &FactMask::none()).unwrap();
        let loss = multiclass_log_loss(&mut sess, &qs, 1, 2).unwrap();
        assert!((sess.tape.value(loss).item() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bad_subject_is_out_of_range() {
        let m = small();
        let kg = chain(3);
        let mut sess = m.session();
        let h = sess.tape.constant(hbar(&kg, 4));
        assert!(matches!(
            score_query(&mut sess, &kg, 9, 0, h, &FactMask::none()),
            Err(Error::OutOfRange { .. })
        ));
    }
}
