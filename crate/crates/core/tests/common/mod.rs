//! Oracles and fixtures shared by the property suites and the acceptance
//! runner. Every check returns `Err(description)` on the first mismatch.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;

use kgicl::eval::filtered_rank;
use kgicl::kg::{EntityId, Fact, KnowledgeGraph, RelationId};
use kgicl::model::{score_query_traced, FactMask, Model, ModelConfig};
use kgicl::prompt::{extract_prompt_graph, tokenize, PromptSettings, PromptVariant};
use kgicl::rng::rng_for;
use kgicl::tensor::{Real, Tensor};

pub const VARIANTS: [PromptVariant; 4] = [
    PromptVariant::NeighborAndPath,
    PromptVariant::NeighborOnly,
    PromptVariant::PathOnly(1),
    PromptVariant::PathOnly(2),
];

/// Random graph with up to `max_entities` entities, `max_facts` base facts
/// and `max_relations` base relations. At least one fact.
pub fn random_kg(
    seed: u64,
    max_entities: usize,
    max_facts: usize,
    max_relations: usize,
) -> KnowledgeGraph {
    let mut rng = rng_for(seed, &[0xC0FFEE]);
    let n = rng.random_range(2..=max_entities);
    let nr = rng.random_range(1..=max_relations);
    let m = rng.random_range(1..=max_facts);
    let facts: Vec<Fact> = (0..m)
        .map(|_| {
            Fact::new(
                rng.random_range(0..n as u32),
                rng.random_range(0..nr as u32),
                rng.random_range(0..n as u32),
            )
        })
        .collect();
    KnowledgeGraph::from_base_facts(n, nr, facts).unwrap()
}

/// The same graph with entity `e` renamed to `perm[e]`.
pub fn permuted(kg: &KnowledgeGraph, perm: &[EntityId]) -> KnowledgeGraph {
    let facts = kg
        .base_facts()
        .iter()
        .map(|f| Fact::new(perm[f.head as usize], f.relation, perm[f.tail as usize]));
    KnowledgeGraph::from_base_facts(kg.num_entities(), kg.num_base_relations(), facts).unwrap()
}

pub fn random_permutation(n: usize, seed: u64) -> Vec<EntityId> {
    let mut p: Vec<EntityId> = (0..n as u32).collect();
    p.shuffle(&mut rng_for(seed, &[0xBEEF]));
    p
}

/// All-pairs undirected hop distances by Floyd-Warshall. `None` is
/// unreachable.
pub fn all_pairs(n: usize, facts: &[Fact]) -> Vec<Vec<Option<u32>>> {
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0);
    }
    for f in facts {
        let (a, b) = (f.head as usize, f.tail as usize);
        if a != b {
            d[a][b] = Some(1);
            d[b][a] = Some(1);
        }
    }
    for k in 0..n {
        for i in 0..n {
            let Some(ik) = d[i][k] else { continue };
            for j in 0..n {
                if let Some(kj) = d[k][j] {
                    if d[i][j].is_none_or(|x| ik + kj < x) {
                        d[i][j] = Some(ik + kj);
                    }
                }
            }
        }
    }
    d
}

/// Prompt entity set by scanning every entity against the distance table.
pub fn brute_prompt_entities(
    kg: &KnowledgeGraph,
    c: Fact,
    k: u32,
    variant: PromptVariant,
) -> BTreeSet<EntityId> {
    let n = kg.num_entities();
    let d = all_pairs(n, kg.facts());
    let (u, v) = (c.head as usize, c.tail as usize);
    let adjacent = |a: usize, x: usize| {
        kg.facts()
            .iter()
            .any(|f| f.head as usize == a && f.tail as usize == x)
    };
    let on_path =
        |x: usize, hops: u32| matches!((d[u][x], d[x][v]), (Some(a), Some(b)) if a + b <= hops);
    (0..n)
        .filter(|&x| match variant {
            PromptVariant::NeighborAndPath => adjacent(u, x) || adjacent(v, x) || on_path(x, k),
            PromptVariant::NeighborOnly => adjacent(u, x) || adjacent(v, x) || x == u || x == v,
            PromptVariant::PathOnly(h) => on_path(x, h),
        })
        .map(|x| x as EntityId)
        .collect()
}

/// Checks extraction and tokenization of every base fact of `kg`.
pub fn check_prompt_graphs(
    kg: &KnowledgeGraph,
    k: u32,
    variant: PromptVariant,
) -> Result<usize, String> {
    let mut checked = 0;
    for &c in kg.base_facts() {
        let pg =
            extract_prompt_graph(kg, c, k, variant, usize::MAX, 0).map_err(|e| e.to_string())?;
        let want: Vec<EntityId> = brute_prompt_entities(kg, c, k, variant)
            .into_iter()
            .collect();
        if pg.entities != want {
            return Err(format!(
                "{c:?} k={k} {variant}: entities {:?} != {want:?}",
                pg.entities
            ));
        }
        let member: BTreeSet<EntityId> = want.iter().copied().collect();
        let induced: Vec<Fact> = kg
            .facts()
            .iter()
            .copied()
            .filter(|f| member.contains(&f.head) && member.contains(&f.tail))
            .collect();
        let mut got_facts = pg.facts.clone();
        let mut want_facts = induced.clone();
        got_facts.sort_by_key(|f| (f.head, f.relation, f.tail));
        want_facts.sort_by_key(|f| (f.head, f.relation, f.tail));
        if got_facts != want_facts {
            return Err(format!("{c:?} k={k} {variant}: induced facts differ"));
        }
        let t = tokenize(&pg, k);
        let d = all_pairs(kg.num_entities(), &induced);
        for (&e, &tok) in pg.entities.iter().zip(&t.entity_tokens) {
            let clamp = |x: Option<u32>| x.unwrap_or(k).min(k);
            let want = (
                clamp(d[c.head as usize][e as usize]),
                clamp(d[c.tail as usize][e as usize]),
            );
            if tok != want {
                return Err(format!(
                    "{c:?} k={k} {variant}: token of {e} is {tok:?}, want {want:?}"
                ));
            }
        }
        checked += 1;
    }
    Ok(checked)
}

/// Entities within `hops` directed steps of `s` over unmasked facts.
pub fn reachable(
    kg: &KnowledgeGraph,
    s: EntityId,
    hops: usize,
    mask: &FactMask,
) -> BTreeSet<EntityId> {
    let mut seen: BTreeSet<EntityId> = [s].into();
    let mut layer = vec![s];
    for _ in 0..hops {
        let mut next = Vec::new();
        for &e in &layer {
            for &f in kg.out_facts(e) {
                let t = kg.fact(f).tail;
                if !mask.contains(f) && seen.insert(t) {
                    next.push(t);
                }
            }
        }
        layer = next;
    }
    seen
}

pub fn small_config(dim: usize, prompt_layers: usize, kg_layers: usize) -> ModelConfig {
    ModelConfig {
        dim,
        prompt_layers,
        kg_layers,
        ..ModelConfig::default()
    }
}

/// A dense prompt matrix with distinct nonzero rows.
pub fn fake_prompts<T: Real>(num_relations: usize, dim: usize, seed: u64) -> Tensor<T> {
    let mut rng = rng_for(seed, &[0xFACE]);
    let data = (0..num_relations * dim)
        .map(|_| T::of(rng.random_range(-1.0..1.0)))
        .collect();
    Tensor::from_vec(num_relations, dim, data).unwrap()
}

/// Checks the frontier-zero and reach invariants for every
/// `(subject, relation)` pair of `kg`, with and without a fact masked.
pub fn check_frontier(model: &Model, kg: &KnowledgeGraph, seed: u64) -> Result<usize, String> {
    let dim = model.config.dim;
    let layers = model.config.kg_layers;
    let hbar: Tensor<f32> = fake_prompts(kg.num_relations(), dim, seed);
    let n = kg.num_entities();
    let mut checked = 0;
    for s in 0..n as u32 {
        for q in 0..kg.num_relations() as u32 {
            let mask = match kg.out_facts(s).first() {
                Some(&f) if q % 2 == 1 => FactMask::fact_and_inverse(kg, f),
                _ => FactMask::none(),
            };
            let mut sess = model.session();
            let h = sess.tape.constant(hbar.clone());
            let (qs, trace) =
                score_query_traced(&mut sess, kg, s, q, h, &mask).map_err(|e| e.to_string())?;
            for (l, t) in trace.iter().enumerate() {
                let want = reachable(kg, s, l, &mask);
                let got: BTreeSet<EntityId> = t.frontier.iter().copied().collect();
                if got != want {
                    return Err(format!(
                        "s={s} q={q} layer {l}: frontier {got:?} != reach {want:?}"
                    ));
                }
                let dense = t.dense_entities(&sess, n);
                for e in 0..n {
                    if !got.contains(&(e as u32)) && dense.row(e).iter().any(|x| x.to_bits() != 0) {
                        return Err(format!(
                            "s={s} q={q} layer {l}: entity {e} outside the frontier is nonzero"
                        ));
                    }
                }
            }
            let sv = qs.to_dense(&sess, n);
            let want = reachable(kg, s, layers, &mask);
            for e in 0..n {
                if sv.reached[e] != want.contains(&(e as u32)) {
                    return Err(format!("s={s} q={q}: reached mask wrong at {e}"));
                }
                if !sv.reached[e] && sv.scores[e].to_bits() != 0 {
                    return Err(format!("s={s} q={q}: unreached {e} has a nonzero score"));
                }
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Rank by sorting: the target's 1-based position among the unfiltered
/// candidates sorted by descending score, averaged over its tie block.
pub fn exhaustive_rank(scores: &[f32], target: EntityId, filter: &[EntityId]) -> f64 {
    let t = scores[target as usize];
    let mut cand: Vec<f32> = (0..scores.len() as u32)
        .filter(|e| *e == target || !filter.contains(e))
        .map(|e| scores[e as usize])
        .collect();
    cand.sort_by(|a, b| b.total_cmp(a));
    let positions: Vec<usize> = cand
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == t)
        .map(|(i, _)| i + 1)
        .collect();
    positions.iter().sum::<usize>() as f64 / positions.len() as f64
}

/// Random scores drawn from a handful of levels so ties are common.
pub fn tied_scores(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = rng_for(seed, &[0x5C0E]);
    (0..n)
        .map(|_| rng.random_range(0..5) as f32 * 0.5)
        .collect()
}

/// Checks `filtered_rank` against the sort-based oracle on random score
/// vectors and filters.
pub fn check_rank_oracle(cases: usize, seed: u64) -> Result<usize, String> {
    let mut rng = rng_for(seed, &[0x4A4E]);
    for case in 0..cases {
        let n = rng.random_range(1..=30);
        let scores = tied_scores(n, seed ^ case as u64);
        let target = rng.random_range(0..n as u32);
        let filter: Vec<EntityId> = (0..n as u32)
            .filter(|&e| e != target && rng.random_bool(0.3))
            .collect();
        let got = filtered_rank(&scores, target, &filter).map_err(|e| e.to_string())?;
        let want = exhaustive_rank(&scores, target, &filter);
        if got != want {
            return Err(format!(
                "case {case}: rank {got} != oracle {want} for {scores:?}"
            ));
        }
    }
    Ok(cases)
}

/// Object sets per `(subject, relation)` in both directions, from base
/// triples, for the evaluation oracle.
pub fn brute_filter(
    facts: &[Fact],
    num_base_relations: u32,
) -> HashMap<(EntityId, RelationId), Vec<EntityId>> {
    let mut m: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
    for f in facts {
        m.entry((f.head, f.relation)).or_default().push(f.tail);
        m.entry((f.tail, f.relation + num_base_relations))
            .or_default()
            .push(f.head);
    }
    m
}

pub fn default_settings() -> PromptSettings {
    PromptSettings::default()
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() as f64)
        .fold(0.0, f64::max)
}

/// Tape ops covered by [`gradcheck_op`].
pub const OPS: [&str; 17] = [
    "matmul",
    "matmul_t",
    "linear",
    "add",
    "sub",
    "scalar_mul",
    "concat",
    "relu",
    "sigmoid",
    "layer_norm",
    "segment_max",
    "segment_mean",
    "gather_rows",
    "scatter_rows",
    "logsumexp",
    "dot",
    "row_scale",
];

fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Gradient check of one op on random shapes (each dimension at most 8),
/// reduced to a scalar through a fixed random projection. Returns the
/// largest relative error.
pub fn gradcheck_op(op: &str, seed: u64) -> Result<f64, String> {
    use kgicl::tensor::{check_gradients, Tape, TensorError, Var};

    let mut rng = rng_for(seed, &[0x6A4D]);
    let (r, c, k) = (
        rng.random_range(1..=8usize),
        rng.random_range(1..=8usize),
        rng.random_range(1..=8usize),
    );
    let n_seg = rng.random_range(1..=4usize);
    let seg: Vec<u32> = (0..r).map(|_| rng.random_range(0..n_seg as u32)).collect();
    let idx: Vec<u32> = (0..rng.random_range(1..=8))
        .map(|_| rng.random_range(0..r as u32))
        .collect();
    let scatter_to: Vec<u32> = (0..r).map(|_| rng.random_range(0..n_seg as u32)).collect();
    let extra = rng.random_range(0..3usize);

    let inputs: Vec<Tensor<f64>> = match op {
        "matmul" => vec![random_tensor(&mut rng, r, k), random_tensor(&mut rng, k, c)],
        "matmul_t" | "linear" => vec![random_tensor(&mut rng, r, k), random_tensor(&mut rng, c, k)],
        "add" | "sub" | "dot" => vec![random_tensor(&mut rng, r, c), random_tensor(&mut rng, r, c)],
        "concat" => vec![random_tensor(&mut rng, r, c), random_tensor(&mut rng, r, k)],
        "layer_norm" => {
            let c = c.max(2);
            vec![
                random_tensor(&mut rng, r, c),
                random_tensor(&mut rng, 1, c),
                random_tensor(&mut rng, 1, c),
            ]
        }
        "row_scale" => vec![random_tensor(&mut rng, r, 1), random_tensor(&mut rng, r, c)],
        _ => vec![random_tensor(&mut rng, r, c)],
    };
    let proj_seed = seed ^ 0x9e37;

    let f = |tape: &mut Tape<f64>, v: &[Var]| -> Result<Var, TensorError> {
        let out = match op {
            "matmul" => tape.matmul(v[0], v[1], false)?,
            "matmul_t" => tape.matmul(v[0], v[1], true)?,
            "linear" => tape.linear(v[0], v[1])?,
            "add" => tape.add(v[0], v[1])?,
            "sub" => tape.sub(v[0], v[1])?,
            "scalar_mul" => tape.scalar_mul(v[0], -1.7),
            "concat" => tape.concat(&[v[0], v[1], v[0]])?,
            "relu" => tape.relu(v[0]),
            "sigmoid" => tape.sigmoid(v[0]),
            "layer_norm" => tape.layer_norm(v[0], v[1], v[2], 1e-5)?,
            "segment_max" => tape.segment_max(v[0], &seg, n_seg)?,
            "segment_mean" => tape.segment_mean(v[0], &seg, n_seg)?,
            "gather_rows" => tape.gather_rows(v[0], &idx)?,
            "scatter_rows" => tape.scatter_rows(v[0], &scatter_to, n_seg)?,
            "logsumexp" => return tape.reduce_logsumexp(v[0], extra),
            "dot" => return tape.dot(v[0], v[1]),
            "row_scale" => tape.row_scale(v[0], v[1])?,
            other => panic!("unknown op {other}"),
        };
        let [rows, cols] = tape.shape(out);
        let proj = random_tensor(&mut rng_for(proj_seed, &[]), rows, cols);
        let p = tape.constant(proj);
        tape.dot(out, p)
    };
    let report = check_gradients(&inputs, 1e-6, f).map_err(|e| format!("{op}: {e}"))?;
    Ok(report.max_rel_error())
}

/// Gradient check of the whole prompt-encoder and reasoner stack, in
/// `f64`, on a random 12-entity graph: every parameter scalar is perturbed.
/// Returns the largest per-tensor relative error and the number of
/// scalars checked.
pub fn gradcheck_composite(seed: u64) -> Result<(f64, usize), String> {
    use kgicl::model::{multiclass_log_loss, score_query};
    use kgicl::prompt::prompts_for_relation;

    let e = |x: kgicl::Error| x.to_string();
    let mut kg = random_kg(seed, 12, 30, 3);
    while kg.num_entities() != 12 {
        kg = random_kg(
            seed.wrapping_add(kg.num_entities() as u64 * 7919),
            12,
            30,
            3,
        );
    }
    let config = small_config(8, 2, 2);
    let base: Model<f64> = Model::new(config, seed).map_err(e)?.cast();
    let f0 = kg.base_facts()[0];
    let fid = kg.find(&f0).unwrap();
    let settings = PromptSettings {
        shots: 3,
        ..config.prompt
    };
    let prompts = prompts_for_relation(&kg, f0.relation, &settings, seed, Some(fid)).map_err(e)?;
    let mask = FactMask::fact_and_inverse(&kg, fid);

    let eval = |m: &Model<f64>| -> Result<(f64, u64), String> {
        let mut sess = m.session();
        let h = sess
            .prompt_representation(kg.num_relations(), &prompts, seed)
            .map_err(e)?
            .ok_or("no prompts")?;
        let qs = score_query(&mut sess, &kg, f0.head, f0.relation, h, &mask).map_err(e)?;
        let loss = multiclass_log_loss(&mut sess, &qs, f0.tail, kg.num_entities()).map_err(e)?;
        let value = sess.tape.value(loss).item();
        let sig = sess.tape.branch_signature();
        Ok((value, sig))
    };
    let analytic = {
        let mut sess = base.session();
        let h = sess
            .prompt_representation(kg.num_relations(), &prompts, seed)
            .map_err(e)?
            .unwrap();
        let qs = score_query(&mut sess, &kg, f0.head, f0.relation, h, &mask).map_err(e)?;
        let loss = multiclass_log_loss(&mut sess, &qs, f0.tail, kg.num_entities()).map_err(e)?;
        sess.tape.backward(loss).map_err(|x| x.to_string())?
    };
    let (_, base_sig) = eval(&base)?;

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut work = base.clone();
    for id in 0..base.params.len() {
        let (mut d2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        let zeros = Tensor::zeros(base.params.by_id(id).rows(), base.params.by_id(id).cols());
        let grad = analytic.get(id).unwrap_or(&zeros);
        for j in 0..base.params.by_id(id).len() {
            let x0 = base.params.by_id(id).data()[j];
            work.params.by_id_mut(id).data_mut()[j] = x0 + h;
            let (fp, sp) = eval(&work)?;
            work.params.by_id_mut(id).data_mut()[j] = x0 - h;
            let (fm, sm) = eval(&work)?;
            work.params.by_id_mut(id).data_mut()[j] = x0;
            if sp != base_sig || sm != base_sig {
                continue;
            }
            checked += 1;
            let numeric = (fp - fm) / (2.0 * h);
            let an = grad.data()[j];
            d2 += (an - numeric).powi(2);
            a2 += an * an;
            n2 += numeric * numeric;
        }
        let rel = d2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok((worst, checked))
}

/// Scores every `(s, q)` of a random graph through the full pipeline
/// (sampled prompts, encoder, reasoner), relabels the entities and scores
/// again. Returns the largest deviation between corresponding scores.
pub fn check_equivariance(seed: u64) -> Result<f64, String> {
    use kgicl::prompt::prompts_for_relation;

    let e = |x: kgicl::Error| x.to_string();
    let kg = random_kg(seed, 20, 50, 3);
    let perm = random_permutation(kg.num_entities(), seed);
    let pk = permuted(&kg, &perm);
    let model = Model::new(small_config(16, 2, 3), seed).map_err(e)?;
    let settings = PromptSettings {
        shots: 3,
        ..model.config.prompt
    };
    let mut worst: f64 = 0.0;
    for q in 0..kg.num_relations() as u32 {
        let pa = prompts_for_relation(&kg, q, &settings, seed, None).map_err(e)?;
        let pb = prompts_for_relation(&pk, q, &settings, seed, None).map_err(e)?;
        let (Some(ha), Some(hb)) = (
            model.relation_prompts(&kg, &pa, seed).map_err(e)?,
            model.relation_prompts(&pk, &pb, seed).map_err(e)?,
        ) else {
            continue;
        };
        worst = worst.max(ha.max_abs_diff(&hb));
        for s in 0..kg.num_entities() as u32 {
            let a = model.score(&kg, s, q, &ha, &FactMask::none()).map_err(e)?;
            let b = model
                .score(&pk, perm[s as usize], q, &hb, &FactMask::none())
                .map_err(e)?;
            for x in 0..kg.num_entities() {
                let y = perm[x] as usize;
                if a.reached[x] != b.reached[y] {
                    return Err(format!("q={q} s={s}: reach of {x} not preserved"));
                }
                worst = worst.max((a.scores[x] - b.scores[y]).abs() as f64);
            }
        }
    }
    Ok(worst)
}

/// Evaluates an untrained model on a synthetic dataset and recomputes
/// every rank and both metrics from scratch: dense scores per query, a
/// filter built from the raw triple files, and a sort-based rank.
pub fn check_evaluate_oracle(seed: u64) -> Result<usize, String> {
    use kgicl::dataset::{Dataset, GraphRole, Split};
    use kgicl::eval::evaluate;
    use kgicl::synth::{make_synthetic_kg, SynthSpec};

    let e = |x: kgicl::Error| x.to_string();
    let mut rng = rng_for(seed, &[0xE7A1]);
    let entities = rng.random_range(6..=30);
    let synth = make_synthetic_kg(&SynthSpec {
        entities,
        noise: rng.random_range(0..8),
        seed,
    })
    .map_err(e)?;
    let dir = tempfile::tempdir().map_err(|x| x.to_string())?;
    synth.write(dir.path()).map_err(e)?;
    let ds = Dataset::load(dir.path()).map_err(e)?;
    let model = Model::new(small_config(8, 1, 2), seed).map_err(e)?;
    let (cache, _) = ds
        .prompt_cache(GraphRole::Inference, model.config.prompt, seed, None)
        .map_err(e)?;
    let (graph, test) = ds.split(Split::Test);
    let report =
        evaluate(&model, graph, &cache, test, "synthetic", Split::Test, seed).map_err(e)?;

    let vocab = &graph.vocab;
    let all: Vec<Fact> = synth
        .train
        .iter()
        .chain(&synth.valid)
        .chain(&synth.test)
        .map(|row| vocab.resolve(row))
        .collect::<kgicl::Result<_>>()
        .map_err(e)?;
    let nb = graph.kg.num_base_relations() as u32;
    let filter = brute_filter(&all, nb);
    let mut ranks = Vec::new();
    for f in test {
        for (s, q, t) in [
            (f.head, f.relation, f.tail),
            (f.tail, f.relation + nb, f.head),
        ] {
            let others: Vec<EntityId> = filter[&(s, q)]
                .iter()
                .copied()
                .filter(|&x| x != t)
                .collect();
            let scores = match model
                .relation_prompts(&graph.kg, cache.prompts(q), seed)
                .map_err(e)?
            {
                Some(h) => {
                    model
                        .score(&graph.kg, s, q, &h, &FactMask::none())
                        .map_err(e)?
                        .scores
                }
                None => vec![0.0; graph.kg.num_entities()],
            };
            ranks.push(exhaustive_rank(&scores, t, &others));
        }
    }
    if ranks != report.ranks() {
        return Err(format!("ranks {:?} != oracle {ranks:?}", report.ranks()));
    }
    let mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / ranks.len() as f64;
    let hits = ranks.iter().filter(|&&r| r <= 10.0).count() as f64 / ranks.len() as f64;
    if (mrr - report.mrr()).abs() > 1e-12 || (hits - report.hits10()).abs() > 1e-12 {
        return Err(format!(
            "metrics ({}, {}) != oracle ({mrr}, {hits})",
            report.mrr(),
            report.hits10()
        ));
    }
    Ok(ranks.len())
}
