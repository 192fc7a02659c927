//! Filtered ranking, MRR and Hits@10.
//!
//! Ties are averaged: a target tied with `t - 1` other candidates sits in
//! the middle of the tie block. Unreached entities all score zero, so an
//! unreached target lands in the middle of the zero block.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::dataset::{GraphSplit, Split};
use crate::error::{Error, Result};
use crate::kg::{EntityId, Fact, FactId, KnowledgeGraph, RelationId};
use crate::model::{FactMask, Model};
use crate::prompt::PromptCache;

pub const QUERY_HEADER: [&str; 7] = [
    "dataset",
    "split",
    "direction",
    "query_head",
    "query_relation",
    "target",
    "rank",
];
pub const AGGREGATE_HEADER: [&str; 4] = ["dataset", "mrr", "hits10", "num_queries"];

/// Rank of `target` among all entities not in `filter`.
pub fn filtered_rank(scores: &[f32], target: EntityId, filter: &[EntityId]) -> Result<f64> {
    let t = target as usize;
    if t >= scores.len() {
        return Err(Error::OutOfRange {
            what: "entity",
            index: t,
            limit: scores.len(),
        });
    }
    let mut skip = vec![false; scores.len()];
    for &e in filter {
        if e == target {
            return Err(Error::TargetFiltered(target));
        }
        if let Some(s) = skip.get_mut(e as usize) {
            *s = true;
        }
    }
    let st = scores[t];
    let (mut greater, mut equal) = (0u64, 0u64);
    for (e, &s) in scores.iter().enumerate() {
        if skip[e] || e == t {
            continue;
        }
        if s > st {
            greater += 1;
        } else if s == st {
            equal += 1;
        }
    }
    Ok(greater as f64 + (equal as f64 + 2.0) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// `(s, r, ?)`
    Tail,
    /// `(o, r^-1, ?)`
    Head,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Tail => "tail",
            Direction::Head => "head",
        })
    }
}

/// A query `(head, relation, ?)` with its answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirectedQuery {
    pub head: EntityId,
    pub relation: RelationId,
    pub target: EntityId,
    pub direction: Direction,
    /// The stored fact this query was made from, when it is in the graph.
    pub fact: Option<FactId>,
}

/// `(s, r, ?)` and `(o, r^-1, ?)` for a base triple.
pub fn directed_queries(kg: &KnowledgeGraph, f: Fact) -> [DirectedQuery; 2] {
    let fact = kg.find(&f);
    let inv = kg.inverse_relation(f.relation);
    [
        DirectedQuery {
            head: f.head,
            relation: f.relation,
            target: f.tail,
            direction: Direction::Tail,
            fact,
        },
        DirectedQuery {
            head: f.tail,
            relation: inv,
            target: f.head,
            direction: Direction::Head,
            fact: fact.map(|i| kg.inverse_fact(i)),
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRecord {
    pub dataset: String,
    pub split: String,
    pub direction: String,
    pub query_head: String,
    pub query_relation: String,
    pub target: String,
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub dataset: String,
    pub mrr: f64,
    pub hits10: f64,
    pub num_queries: usize,
}

/// `(MRR, Hits@10)`; zeros for an empty list.
pub fn metrics(ranks: &[f64]) -> (f64, f64) {
    if ranks.is_empty() {
        return (0.0, 0.0);
    }
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n;
    let hits = ranks.iter().filter(|&&r| r <= 10.0).count() as f64 / n;
    (mrr, hits)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub records: Vec<QueryRecord>,
    /// Queries whose relation had no prompt graphs.
    pub unrankable: usize,
}

impl EvalReport {
    pub fn ranks(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.rank).collect()
    }

    pub fn mrr(&self) -> f64 {
        metrics(&self.ranks()).0
    }

    pub fn hits10(&self) -> f64 {
        metrics(&self.ranks()).1
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.records.extend(other.records);
        self.unrankable += other.unrankable;
    }

    /// One row per dataset, in order of first appearance.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut order: Vec<&str> = Vec::new();
        let mut by: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            let e = by.entry(&r.dataset).or_insert_with(|| {
                order.push(&r.dataset);
                Vec::new()
            });
            e.push(r.rank);
        }
        order
            .into_iter()
            .map(|d| {
                let ranks = &by[d];
                let (mrr, hits10) = metrics(ranks);
                Aggregate {
                    dataset: d.to_string(),
                    mrr,
                    hits10,
                    num_queries: ranks.len(),
                }
            })
            .collect()
    }

    pub fn write_queries_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if self.records.is_empty() {
            out.write_record(QUERY_HEADER)?;
        }
        for r in &self.records {
            out.serialize(r)?;
        }
        out.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }

    pub fn write_aggregate_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let rows = self.aggregates();
        if rows.is_empty() {
            out.write_record(AGGREGATE_HEADER)?;
        }
        for a in rows {
            out.serialize(a)?;
        }
        out.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

/// Filtered ranks of `queries`, in input order. Queries of one relation
/// share a prompt encoding; relations without prompt graphs are ranked as
/// if every candidate scored zero. Returns the ranks and the number of
/// such unrankable queries.
pub fn rank_queries(
    model: &Model,
    graph: &GraphSplit,
    cache: &PromptCache,
    queries: &[DirectedQuery],
    seed: u64,
) -> Result<(Vec<f64>, usize)> {
    let kg = &graph.kg;
    if cache.relations.len() != kg.num_relations() {
        return Err(Error::Incompatible(format!(
            "prompt cache covers {} relations, graph has {}",
            cache.relations.len(),
            kg.num_relations()
        )));
    }
    let mut groups: BTreeMap<RelationId, Vec<usize>> = BTreeMap::new();
    for (i, q) in queries.iter().enumerate() {
        if q.relation as usize >= kg.num_relations() {
            return Err(Error::OutOfRange {
                what: "relation",
                index: q.relation as usize,
                limit: kg.num_relations(),
            });
        }
        groups.entry(q.relation).or_default().push(i);
    }
    let groups: Vec<(RelationId, Vec<usize>)> = groups.into_iter().collect();
    let per_group = crate::par::map(&groups, |(rel, idx)| -> Result<Vec<(usize, f64, bool)>> {
        let hbar = model.relation_prompts(kg, cache.prompts(*rel), seed)?;
        idx.iter()
            .map(|&i| {
                let q = queries[i];
                let filter: Vec<EntityId> = graph
                    .filter
                    .objects(q.head, q.relation)
                    .iter()
                    .copied()
                    .filter(|&e| e != q.target)
                    .collect();
                let (scores, unrankable) = match &hbar {
                    Some(h) => {
                        let sv = model.score(kg, q.head, q.relation, h, &FactMask::none())?;
                        (sv.scores, false)
                    }
                    None => (vec![0.0; kg.num_entities()], true),
                };
                Ok((i, filtered_rank(&scores, q.target, &filter)?, unrankable))
            })
            .collect()
    });
    let mut ranks = vec![0.0; queries.len()];
    let mut unrankable = 0;
    for g in per_group {
        for (i, r, u) in g? {
            ranks[i] = r;
            unrankable += u as usize;
        }
    }
    Ok((ranks, unrankable))
}

/// Both directions of every triple in `triples`, ranked over `graph`.
pub fn evaluate(
    model: &Model,
    graph: &GraphSplit,
    cache: &PromptCache,
    triples: &[Fact],
    dataset: &str,
    split: Split,
    seed: u64,
) -> Result<EvalReport> {
    let queries: Vec<DirectedQuery> = triples
        .iter()
        .flat_map(|&f| directed_queries(&graph.kg, f))
        .collect();
    let (ranks, unrankable) = rank_queries(model, graph, cache, &queries, seed)?;
    let vocab = &graph.vocab;
    let ent = |e: EntityId| vocab.entity_name(e).unwrap_or("?").to_string();
    let records = queries
        .iter()
        .zip(ranks)
        .map(|(q, rank)| QueryRecord {
            dataset: dataset.to_string(),
            split: split.to_string(),
            direction: q.direction.to_string(),
            query_head: ent(q.head),
            query_relation: vocab.relation_name(q.relation).unwrap_or_default(),
            target: ent(q.target),
            rank,
        })
        .collect();
    Ok(EvalReport {
        records,
        unrankable,
    })
}
