//! Example sampling, prompt-graph extraction and the unified tokenizer.
//!
//! A prompt graph for an example fact `(u, q, v)` holds the one-hop
//! neighbours of `u` and `v` plus every entity on a path of length at most
//! `k` between them, together with all facts induced on that entity set.
//! Entities are tokenized by their clamped shortest-path distances to `u`
//! and `v` inside the prompt graph; relations by whether they equal `q`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, Fact, FactId, KnowledgeGraph, RelationId};
use crate::rng::{rng_for, stream};

/// Which entities a prompt graph keeps around its example fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PromptVariant {
    /// Neighbours of both endpoints plus all entities on `k`-hop paths.
    #[default]
    NeighborAndPath,
    /// Neighbours of both endpoints only.
    NeighborOnly,
    /// Entities on paths of at most the given length only.
    PathOnly(u32),
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptVariant::NeighborAndPath => f.write_str("neighbor_and_path"),
            PromptVariant::NeighborOnly => f.write_str("neighbor_only"),
            PromptVariant::PathOnly(x) => write!(f, "path_only:{x}"),
        }
    }
}

impl FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "neighbor_and_path" => Ok(PromptVariant::NeighborAndPath),
            "neighbor_only" => Ok(PromptVariant::NeighborOnly),
            _ => s
                .strip_prefix("path_only:")
                .and_then(|x| x.parse().ok())
                .filter(|x| *x >= 1)
                .map(PromptVariant::PathOnly)
                .ok_or_else(|| {
                    format!(
                        "unknown prompt variant '{s}' (expected neighbor_and_path, neighbor_only or path_only:<hops>)"
                    )
                }),
        }
    }
}

impl TryFrom<String> for PromptVariant {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<PromptVariant> for String {
    fn from(v: PromptVariant) -> String {
        v.to_string()
    }
}

/// Knobs of prompt generation that must match between preprocessing,
/// training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSettings {
    pub shots: usize,
    pub k: u32,
    pub variant: PromptVariant,
    pub fact_cap: usize,
}

impl Default for PromptSettings {
    fn default() -> Self {
        PromptSettings {
            shots: 5,
            k: 3,
            variant: PromptVariant::NeighborAndPath,
            fact_cap: 4096,
        }
    }
}

impl PromptSettings {
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::Config("shots must be at least 1".into()));
        }
        if self.k == 0 || self.k > 250 {
            return Err(Error::Config(format!(
                "hop bound k={} out of range",
                self.k
            )));
        }
        if self.fact_cap < 2 {
            return Err(Error::Config("prompt fact cap must be at least 2".into()));
        }
        Ok(())
    }

    pub fn num_entity_tokens(&self) -> usize {
        num_entity_tokens(self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleSet {
    pub relation: RelationId,
    pub examples: Vec<Fact>,
}

/// Draws `m` example facts of relation `q` uniformly, without replacement
/// when the pool allows it and with replacement otherwise.
pub fn sample_examples(
    kg: &KnowledgeGraph,
    q: RelationId,
    m: usize,
    seed: u64,
    exclude: Option<FactId>,
) -> Result<ExampleSet> {
    if q as usize >= kg.num_relations() {
        return Err(Error::OutOfRange {
            what: "relation",
            index: q as usize,
            limit: kg.num_relations(),
        });
    }
    let pool: Vec<FactId> = kg
        .relation_facts(q)
        .iter()
        .copied()
        .filter(|f| Some(*f) != exclude)
        .collect();
    if pool.is_empty() {
        return Err(Error::NoExamples(q));
    }
    let mut rng = rng_for(seed, &[stream::EXAMPLES, q as u64]);
    let picks: Vec<usize> = if pool.len() >= m {
        index::sample(&mut rng, pool.len(), m).into_vec()
    } else {
        (0..m).map(|_| rng.random_range(0..pool.len())).collect()
    };
    Ok(ExampleSet {
        relation: q,
        examples: picks.into_iter().map(|i| kg.fact(pool[i])).collect(),
    })
}

/// Hop distances from `source` over `facts`, each fact traversable in both
/// directions. Entities farther than `cap` or unreachable are absent.
pub fn bfs_distances(facts: &[Fact], source: EntityId, cap: u32) -> HashMap<EntityId, u32> {
    let mut adj: HashMap<EntityId, Vec<EntityId>> = HashMap::new();
    for f in facts {
        adj.entry(f.head).or_default().push(f.tail);
        adj.entry(f.tail).or_default().push(f.head);
    }
    let mut dist = HashMap::from([(source, 0u32)]);
    let mut queue = VecDeque::from([source]);
    while let Some(x) = queue.pop_front() {
        let d = dist[&x];
        if d == cap {
            continue;
        }
        for &y in adj.get(&x).map(Vec::as_slice).unwrap_or(&[]) {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(y) {
                e.insert(d + 1);
                queue.push_back(y);
            }
        }
    }
    dist
}

/// Bounded BFS over the whole graph along stored facts (undirected, since
/// every fact has its reverse).
pub fn kg_distances(kg: &KnowledgeGraph, source: EntityId, cap: u32) -> HashMap<EntityId, u32> {
    let mut dist = HashMap::from([(source, 0u32)]);
    let mut queue = VecDeque::from([source]);
    while let Some(x) = queue.pop_front() {
        let d = dist[&x];
        if d == cap {
            continue;
        }
        for &f in kg.out_facts(x) {
            let y = kg.fact(f).tail;
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(y) {
                e.insert(d + 1);
                queue.push_back(y);
            }
        }
    }
    dist
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptGraph {
    pub example: Fact,
    /// Sorted entity ids.
    pub entities: Vec<EntityId>,
    /// Induced facts, ordered by fact id.
    pub facts: Vec<Fact>,
    /// Sorted relation ids appearing in `facts`.
    pub relations: Vec<RelationId>,
}

/// Entity set of the prompt graph for `c` before fact induction.
pub fn prompt_entities(
    kg: &KnowledgeGraph,
    c: Fact,
    k: u32,
    variant: PromptVariant,
) -> Vec<EntityId> {
    let mut set: HashSet<EntityId> = HashSet::new();
    let neighbours = |set: &mut HashSet<EntityId>, e: EntityId| {
        set.extend(kg.out_facts(e).iter().map(|&f| kg.fact(f).tail));
    };
    let paths = |set: &mut HashSet<EntityId>, hops: u32| {
        let du = kg_distances(kg, c.head, hops);
        let dv = kg_distances(kg, c.tail, hops);
        set.extend(
            du.iter()
                .filter(|(x, a)| dv.get(x).is_some_and(|b| *a + b <= hops))
                .map(|(x, _)| *x),
        );
    };
    match variant {
        PromptVariant::NeighborAndPath => {
            neighbours(&mut set, c.head);
            neighbours(&mut set, c.tail);
            paths(&mut set, k);
        }
        PromptVariant::NeighborOnly => {
            neighbours(&mut set, c.head);
            neighbours(&mut set, c.tail);
            set.extend([c.head, c.tail]);
        }
        PromptVariant::PathOnly(x) => paths(&mut set, x),
    }
    let mut v: Vec<EntityId> = set.into_iter().collect();
    v.sort_unstable();
    v
}

/// Builds the prompt graph of example `c`. When more than `cap` facts are
/// induced, the example fact and its reverse are kept and the rest are
/// subsampled uniformly.
pub fn extract_prompt_graph(
    kg: &KnowledgeGraph,
    c: Fact,
    k: u32,
    variant: PromptVariant,
    cap: usize,
    seed: u64,
) -> Result<PromptGraph> {
    let example_id = kg
        .find(&c)
        .ok_or_else(|| Error::Config(format!("example fact {c:?} is not in the graph")))?;
    let entities = prompt_entities(kg, c, k, variant);
    let member: HashSet<EntityId> = entities.iter().copied().collect();
    let mut ids: Vec<FactId> = entities
        .iter()
        .flat_map(|&e| kg.out_facts(e).iter().copied())
        .filter(|&f| member.contains(&kg.fact(f).tail))
        .collect();
    ids.sort_unstable();

    let cap = cap.max(2);
    if ids.len() > cap {
        let keep = [example_id, kg.inverse_fact(example_id)];
        let rest: Vec<FactId> = ids.iter().copied().filter(|f| !keep.contains(f)).collect();
        let mut rng = rng_for(seed, &[stream::SUBSAMPLE, example_id as u64]);
        let take = cap - keep.len();
        let mut kept: Vec<FactId> = index::sample(&mut rng, rest.len(), take)
            .into_iter()
            .map(|i| rest[i])
            .collect();
        kept.extend(keep);
        kept.sort_unstable();
        kept.dedup();
        ids = kept;
    }

    let facts: Vec<Fact> = ids.iter().map(|&f| kg.fact(f)).collect();
    let mut relations: Vec<RelationId> = facts.iter().map(|f| f.relation).collect();
    relations.sort_unstable();
    relations.dedup();
    Ok(PromptGraph {
        example: c,
        entities,
        facts,
        relations,
    })
}

/// Number of entity tokens: every clamped distance pair in `[0, k]^2`.
pub fn num_entity_tokens(k: u32) -> usize {
    ((k + 1) * (k + 1)) as usize
}

pub fn token_id(pair: (u32, u32), k: u32) -> u32 {
    pair.0 * (k + 1) + pair.1
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedPromptGraph {
    pub graph: PromptGraph,
    pub k: u32,
    /// `(dist(u, e), dist(v, e))` clamped to `k`, aligned with `graph.entities`.
    pub entity_tokens: Vec<(u32, u32)>,
    /// Aligned with `graph.relations`; true iff the relation is the query.
    pub relation_flags: Vec<bool>,
}

impl TokenizedPromptGraph {
    pub fn query(&self) -> RelationId {
        self.graph.example.relation
    }

    pub fn token_ids(&self) -> Vec<u32> {
        self.entity_tokens
            .iter()
            .map(|&p| token_id(p, self.k))
            .collect()
    }
}

pub fn tokenize(pg: &PromptGraph, k: u32) -> TokenizedPromptGraph {
    let du = bfs_distances(&pg.facts, pg.example.head, k);
    let dv = bfs_distances(&pg.facts, pg.example.tail, k);
    let clamp = |d: Option<&u32>| d.copied().unwrap_or(k).min(k);
    let entity_tokens = pg
        .entities
        .iter()
        .map(|e| (clamp(du.get(e)), clamp(dv.get(e))))
        .collect();
    let relation_flags = pg
        .relations
        .iter()
        .map(|&r| r == pg.example.relation)
        .collect();
    TokenizedPromptGraph {
        graph: pg.clone(),
        k,
        entity_tokens,
        relation_flags,
    }
}

/// Samples, extracts and tokenizes the prompt graphs for one relation.
/// Relations without facts yield an empty list.
pub fn prompts_for_relation(
    kg: &KnowledgeGraph,
    q: RelationId,
    settings: &PromptSettings,
    seed: u64,
    exclude: Option<FactId>,
) -> Result<Vec<TokenizedPromptGraph>> {
    let set = match sample_examples(kg, q, settings.shots, seed, exclude) {
        Ok(s) => s,
        Err(Error::NoExamples(_)) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    set.examples
        .iter()
        .map(|&c| {
            let pg =
                extract_prompt_graph(kg, c, settings.k, settings.variant, settings.fact_cap, seed)?;
            Ok(tokenize(&pg, settings.k))
        })
        .collect()
}

/// Per-relation tokenized prompt graphs for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptCache {
    pub settings: PromptSettings,
    pub seed: u64,
    pub graph_fingerprint: String,
    pub relations: Vec<Vec<TokenizedPromptGraph>>,
}

impl PromptCache {
    pub fn build(kg: &KnowledgeGraph, settings: PromptSettings, seed: u64) -> Result<Self> {
        settings.validate()?;
        let rels: Vec<RelationId> = (0..kg.num_relations() as RelationId).collect();
        let relations = crate::par::map(&rels, |&q| {
            prompts_for_relation(kg, q, &settings, seed, None)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(PromptCache {
            settings,
            seed,
            graph_fingerprint: kg.fingerprint(),
            relations,
        })
    }

    pub fn prompts(&self, q: RelationId) -> &[TokenizedPromptGraph] {
        self.relations
            .get(q as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn matches(&self, kg: &KnowledgeGraph, settings: &PromptSettings, seed: u64) -> bool {
        self.graph_fingerprint == kg.fingerprint()
            && self.settings == *settings
            && self.seed == seed
            && self.relations.len() == kg.num_relations()
    }
}

pub mod cache_file {
    //! JSON prompt cache: a format tag, the generation settings, and per
    //! relation the example facts with their serialized prompt graphs.

    use std::fs;
    use std::path::Path;

    use serde::{Deserialize, Serialize};

    use super::{PromptCache, PromptGraph, PromptSettings, TokenizedPromptGraph};
    use crate::error::{Error, Result};
    use crate::kg::{Fact, KnowledgeGraph, Vocab};

    pub const FORMAT: &str = "kgicl-prompt-cache/1";
    pub const FILE_NAME: &str = "prompt_cache.json";

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct CacheDoc {
        format: String,
        seed: u64,
        settings: PromptSettings,
        graph: String,
        num_entities: usize,
        num_relations: usize,
        relations: Vec<RelationEntry>,
    }

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct RelationEntry {
        relation: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        examples: Vec<ExampleEntry>,
    }

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct ExampleEntry {
        example: [u32; 3],
        entities: Vec<u32>,
        tokens: Vec<[u32; 2]>,
        facts: Vec<[u32; 3]>,
        relation_flags: Vec<(u32, u8)>,
    }

    fn triple(f: &Fact) -> [u32; 3] {
        [f.head, f.relation, f.tail]
    }

    fn fact(t: [u32; 3]) -> Fact {
        Fact::new(t[0], t[1], t[2])
    }

    pub fn to_json(
        cache: &PromptCache,
        kg: &KnowledgeGraph,
        vocab: Option<&Vocab>,
    ) -> Result<String> {
        let doc = CacheDoc {
            format: FORMAT.into(),
            seed: cache.seed,
            settings: cache.settings,
            graph: cache.graph_fingerprint.clone(),
            num_entities: kg.num_entities(),
            num_relations: kg.num_relations(),
            relations: cache
                .relations
                .iter()
                .enumerate()
                .map(|(r, tpgs)| RelationEntry {
                    relation: r as u32,
                    name: vocab.and_then(|v| v.relation_name(r as u32)),
                    examples: tpgs
                        .iter()
                        .map(|t| ExampleEntry {
                            example: triple(&t.graph.example),
                            entities: t.graph.entities.clone(),
                            tokens: t.entity_tokens.iter().map(|&(a, b)| [a, b]).collect(),
                            facts: t.graph.facts.iter().map(triple).collect(),
                            relation_flags: t
                                .graph
                                .relations
                                .iter()
                                .zip(&t.relation_flags)
                                .map(|(&r, &f)| (r, f as u8))
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str, kg: &KnowledgeGraph) -> Result<PromptCache> {
        let doc: CacheDoc = serde_json::from_str(text)?;
        if doc.format != FORMAT {
            return Err(Error::PromptCache(format!(
                "unsupported format '{}' (expected '{FORMAT}')",
                doc.format
            )));
        }
        if doc.graph != kg.fingerprint()
            || doc.num_entities != kg.num_entities()
            || doc.num_relations != kg.num_relations()
        {
            return Err(Error::PromptCache(
                "cache was built for a different graph".into(),
            ));
        }
        let k = doc.settings.k;
        let mut relations = vec![Vec::new(); kg.num_relations()];
        for entry in doc.relations {
            let slot = relations.get_mut(entry.relation as usize).ok_or_else(|| {
                Error::PromptCache(format!("relation {} out of range", entry.relation))
            })?;
            for ex in entry.examples {
                let facts: Vec<Fact> = ex.facts.into_iter().map(fact).collect();
                if let Some(bad) = facts.iter().find(|f| kg.find(f).is_none()) {
                    return Err(Error::PromptCache(format!("fact {bad:?} not in graph")));
                }
                if ex.tokens.len() != ex.entities.len() {
                    return Err(Error::PromptCache("token/entity count mismatch".into()));
                }
                let (relations_list, flags): (Vec<u32>, Vec<bool>) = ex
                    .relation_flags
                    .into_iter()
                    .map(|(r, f)| (r, f != 0))
                    .unzip();
                slot.push(TokenizedPromptGraph {
                    graph: PromptGraph {
                        example: fact(ex.example),
                        entities: ex.entities,
                        facts,
                        relations: relations_list,
                    },
                    k,
                    entity_tokens: ex.tokens.into_iter().map(|[a, b]| (a, b)).collect(),
                    relation_flags: flags,
                });
            }
        }
        Ok(PromptCache {
            settings: doc.settings,
            seed: doc.seed,
            graph_fingerprint: doc.graph,
            relations,
        })
    }

    pub fn save(
        cache: &PromptCache,
        kg: &KnowledgeGraph,
        vocab: Option<&Vocab>,
        path: &Path,
    ) -> Result<()> {
        let text = to_json(cache, kg, vocab)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, kg: &KnowledgeGraph) -> Result<PromptCache> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        from_json(&text, kg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // u=0 v=1 a=2 n=3 ; q=0 r=1
    fn small() -> KnowledgeGraph {
        KnowledgeGraph::from_base_facts(
            4,
            2,
            [
                Fact::new(0, 0, 1),
                Fact::new(0, 1, 2),
                Fact::new(2, 1, 1),
                Fact::new(0, 1, 3),
            ],
        )
        .unwrap()
    }

    #[test]
    fn variant_round_trips_through_strings() {
        for v in [
            PromptVariant::NeighborAndPath,
            PromptVariant::NeighborOnly,
            PromptVariant::PathOnly(2),
        ] {
            assert_eq!(v.to_string().parse::<PromptVariant>().unwrap(), v);
        }
        assert!("path_only:0".parse::<PromptVariant>().is_err());
        assert!("everything".parse::<PromptVariant>().is_err());
    }

    #[test]
    fn default_settings() {
        let s = PromptSettings::default();
        assert_eq!((s.shots, s.k, s.fact_cap), (5, 3, 4096));
        assert_eq!(s.num_entity_tokens(), 16);
    }

    #[test]
    fn sampling_with_replacement_from_small_pool() {
        let kg = small();
        let set = sample_examples(&kg, 1, 5, 42, None).unwrap();
        assert_eq!(set.examples.len(), 5);
        assert!(set.examples.iter().all(|f| f.relation == 1));
        let distinct: HashSet<_> = set.examples.iter().collect();
        assert!(distinct.len() <= 3);
        assert_eq!(set, sample_examples(&kg, 1, 5, 42, None).unwrap());
    }

    #[test]
    fn sampling_without_replacement_when_pool_is_large_enough() {
        let kg = small();
        let set = sample_examples(&kg, 1, 3, 1, None).unwrap();
        let distinct: HashSet<_> = set.examples.iter().collect();
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn excluding_the_only_fact_is_an_error() {
        let kg = small();
        let only = kg.find(&Fact::new(0, 0, 1)).unwrap();
        assert!(matches!(
            sample_examples(&kg, 0, 5, 0, Some(only)),
            Err(Error::NoExamples(0))
        ));
    }

    #[test]
    fn chain_distances() {
        let facts = [Fact::new(0, 0, 1), Fact::new(1, 0, 2), Fact::new(5, 0, 6)];
        let d = bfs_distances(&facts, 0, 3);
        assert_eq!(d.len(), 3);
        assert_eq!((d[&0], d[&1], d[&2]), (0, 1, 2));
        assert!(!d.contains_key(&5));
        let d = bfs_distances(&facts, 0, 1);
        assert!(!d.contains_key(&2));
    }

    #[test]
    fn neighbor_and_path_example() {
        let kg = small();
        let pg = extract_prompt_graph(
            &kg,
            Fact::new(0, 0, 1),
            3,
            PromptVariant::NeighborAndPath,
            4096,
            0,
        )
        .unwrap();
        assert_eq!(pg.entities, vec![0, 1, 2, 3]);
        assert_eq!(pg.facts.len(), 8);
        assert_eq!(pg.relations, vec![0, 1, 2, 3]);

        let t = tokenize(&pg, 3);
        assert_eq!(t.entity_tokens, vec![(0, 1), (1, 0), (1, 1), (1, 2)]);
        assert_eq!(t.relation_flags, vec![true, false, false, false]);
    }

    #[test]
    fn single_fact_graph() {
        let kg = KnowledgeGraph::from_base_facts(2, 1, [Fact::new(0, 0, 1)]).unwrap();
        let pg = extract_prompt_graph(
            &kg,
            Fact::new(0, 0, 1),
            3,
            PromptVariant::NeighborAndPath,
            4096,
            0,
        )
        .unwrap();
        assert_eq!(pg.entities, vec![0, 1]);
        assert_eq!(pg.facts, vec![Fact::new(0, 0, 1), Fact::new(1, 1, 0)]);
        let t = tokenize(&pg, 3);
        assert_eq!(t.entity_tokens, vec![(0, 1), (1, 0)]);
        // the inverse of q is a different relation
        assert_eq!(t.relation_flags, vec![true, false]);
    }

    #[test]
    fn unreachable_entities_map_to_k() {
        let pg = PromptGraph {
            example: Fact::new(0, 0, 1),
            entities: vec![0, 1, 7],
            facts: vec![Fact::new(0, 0, 1)],
            relations: vec![0],
        };
        let t = tokenize(&pg, 3);
        assert_eq!(t.entity_tokens[2], (3, 3));
        assert_eq!(t.token_ids(), vec![1, 4, 15]);
    }

    #[test]
    fn subsampling_keeps_the_example() {
        // star around u with many relations
        let mut facts = vec![Fact::new(0, 0, 1)];
        facts.extend((2..40).map(|i| Fact::new(0, 1, i)));
        let kg = KnowledgeGraph::from_base_facts(40, 2, facts).unwrap();
        let c = Fact::new(0, 0, 1);
        let pg = extract_prompt_graph(&kg, c, 3, PromptVariant::NeighborAndPath, 10, 9).unwrap();
        assert_eq!(pg.facts.len(), 10);
        assert!(pg.facts.contains(&c));
        assert!(pg.facts.contains(&Fact::new(1, 2, 0)));
        let again = extract_prompt_graph(&kg, c, 3, PromptVariant::NeighborAndPath, 10, 9).unwrap();
        assert_eq!(pg, again);
    }

    #[test]
    fn cache_json_round_trip() {
        let kg = small();
        let cache = PromptCache::build(&kg, PromptSettings::default(), 3).unwrap();
        let text = cache_file::to_json(&cache, &kg, None).unwrap();
        let back = cache_file::from_json(&text, &kg).unwrap();
        assert_eq!(back, cache);
        assert!(back.matches(&kg, &PromptSettings::default(), 3));

        let other = KnowledgeGraph::from_base_facts(4, 2, [Fact::new(0, 0, 1)]).unwrap();
        assert!(cache_file::from_json(&text, &other).is_err());
        let bad = text.replace(cache_file::FORMAT, "kgicl-prompt-cache/999");
        assert!(matches!(
            cache_file::from_json(&bad, &kg),
            Err(Error::PromptCache(_))
        ));
    }
}
