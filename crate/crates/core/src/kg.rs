//! Triple loading, vocabularies and the inverse-augmented knowledge graph.
//!
//! Relation ids `0..R/2` are the base relations; relation `r + R/2` is the
//! inverse of `r`. Facts are stored base-first: fact `i < n` is a base fact
//! and fact `i + n` is its reverse, so the inverse of a fact id is found by
//! arithmetic alone.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexSet;

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;
pub type FactId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fact {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Fact {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Fact {
            head,
            relation,
            tail,
        }
    }
}

/// Raw string triples in file order.
#[derive(Debug, Clone, Default)]
pub struct TripleFile {
    pub path: PathBuf,
    pub rows: Vec<(String, String, String)>,
}

impl TripleFile {
    pub fn from_rows<I, S>(rows: I) -> Self
    where
        I: IntoIterator<Item = (S, S, S)>,
        S: Into<String>,
    {
        TripleFile {
            path: PathBuf::new(),
            rows: rows
                .into_iter()
                .map(|(h, r, t)| (h.into(), r.into(), t.into()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn load_triples(path: impl AsRef<Path>) -> Result<TripleFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_triples(&text, path)
}

pub fn parse_triples(text: &str, path: &Path) -> Result<TripleFile> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                found: fields.iter().filter(|f| !f.is_empty()).count(),
            });
        }
        rows.push((
            fields[0].to_string(),
            fields[1].to_string(),
            fields[2].to_string(),
        ));
    }
    Ok(TripleFile {
        path: path.to_path_buf(),
        rows,
    })
}

/// String to dense id bijections. Relation ids cover base relations only.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    entities: IndexSet<String>,
    relations: IndexSet<String>,
}

impl Vocab {
    /// Vocabulary covering every string in `files`, ids in order of first
    /// appearance.
    pub fn from_files<'a>(files: impl IntoIterator<Item = &'a TripleFile>) -> Self {
        let mut v = Vocab::default();
        for f in files {
            for (h, r, t) in &f.rows {
                v.entities.insert(h.clone());
                v.relations.insert(r.clone());
                v.entities.insert(t.clone());
            }
        }
        v
    }

    pub fn from_names(
        entities: impl IntoIterator<Item = String>,
        relations: impl IntoIterator<Item = String>,
    ) -> Self {
        Vocab {
            entities: entities.into_iter().collect(),
            relations: relations.into_iter().collect(),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_base_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_id(&self, name: &str) -> Result<EntityId> {
        self.entities
            .get_index_of(name)
            .map(|i| i as EntityId)
            .ok_or_else(|| Error::UnknownEntity(name.to_string()))
    }

    pub fn relation_id(&self, name: &str) -> Result<RelationId> {
        self.relations
            .get_index_of(name)
            .map(|i| i as RelationId)
            .ok_or_else(|| Error::UnknownRelation(name.to_string()))
    }

    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entities.get_index(id as usize).map(String::as_str)
    }

    pub fn base_relation_name(&self, id: RelationId) -> Option<&str> {
        self.relations.get_index(id as usize).map(String::as_str)
    }

    /// Name of any relation id, inverses rendered with a `^-1` suffix.
    pub fn relation_name(&self, id: RelationId) -> Option<String> {
        let n = self.relations.len() as RelationId;
        if id < n {
            self.base_relation_name(id).map(str::to_string)
        } else {
            self.base_relation_name(id - n).map(|s| format!("{s}^-1"))
        }
    }

    /// Parses a relation name that may carry the `^-1` inverse suffix.
    pub fn resolve_relation(&self, name: &str) -> Result<RelationId> {
        match name.strip_suffix("^-1") {
            Some(base) => Ok(self.relation_id(base)? + self.relations.len() as RelationId),
            None => self.relation_id(name),
        }
    }

    pub fn entity_names(&self) -> impl Iterator<Item = &str> {
        self.entities.iter().map(String::as_str)
    }

    pub fn relation_names(&self) -> impl Iterator<Item = &str> {
        self.relations.iter().map(String::as_str)
    }

    pub fn resolve(&self, row: &(String, String, String)) -> Result<Fact> {
        Ok(Fact::new(
            self.entity_id(&row.0)?,
            self.relation_id(&row.1)?,
            self.entity_id(&row.2)?,
        ))
    }

    pub fn resolve_all(&self, file: &TripleFile) -> Result<Vec<Fact>> {
        file.rows.iter().map(|r| self.resolve(r)).collect()
    }
}

/// Compressed adjacency: `items[offsets[k]..offsets[k+1]]` belong to key `k`.
#[derive(Debug, Clone, Default)]
struct Csr {
    offsets: Vec<u32>,
    items: Vec<FactId>,
}

impl Csr {
    fn build(num_keys: usize, keys: impl Iterator<Item = (usize, FactId)> + Clone) -> Self {
        let mut counts = vec![0u32; num_keys + 1];
        for (k, _) in keys.clone() {
            counts[k + 1] += 1;
        }
        for i in 0..num_keys {
            counts[i + 1] += counts[i];
        }
        let mut cursor = counts.clone();
        let mut items = vec![0; counts[num_keys] as usize];
        for (k, f) in keys {
            items[cursor[k] as usize] = f;
            cursor[k] += 1;
        }
        Csr {
            offsets: counts,
            items,
        }
    }

    fn get(&self, k: usize) -> &[FactId] {
        &self.items[self.offsets[k] as usize..self.offsets[k + 1] as usize]
    }
}

/// Inverse-augmented fact store with subject and relation indexes.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    num_entities: usize,
    num_base_relations: usize,
    facts: Vec<Fact>,
    adj_out: Csr,
    adj_by_rel: Csr,
    lookup: HashMap<Fact, FactId>,
}

impl KnowledgeGraph {
    /// Builds from base facts. Duplicates are dropped (first occurrence
    /// wins), then the reverse of every fact is appended.
    pub fn from_base_facts(
        num_entities: usize,
        num_base_relations: usize,
        base: impl IntoIterator<Item = Fact>,
    ) -> Result<Self> {
        let mut seen = IndexSet::new();
        for f in base {
            if f.head as usize >= num_entities || f.tail as usize >= num_entities {
                return Err(Error::OutOfRange {
                    what: "entity",
                    index: f.head.max(f.tail) as usize,
                    limit: num_entities,
                });
            }
            if f.relation as usize >= num_base_relations {
                return Err(Error::OutOfRange {
                    what: "relation",
                    index: f.relation as usize,
                    limit: num_base_relations,
                });
            }
            seen.insert(f);
        }
        let nr = num_base_relations as RelationId;
        let mut facts: Vec<Fact> = seen.into_iter().collect();
        let n = facts.len();
        for i in 0..n {
            let f = facts[i];
            facts.push(Fact::new(f.tail, f.relation + nr, f.head));
        }
        let adj_out = Csr::build(
            num_entities,
            facts
                .iter()
                .enumerate()
                .map(|(i, f)| (f.head as usize, i as FactId)),
        );
        let adj_by_rel = Csr::build(
            2 * num_base_relations,
            facts
                .iter()
                .enumerate()
                .map(|(i, f)| (f.relation as usize, i as FactId)),
        );
        let lookup = facts
            .iter()
            .enumerate()
            .map(|(i, f)| (*f, i as FactId))
            .collect();
        Ok(KnowledgeGraph {
            num_entities,
            num_base_relations,
            facts,
            adj_out,
            adj_by_rel,
            lookup,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    /// Relation count after inverse augmentation (always even).
    pub fn num_relations(&self) -> usize {
        2 * self.num_base_relations
    }

    pub fn num_base_relations(&self) -> usize {
        self.num_base_relations
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn fact(&self, id: FactId) -> Fact {
        self.facts[id as usize]
    }

    pub fn num_facts(&self) -> usize {
        self.facts.len()
    }

    pub fn num_base_facts(&self) -> usize {
        self.facts.len() / 2
    }

    pub fn base_facts(&self) -> &[Fact] {
        &self.facts[..self.num_base_facts()]
    }

    /// Fact ids whose head is `e`.
    pub fn out_facts(&self, e: EntityId) -> &[FactId] {
        self.adj_out.get(e as usize)
    }

    /// Fact ids carrying relation `r`.
    pub fn relation_facts(&self, r: RelationId) -> &[FactId] {
        self.adj_by_rel.get(r as usize)
    }

    pub fn find(&self, fact: &Fact) -> Option<FactId> {
        self.lookup.get(fact).copied()
    }

    pub fn inverse_fact(&self, id: FactId) -> FactId {
        let n = self.num_base_facts() as FactId;
        if id < n {
            id + n
        } else {
            id - n
        }
    }

    pub fn inverse_relation(&self, r: RelationId) -> RelationId {
        let n = self.num_base_relations as RelationId;
        if r < n {
            r + n
        } else {
            r - n
        }
    }

    /// Stable digest of the fact list, used to tie caches to a graph.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.num_entities as u64).to_le_bytes());
        h.update((self.num_base_relations as u64).to_le_bytes());
        for f in self.base_facts() {
            h.update(f.head.to_le_bytes());
            h.update(f.relation.to_le_bytes());
            h.update(f.tail.to_le_bytes());
        }
        h.finalize()
            .iter()
            .take(16)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Builds the graph from `train`. With a fixed vocabulary every string must
/// resolve; without one a fresh vocabulary is built from `train` alone.
pub fn build_kg(train: &TripleFile, vocab: Option<Vocab>) -> Result<(KnowledgeGraph, Vocab)> {
    let vocab = vocab.unwrap_or_else(|| Vocab::from_files([train]));
    let base = vocab.resolve_all(train)?;
    let kg =
        KnowledgeGraph::from_base_facts(vocab.num_entities(), vocab.num_base_relations(), base)?;
    Ok((kg, vocab))
}

/// Known true objects per `(subject, relation)`, both directions.
#[derive(Debug, Clone, Default)]
pub struct FilterSet {
    map: HashMap<(EntityId, RelationId), Vec<EntityId>>,
}

impl FilterSet {
    pub fn from_base_facts(
        num_base_relations: usize,
        facts: impl IntoIterator<Item = Fact>,
    ) -> Self {
        let nr = num_base_relations as RelationId;
        let mut map: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        for f in facts {
            map.entry((f.head, f.relation)).or_default().push(f.tail);
            map.entry((f.tail, f.relation + nr))
                .or_default()
                .push(f.head);
        }
        for v in map.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        FilterSet { map }
    }

    pub fn objects(&self, subject: EntityId, relation: RelationId) -> &[EntityId] {
        self.map
            .get(&(subject, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn contains(&self, subject: EntityId, relation: RelationId, object: EntityId) -> bool {
        self.objects(subject, relation)
            .binary_search(&object)
            .is_ok()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub fn build_filter_set(
    splits: &[&TripleFile],
    vocab: &Vocab,
    kg: &KnowledgeGraph,
) -> Result<FilterSet> {
    let mut facts = Vec::new();
    for s in splits {
        facts.extend(vocab.resolve_all(s)?);
    }
    Ok(FilterSet::from_base_facts(kg.num_base_relations(), facts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tf(rows: &[(&str, &str, &str)]) -> TripleFile {
        TripleFile::from_rows(rows.iter().copied())
    }

    #[test]
    fn parses_rows_in_order() {
        let t = parse_triples("a\tr\tb\nb\tr\tc\n", Path::new("x")).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.rows[1], ("b".into(), "r".into(), "c".into()));
    }

    #[test]
    fn empty_file_is_valid() {
        assert!(parse_triples("", Path::new("x")).unwrap().is_empty());
    }

    #[test]
    fn arity_violation_reports_line() {
        let err = parse_triples("a\tr\n", Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 1, .. }), "{err}");
        let err = parse_triples("a\tr\tb\na\tr\tb\tc\n", Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 2, .. }), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_triples("/nonexistent/triples.txt"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn relations_double_and_reverse_facts_appear() {
        let rows: Vec<(String, String, String)> = (0..14)
            .map(|i| ("a".to_string(), format!("r{i}"), "b".to_string()))
            .collect();
        let (kg, vocab) = build_kg(&TripleFile::from_rows(rows), None).unwrap();
        assert_eq!(vocab.num_base_relations(), 14);
        assert_eq!(kg.num_relations(), 28);

        let (kg, _) = build_kg(&tf(&[("a", "r", "b")]), None).unwrap();
        assert_eq!(kg.facts(), &[Fact::new(0, 0, 1), Fact::new(1, 1, 0)]);
    }

    #[test]
    fn duplicates_are_dropped() {
        let (kg, _) = build_kg(&tf(&[("a", "r", "b"), ("a", "r", "b")]), None).unwrap();
        assert_eq!(kg.num_facts(), 2);
    }

    #[test]
    fn fixed_vocab_rejects_unknown_strings() {
        let vocab = Vocab::from_files([&tf(&[("a", "r", "b")])]);
        let err = build_kg(&tf(&[("a", "r", "zzz")]), Some(vocab.clone())).unwrap_err();
        assert!(err.to_string().contains("zzz"));
        let err = build_kg(&tf(&[("a", "s", "b")]), Some(vocab)).unwrap_err();
        assert!(matches!(err, Error::UnknownRelation(ref s) if s == "s"));
    }

    #[test]
    fn self_loops_get_their_own_inverse() {
        let (kg, _) = build_kg(&tf(&[("a", "r", "a")]), None).unwrap();
        assert_eq!(kg.facts(), &[Fact::new(0, 0, 0), Fact::new(0, 1, 0)]);
        assert_eq!(kg.out_facts(0).len(), 2);
    }

    #[test]
    fn filter_set_examples() {
        let train = tf(&[("a", "r", "b"), ("a", "r", "c")]);
        let (kg, vocab) = build_kg(&train, None).unwrap();
        let fs = build_filter_set(&[&tf(&[("a", "r", "b")])], &vocab, &kg).unwrap();
        assert_eq!(fs.len(), 2);
        assert_eq!(fs.objects(0, 0), &[1]);
        assert_eq!(fs.objects(1, 1), &[0]);

        let fs = build_filter_set(&[&train], &vocab, &kg).unwrap();
        assert_eq!(fs.objects(0, 0), &[1, 2]);

        let fs = build_filter_set(&[], &vocab, &kg).unwrap();
        assert!(fs.is_empty());

        let err = build_filter_set(&[&tf(&[("q", "r", "b")])], &vocab, &kg).unwrap_err();
        assert!(matches!(err, Error::UnknownEntity(_)));
    }

    #[test]
    fn relation_names_round_trip_inverse_suffix() {
        let vocab = Vocab::from_files([&tf(&[("a", "likes", "b")])]);
        assert_eq!(vocab.relation_name(1).unwrap(), "likes^-1");
        assert_eq!(vocab.resolve_relation("likes^-1").unwrap(), 1);
        assert!(vocab.resolve_relation("hates").is_err());
    }
}
