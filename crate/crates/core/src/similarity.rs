//! Cosine similarity between prompt representations of relations from two
//! graphs. Each relation is represented by its own row of the prompt
//! matrix built for it as the query relation.

use std::io::Write;

use crate::dataset::GraphSplit;
use crate::error::Result;
use crate::kg::RelationId;
use crate::model::Model;
use crate::prompt::PromptCache;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

/// Zero when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Resolves relation names (inverse names allowed); an empty list means
/// every base relation.
pub fn select_relations(graph: &GraphSplit, names: &[String]) -> Result<Vec<RelationId>> {
    if names.is_empty() {
        return Ok((0..graph.kg.num_base_relations() as RelationId).collect());
    }
    names
        .iter()
        .map(|n| graph.vocab.resolve_relation(n))
        .collect()
}

fn relation_vectors(
    model: &Model,
    graph: &GraphSplit,
    cache: &PromptCache,
    rels: &[RelationId],
    seed: u64,
) -> Result<Vec<Vec<f32>>> {
    crate::par::map(rels, |&r| {
        Ok(
            match model.relation_prompts(&graph.kg, cache.prompts(r), seed)? {
                Some(h) => h.row(r as usize).to_vec(),
                None => vec![0.0; model.config.dim],
            },
        )
    })
    .into_iter()
    .collect()
}

pub fn export_prompt_similarity(
    model: &Model,
    seed: u64,
    a: (&GraphSplit, &PromptCache, &[RelationId]),
    b: (&GraphSplit, &PromptCache, &[RelationId]),
) -> Result<SimilarityMatrix> {
    let va = relation_vectors(model, a.0, a.1, a.2, seed)?;
    let vb = relation_vectors(model, b.0, b.1, b.2, seed)?;
    let name = |g: &GraphSplit, r: RelationId| g.vocab.relation_name(r).unwrap_or_default();
    Ok(SimilarityMatrix {
        rows: a.2.iter().map(|&r| name(a.0, r)).collect(),
        cols: b.2.iter().map(|&r| name(b.0, r)).collect(),
        values: va
            .iter()
            .map(|x| vb.iter().map(|y| cosine(x, y)).collect())
            .collect(),
    })
}

impl SimilarityMatrix {
    /// Header `relation,<cols...>`, then one row per relation of the first
    /// graph.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["relation".to_string()];
        header.extend(self.cols.iter().cloned());
        out.write_record(&header)?;
        for (name, row) in self.rows.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| format!("{v:.6}")));
            out.write_record(&rec)?;
        }
        out.flush()
            .map_err(|e| crate::Error::io("<csv output>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert!((cosine(&[1.0, 0.0], &[-1.0, 0.0]) + 1.0).abs() < 1e-12);
    }
}
