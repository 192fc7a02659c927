//! Dataset directories.
//!
//! A transductive directory holds `train.txt`, `valid.txt` and `test.txt`;
//! one vocabulary covers all three and only the training facts carry
//! messages. An inductive directory holds `train_graph.txt`,
//! `inference_graph.txt`, `valid.txt` and `test.txt`. Training runs over
//! `train_graph`; test queries are answered over `inference_graph` with a
//! vocabulary of its own, so unseen entities and relations are both allowed.
//! Validation queries go to `inference_graph` when they resolve there and to
//! `train_graph` otherwise.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kg::{
    build_filter_set, build_kg, load_triples, Fact, FilterSet, KnowledgeGraph, TripleFile, Vocab,
};
use crate::prompt::{cache_file, PromptCache, PromptSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!(
                "unknown split '{s}' (expected train, valid or test)"
            ))),
        }
    }
}

/// Which of a dataset's graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GraphRole {
    Train,
    Inference,
}

/// A message-passing graph with its vocabulary and filter set.
#[derive(Debug, Clone)]
pub struct GraphSplit {
    pub kg: KnowledgeGraph,
    pub vocab: Vocab,
    pub filter: FilterSet,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub root: PathBuf,
    pub inductive: bool,
    pub train: GraphSplit,
    pub inference: Option<GraphSplit>,
    pub valid: Vec<Fact>,
    pub valid_on_inference: bool,
    pub test: Vec<Fact>,
}

fn name_of(root: &Path) -> String {
    root.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| root.display().to_string())
}

impl Dataset {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        if root.join("train_graph.txt").exists() {
            let train = load_triples(root.join("train_graph.txt"))?;
            let inference = load_triples(root.join("inference_graph.txt"))?;
            let valid = load_triples(root.join("valid.txt"))?;
            let test = load_triples(root.join("test.txt"))?;
            Self::inductive(name_of(root), root, &train, &inference, &valid, &test)
        } else {
            let train = load_triples(root.join("train.txt"))?;
            let valid = load_triples(root.join("valid.txt"))?;
            let test = load_triples(root.join("test.txt"))?;
            Self::transductive(name_of(root), root, &train, &valid, &test)
        }
    }

    pub fn transductive(
        name: String,
        root: &Path,
        train: &TripleFile,
        valid: &TripleFile,
        test: &TripleFile,
    ) -> Result<Self> {
        let vocab = Vocab::from_files([train, valid, test]);
        let (kg, vocab) = build_kg(train, Some(vocab))?;
        let filter = build_filter_set(&[train, valid, test], &vocab, &kg)?;
        let valid = vocab.resolve_all(valid)?;
        let test = vocab.resolve_all(test)?;
        Ok(Dataset {
            name,
            root: root.to_path_buf(),
            inductive: false,
            train: GraphSplit { kg, vocab, filter },
            inference: None,
            valid,
            valid_on_inference: false,
            test,
        })
    }

    pub fn inductive(
        name: String,
        root: &Path,
        train: &TripleFile,
        inference: &TripleFile,
        valid: &TripleFile,
        test: &TripleFile,
    ) -> Result<Self> {
        let inf_vocab = Vocab::from_files([inference, test]);
        let valid_on_inference = !valid.is_empty() && inf_vocab.resolve_all(valid).is_ok();
        let train_vocab = if valid_on_inference {
            Vocab::from_files([train])
        } else {
            Vocab::from_files([train, valid])
        };
        let (train_kg, train_vocab) = build_kg(train, Some(train_vocab))?;
        let (inf_kg, inf_vocab) = build_kg(inference, Some(inf_vocab))?;

        let (train_splits, inf_splits): (Vec<&TripleFile>, Vec<&TripleFile>) = if valid_on_inference
        {
            (vec![train], vec![inference, valid, test])
        } else {
            (vec![train, valid], vec![inference, test])
        };
        let train_filter = build_filter_set(&train_splits, &train_vocab, &train_kg)?;
        let inf_filter = build_filter_set(&inf_splits, &inf_vocab, &inf_kg)?;
        let valid = if valid_on_inference {
            inf_vocab.resolve_all(valid)?
        } else {
            train_vocab.resolve_all(valid)?
        };
        let test = inf_vocab.resolve_all(test)?;
        Ok(Dataset {
            name,
            root: root.to_path_buf(),
            inductive: true,
            train: GraphSplit {
                kg: train_kg,
                vocab: train_vocab,
                filter: train_filter,
            },
            inference: Some(GraphSplit {
                kg: inf_kg,
                vocab: inf_vocab,
                filter: inf_filter,
            }),
            valid,
            valid_on_inference,
            test,
        })
    }

    /// The graph that answers queries of `split`.
    pub fn role_of(&self, split: Split) -> GraphRole {
        match split {
            Split::Train => GraphRole::Train,
            Split::Valid if self.valid_on_inference => GraphRole::Inference,
            Split::Valid => GraphRole::Train,
            Split::Test => GraphRole::Inference,
        }
    }

    pub fn graph(&self, role: GraphRole) -> &GraphSplit {
        match role {
            GraphRole::Train => &self.train,
            GraphRole::Inference => self.inference_graph(),
        }
    }

    /// The graph that answers queries of `split`, and the queries.
    pub fn split(&self, split: Split) -> (&GraphSplit, &[Fact]) {
        let g = self.graph(self.role_of(split));
        match split {
            Split::Train => (g, g.kg.base_facts()),
            Split::Valid => (g, &self.valid),
            Split::Test => (g, &self.test),
        }
    }

    /// Prompt cache file name for a graph. Transductive datasets have one
    /// graph and one file.
    pub fn cache_file_name(&self, role: GraphRole) -> &'static str {
        match role {
            GraphRole::Train if self.inductive => "prompt_cache.train_graph.json",
            _ => cache_file::FILE_NAME,
        }
    }

    /// Loads the prompt cache for `role` from `dir` when one exists for
    /// the same graph and settings, otherwise builds it. The flag tells
    /// whether a file was reused.
    pub fn prompt_cache(
        &self,
        role: GraphRole,
        settings: PromptSettings,
        seed: u64,
        dir: Option<&Path>,
    ) -> Result<(PromptCache, bool)> {
        let kg = &self.graph(role).kg;
        if let Some(dir) = dir {
            let path = dir.join(self.cache_file_name(role));
            if path.exists() {
                match cache_file::load(&path, kg) {
                    Ok(c) if c.settings == settings => {
                        log::info!("reusing prompt cache {} (seed {})", path.display(), c.seed);
                        return Ok((c, true));
                    }
                    Ok(_) => log::warn!(
                        "prompt cache {} has other settings; rebuilding",
                        path.display()
                    ),
                    Err(e) => log::warn!("ignoring prompt cache {}: {e}", path.display()),
                }
            }
        }
        log::info!("building prompt cache for {} ({role:?} graph)", self.name);
        Ok((PromptCache::build(kg, settings, seed)?, false))
    }

    /// Builds and writes the prompt caches of every graph into `dir`.
    pub fn write_prompt_caches(
        &self,
        settings: PromptSettings,
        seed: u64,
        dir: &Path,
    ) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut roles = vec![GraphRole::Inference];
        if self.inductive {
            roles.insert(0, GraphRole::Train);
        }
        let mut out = Vec::new();
        for role in roles {
            let g = self.graph(role);
            let cache = PromptCache::build(&g.kg, settings, seed)?;
            let path = dir.join(self.cache_file_name(role));
            cache_file::save(&cache, &g.kg, Some(&g.vocab), &path)?;
            out.push(path);
        }
        Ok(out)
    }

    /// The graph test queries run on.
    pub fn inference_graph(&self) -> &GraphSplit {
        self.inference.as_ref().unwrap_or(&self.train)
    }
}
