//! In-context knowledge graph reasoning.
//!
//! Query relations are described by prompt graphs: small subgraphs around
//! example facts of the relation, with entities labeled by their distances
//! to the example's endpoints. An encoder turns the prompt graphs into
//! relation representations, and a conditional message-passing reasoner
//! uses them to score every entity as the answer to `(s, q, ?)`. Nothing
//! learned is tied to a particular graph's entities or relations.
//!
//! ```no_run
//! use kgicl::{dataset::Dataset, train::{pretrain, TrainConfig}};
//! let data = Dataset::load("data/fb237_v1")?;
//! let out = pretrain(&[data], &TrainConfig::default())?;
//! out.checkpoint.save("runs/pretrained")?;
//! # Ok::<(), kgicl::Error>(())
//! ```

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod kg;
pub mod model;
mod par;
pub mod prompt;
pub mod rng;
pub mod similarity;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
