//! Synthetic knowledge graphs with a planted composition rule
//! `r3 = r1 . r2`, used as a training fixture with a known answer.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub entities: usize,
    /// Random facts of an unrelated `noise` relation added to training.
    pub noise: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            entities: 20,
            noise: 0,
            seed: 0,
        }
    }
}

pub type Triple = (String, String, String);

/// `r1` and `r2` are total functions over the entities and all of them
/// are training facts. The facts of `r3 = r1 . r2` are split 60/20/20 into
/// train, valid and test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthKg {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

pub fn entity_name(i: usize) -> String {
    format!("e{i}")
}

fn triple(h: usize, r: &str, t: usize) -> Triple {
    (entity_name(h), r.to_string(), entity_name(t))
}

pub fn make_synthetic_kg(spec: &SynthSpec) -> Result<SynthKg> {
    let n = spec.entities;
    if n < 6 {
        return Err(Error::Config(format!(
            "synthetic graph needs at least 6 entities, got {n}"
        )));
    }
    let mut rng = rng_for(spec.seed, &[stream::SYNTH]);
    let r1: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let r2: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();

    let mut train = Vec::new();
    for a in 0..n {
        train.push(triple(a, "r1", r1[a]));
        train.push(triple(a, "r2", r2[a]));
    }
    let mut closure: Vec<Triple> = (0..n).map(|a| triple(a, "r3", r2[r1[a]])).collect();
    closure.shuffle(&mut rng);
    let n_train = (closure.len() * 3).div_ceil(5);
    let n_valid = closure.len() / 5;
    let test = closure.split_off(n_train + n_valid);
    let valid = closure.split_off(n_train);
    train.extend(closure);
    for _ in 0..spec.noise {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        train.push(triple(a, "noise", b));
    }
    Ok(SynthKg { train, valid, test })
}

impl SynthKg {
    /// Writes `train.txt`, `valid.txt` and `test.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, rows) in [
            ("train.txt", &self.train),
            ("valid.txt", &self.valid),
            ("test.txt", &self.test),
        ] {
            let mut text = String::new();
            for (h, r, t) in rows {
                text.push_str(&format!("{h}\t{r}\t{t}\n"));
            }
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
