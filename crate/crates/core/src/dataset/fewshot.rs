//! Seeded per-image few-shot sampling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{AnnotationRecord, DatasetError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shots {
    Count(usize),
    Full,
}

impl Serialize for Shots {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Shots::Count(n) => s.serialize_u64(*n as u64),
            Shots::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for Shots {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(Shots::Count(n)),
            Raw::S(s) if s == "full" => Ok(Shots::Full),
            Raw::S(s) => Err(serde::de::Error::custom(format!(
                "n_shot must be a positive integer or \"full\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FewShotSpec {
    pub n_shot: Shots,
    pub seed: u64,
}

impl FewShotSpec {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n_shot: Shots::Count(n),
            seed,
        }
    }

    pub fn full() -> Self {
        Self {
            n_shot: Shots::Full,
            seed: 0,
        }
    }

    pub fn validate(&self, split_size: usize) -> Result<(), DatasetError> {
        match self.n_shot {
            Shots::Full => Ok(()),
            Shots::Count(0) => Err(DatasetError::InvalidShots("n_shot must be at least 1".into())),
            Shots::Count(n) if n > split_size => Err(DatasetError::NExceedsSplit {
                n_shot: n,
                available: split_size,
            }),
            Shots::Count(_) => Ok(()),
        }
    }
}

/// Indices chosen by a partial Fisher-Yates shuffle of `0..n`: for
/// `i in 0..k`, swap position `i` with `i + (next_u64 % (n - i))`, drawing
/// from ChaCha8 seeded with `seed_from_u64(seed)`. Returned in ascending order.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = i + (rng.next_u64() % (n - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut chosen = idx[..k.min(n)].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Uniform sample of images without replacement; records keep their input
/// order. `Full` returns the input unchanged.
pub fn sample_few_shot(records: &[AnnotationRecord], spec: &FewShotSpec) -> Result<Vec<AnnotationRecord>, DatasetError> {
    spec.validate(records.len())?;
    match spec.n_shot {
        Shots::Full => Ok(records.to_vec()),
        Shots::Count(k) => Ok(sample_indices(records.len(), k, spec.seed)
            .into_iter()
            .map(|i| records[i].clone())
            .collect()),
    }
}
