use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, EmbeddingCorpus, SplitTag};

/// Train/val/test fractions plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self, CorpusError> {
        let spec = Self {
            fractions: [train, val, test],
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The 70/10/20 protocol used for datasets without an official split.
    pub fn seventy_ten_twenty(seed: u64) -> Self {
        Self {
            fractions: [0.7, 0.1, 0.2],
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: &str| CorpusError::InvalidSplit {
            fractions: self.fractions,
            reason: reason.to_string(),
        };
        if self
            .fractions
            .iter()
            .any(|f| !f.is_finite() || !(0.0..=1.0).contains(f))
        {
            return Err(invalid("each fraction must lie in [0, 1]"));
        }
        if (self.fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("fractions must sum to 1"));
        }
        Ok(())
    }

    /// (train, val, test) sizes: floor, floor, remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The 1e-9 slack absorbs representation error such as 0.7 * 10 = 6.999...
        let part = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let train = part(self.fractions[0]).min(n);
        let val = part(self.fractions[1]).min(n - train);
        (train, val, n - train - val)
    }
}

/// Seeded shuffle of `0..n` partitioned into train/val/test index lists.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3], CorpusError> {
    spec.validate()?;
    if n < 3 {
        return Err(CorpusError::TooFewRecords(n));
    }
    let (train, val, _) = spec.sizes(n);
    if train == 0 {
        return Err(CorpusError::EmptyTrainSplit {
            n,
            fractions: spec.fractions,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let test = order.split_off(train + val);
    let val_part = order.split_off(train);
    Ok([order, val_part, test])
}

pub fn split_corpus(
    corpus: &EmbeddingCorpus,
    spec: &SplitSpec,
) -> Result<(EmbeddingCorpus, EmbeddingCorpus, EmbeddingCorpus), CorpusError> {
    let [train, val, test] = split_indices(corpus.len(), spec)?;
    let name = corpus.name();
    Ok((
        corpus.subset(format!("{name}.train"), SplitTag::Train, &train),
        corpus.subset(format!("{name}.val"), SplitTag::Val, &val),
        corpus.subset(format!("{name}.test"), SplitTag::Test, &test),
    ))
}
