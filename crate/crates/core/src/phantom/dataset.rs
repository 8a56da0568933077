use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{rasterize, sample_phantom, Phantom};
use crate::error::{Error, Result};

const MAX_EMPTY_REDRAWS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl DatasetSizes {
    /// 2048 / 128 / 512.
    pub const FULL: DatasetSizes = DatasetSizes {
        train: 2048,
        validation: 128,
        test: 512,
    };

    /// 64 / 8 / 16.
    pub const DESK: DatasetSizes = DatasetSizes {
        train: 64,
        validation: 8,
        test: 16,
    };

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }

    /// Counts scaled from the full split preserving 16:1:4.
    pub fn with_ratio(validation: usize) -> Self {
        Self {
            train: 16 * validation,
            validation,
            test: 4 * validation,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub m: usize,
    pub seed: u64,
    pub jitter: f64,
    pub train: Vec<Phantom>,
    pub validation: Vec<Phantom>,
    pub test: Vec<Phantom>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Phantom] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Phantom> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}

/// Generator for phantom number `index` of a dataset: a ChaCha stream keyed
/// by `(seed, index)`, so content does not depend on generation order.
pub fn phantom_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn generate_one(seed: u64, index: usize, m: usize, jitter: f64) -> Result<Phantom> {
    let mut rng = phantom_rng(seed, index);
    for _ in 0..MAX_EMPTY_REDRAWS {
        let phantom = rasterize(&sample_phantom(&mut rng, jitter)?, m)?;
        if !phantom.is_zero() {
            return Ok(phantom);
        }
    }
    Err(Error::SamplingExhausted {
        attempts: MAX_EMPTY_REDRAWS,
    })
}

/// Builds train/validation/test phantoms; indices run over the
/// concatenation train ++ validation ++ test.
pub fn build_dataset(seed: u64, sizes: DatasetSizes, m: usize, jitter: f64) -> Result<Dataset> {
    if sizes.train == 0 || sizes.validation == 0 || sizes.test == 0 {
        return Err(Error::InvalidArgument(format!("split counts must be positive: {sizes:?}")));
    }
    let mut all: Vec<Phantom> = (0..sizes.total())
        .into_par_iter()
        .map(|i| generate_one(seed, i, m, jitter))
        .collect::<Result<_>>()?;
    let test = all.split_off(sizes.train + sizes.validation);
    let validation = all.split_off(sizes.train);
    Ok(Dataset {
        m,
        seed,
        jitter,
        train: all,
        validation,
        test,
    })
}

/// Counts of phantom values per bin over `[0, 1]` (`bins` equal bins; the
/// value 1 falls in the last bin).
pub fn value_histogram<'a>(phantoms: impl IntoIterator<Item = &'a Phantom>, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins.max(1)];
    let n = counts.len();
    for p in phantoms {
        for &v in p.values() {
            let b = ((v as f64 * n as f64) as usize).min(n - 1);
            counts[b] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::DEFAULT_JITTER;
    use std::collections::HashSet;

    #[test]
    fn full_sizes_match_the_reference_split() {
        let s = DatasetSizes::FULL;
        assert_eq!((s.train, s.validation, s.test, s.total()), (2048, 128, 512, 2688));
        assert_eq!(DatasetSizes::with_ratio(128), DatasetSizes::FULL);
        assert_eq!(DatasetSizes::DESK.total(), 88);
    }

    #[test]
    fn same_seed_same_dataset_and_order_independent() {
        let sizes = DatasetSizes::with_ratio(2);
        let a = build_dataset(9, sizes, 16, DEFAULT_JITTER).unwrap();
        let b = build_dataset(9, sizes, 16, DEFAULT_JITTER).unwrap();
        assert_eq!(a, b);
        // phantom 5 generated in isolation matches its dataset slot
        let lone = generate_one(9, 5, 16, DEFAULT_JITTER).unwrap();
        assert_eq!(lone, a.train[5]);
        let c = build_dataset(10, sizes, 16, DEFAULT_JITTER).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn phantoms_are_distinct_nonzero_and_valid() {
        let d = build_dataset(1, DatasetSizes::with_ratio(4), 32, DEFAULT_JITTER).unwrap();
        let mut seen = HashSet::new();
        for p in d.iter() {
            assert!(!p.is_zero());
            assert!(p.satisfies_invariants());
            let bits: Vec<u32> = p.values().iter().map(|v| v.to_bits()).collect();
            assert!(seen.insert(bits));
        }
    }

    #[test]
    fn rejects_empty_split() {
        let sizes = DatasetSizes {
            train: 1,
            validation: 0,
            test: 1,
        };
        assert!(build_dataset(0, sizes, 16, 0.05).is_err());
    }

    #[test]
    fn histogram_counts_every_value() {
        let d = build_dataset(2, DatasetSizes::with_ratio(1), 16, DEFAULT_JITTER).unwrap();
        let h = value_histogram(d.iter(), 10);
        assert_eq!(h.iter().sum::<u64>(), (d.len() * 256) as u64);
    }
}
