use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Folksonomy, Triple, View, Vocabularies};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            valid: 0.05,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, valid, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::Config(format!("split ratios must be positive: {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1: {parts:?}")));
        }
        Ok(())
    }
}

/// Assignment-level train/validation/test partition sharing the parent's
/// vocabularies. Each part keeps the parent's assignment order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitFolksonomy {
    pub vocab: Vocabularies,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

impl SplitFolksonomy {
    pub fn train(&self) -> View<'_> {
        View {
            vocab: &self.vocab,
            assignments: &self.train,
        }
    }

    pub fn valid(&self) -> View<'_> {
        View {
            vocab: &self.vocab,
            assignments: &self.valid,
        }
    }

    pub fn test(&self) -> View<'_> {
        View {
            vocab: &self.vocab,
            assignments: &self.test,
        }
    }

    /// The parent folksonomy (all three parts, train first).
    pub fn merged(&self) -> Result<Folksonomy> {
        let all = [&self.train[..], &self.valid, &self.test].concat();
        Folksonomy::from_parts(self.vocab.clone(), all)
    }
}

/// Hamilton apportionment: floors of `n·wᵢ`, then the leftover units go to
/// the largest fractional parts (ties to the earlier part). Weights are
/// expected to sum to 1.
pub fn largest_remainder(n: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights
        .iter()
        .map(|w| {
            // snap representation noise such as 74.99999999999999 to the integer
            let q = n as f64 * w;
            if (q - q.round()).abs() < 1e-9 {
                q.round()
            } else {
                q
            }
        })
        .collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Shuffles the assignment set with a seeded generator and cuts it into
/// train, validation and test parts sized by largest-remainder rounding.
pub fn split_assignments(f: &Folksonomy, ratios: SplitRatios, seed: u64) -> Result<SplitFolksonomy> {
    ratios.validate()?;
    let n = f.assignments().len();
    if n < 3 {
        return Err(Error::Data(format!("cannot split {n} assignments three ways")));
    }
    let sizes = largest_remainder(n, &[ratios.train, ratios.valid, ratios.test]);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let part = |range: std::ops::Range<usize>| {
        let mut idx = order[range].to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| f.assignments()[i]).collect::<Vec<_>>()
    };
    let train = part(0..sizes[0]);
    let valid = part(sizes[0]..sizes[0] + sizes[1]);
    let test = part(sizes[0] + sizes[1]..n);

    Ok(SplitFolksonomy {
        vocab: f.vocab().clone(),
        train,
        valid,
        test,
    })
}
