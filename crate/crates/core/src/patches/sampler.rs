use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classes::CellClass;

use super::PatchError;

/// Class-balanced sampling with replacement: a class is drawn uniformly from
/// the classes that have patches, then a record uniformly within it.
#[derive(Clone, Debug)]
pub struct BalancedSampler {
    by_class: Vec<(CellClass, Vec<usize>)>,
    rng: ChaCha8Rng,
}

impl BalancedSampler {
    /// `classes[i]` is the class of record `i`.
    pub fn new(classes: &[CellClass], seed: u64) -> Result<Self, PatchError> {
        if classes.is_empty() {
            return Err(PatchError::EmptyDataset);
        }
        let mut by_class: Vec<(CellClass, Vec<usize>)> =
            CellClass::ALL.iter().map(|&c| (c, Vec::new())).collect();
        for (i, c) in classes.iter().enumerate() {
            by_class[c.index()].1.push(i);
        }
        let missing: Vec<&str> = by_class
            .iter()
            .filter(|(_, v)| v.is_empty())
            .map(|(c, _)| c.as_str())
            .collect();
        if !missing.is_empty() {
            log::warn!("no patches for {}; sampling the remaining classes", missing.join(", "));
        }
        by_class.retain(|(_, v)| !v.is_empty());
        Ok(Self {
            by_class,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn classes(&self) -> Vec<CellClass> {
        self.by_class.iter().map(|(c, _)| *c).collect()
    }

    pub fn draw(&mut self) -> usize {
        let (_, members) = &self.by_class[self.rng.random_range(0..self.by_class.len())];
        members[self.rng.random_range(0..members.len())]
    }
}

impl Iterator for BalancedSampler {
    type Item = usize;
    fn next(&mut self) -> Option<usize> {
        Some(self.draw())
    }
}

/// `n` record indices drawn with [`BalancedSampler`].
pub fn balanced_sample(classes: &[CellClass], seed: u64, n: usize) -> Result<Vec<usize>, PatchError> {
    Ok(BalancedSampler::new(classes, seed)?.take(n).collect())
}
