use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Record-level train/test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl Split {
    pub fn is_disjoint(&self) -> bool {
        self.train.is_disjoint(&self.test)
    }
}

/// Splits records by id, stratified on the record label; `round(test_fraction * n_c)`
/// records of each class go to the test side.
pub fn stratified_split(record_labels: &BTreeMap<String, u8>, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidInput("test fraction must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: BTreeSet::new(),
        test: BTreeSet::new(),
    };
    for class in [0u8, 1] {
        let mut ids: Vec<&String> = record_labels.iter().filter(|(_, &l)| l == class).map(|(k, _)| k).collect();
        ids.shuffle(&mut rng);
        let k = (ids.len() as f64 * test_fraction).round() as usize;
        for (i, id) in ids.into_iter().enumerate() {
            if i < k {
                split.test.insert(id.clone());
            } else {
                split.train.insert(id.clone());
            }
        }
    }
    Ok(split)
}

/// Stratified subsample of `idx`: `floor(fraction * n_c)` items per class
/// (at least one). A fraction of 1 returns `idx` unchanged.
pub fn subsample_stratified(idx: &[usize], labels: &[u8], fraction: f64, seed: u64) -> Vec<usize> {
    if fraction >= 1.0 {
        return idx.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for class in [0u8, 1] {
        let mut c: Vec<usize> = idx.iter().copied().filter(|&i| labels[i] == class).collect();
        if c.is_empty() {
            continue;
        }
        c.shuffle(&mut rng);
        let k = ((c.len() as f64 * fraction).floor() as usize).max(1);
        out.extend_from_slice(&c[..k]);
    }
    out.sort_unstable();
    out
}
