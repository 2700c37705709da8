use rand::seq::index::sample;
use rand::Rng;

use crate::config::masked_count;
use crate::{Error, Result};

/// Disjoint, exhaustive split of patch indices; both lists ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    pub masked: Vec<usize>,
    pub visible: Vec<usize>,
}

impl PatchMask {
    pub fn from_masked(n: usize, masked: &[usize]) -> Result<Self> {
        let mut flag = vec![false; n];
        for &i in masked {
            if i >= n || flag[i] {
                return Err(Error::InvalidInput(format!("bad masked index {i}")));
            }
            flag[i] = true;
        }
        Ok(PatchMask {
            masked: (0..n).filter(|&i| flag[i]).collect(),
            visible: (0..n).filter(|&i| !flag[i]).collect(),
        })
    }
}

/// Uniform random patch mask with `round(n * ratio)` masked patches, clamped to `[1, n-1]`.
pub fn sample_mask<R: Rng>(n: usize, ratio: f64, rng: &mut R) -> Result<PatchMask> {
    if n < 2 {
        return Err(Error::InvalidInput("masking needs at least 2 patches".into()));
    }
    let k = masked_count(n, ratio);
    let masked: Vec<usize> = sample(rng, n, k).into_iter().collect();
    PatchMask::from_masked(n, &masked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn counts_and_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = sample_mask(20, 0.5, &mut rng).unwrap();
        assert_eq!((m.masked.len(), m.visible.len()), (10, 10));
        let mut all: Vec<usize> = m.masked.iter().chain(&m.visible).copied().collect();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_eq!(sample_mask(2, 0.9, &mut rng).unwrap().masked.len(), 1);
        assert!(sample_mask(1, 0.5, &mut rng).is_err());
    }
}
