//! Frozen random-projection quantizer.
//!
//! A vector is projected by a fixed Gaussian matrix, L2-normalized, and
//! assigned the index of the nearest row of a fixed unit-norm codebook. Both
//! matrices are drawn once from the seed and never updated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::signal::PatchGrid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    pub d_in: usize,
    pub d_lat: usize,
    pub codebook_size: usize,
    pub seed: u64,
}

impl QuantizerSpec {
    /// Raw-patch tokenizer: 60 samples x 2 channels.
    pub fn signal(seed: u64) -> Self {
        QuantizerSpec {
            d_in: 120,
            d_lat: 16,
            codebook_size: 256,
            seed,
        }
    }

    /// Feature tokenizer over the 17 standardized handcrafted features.
    pub fn feature(seed: u64) -> Self {
        QuantizerSpec {
            d_in: 17,
            d_lat: 8,
            codebook_size: 64,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    pub spec: QuantizerSpec,
    /// `d_in x d_lat`, row-major.
    pub projection: Vec<f32>,
    /// `codebook_size x d_lat`, row-major, unit-norm rows.
    pub codebook: Vec<f32>,
}

impl Quantizer {
    pub fn build(spec: QuantizerSpec) -> Result<Self> {
        let QuantizerSpec {
            d_in,
            d_lat,
            codebook_size,
            seed,
        } = spec;
        if d_in == 0 || d_lat == 0 || codebook_size == 0 {
            return Err(Error::InvalidInput("quantizer dimensions must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proj_dist = Normal::new(0.0, (1.0 / d_lat as f64).sqrt()).unwrap();
        let projection = (0..d_in * d_lat)
            .map(|_| proj_dist.sample(&mut rng) as f32)
            .collect();
        let unit = Normal::new(0.0, 1.0).unwrap();
        let mut codebook = Vec::with_capacity(codebook_size * d_lat);
        for _ in 0..codebook_size {
            let row: Vec<f64> = (0..d_lat).map(|_| unit.sample(&mut rng)).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            codebook.extend(row.iter().map(|x| (x / norm) as f32));
        }
        Ok(Quantizer {
            spec,
            projection,
            codebook,
        })
    }

    /// Assembles a quantizer from explicit matrices (used by checkpoints and tests).
    pub fn from_parts(spec: QuantizerSpec, projection: Vec<f32>, codebook: Vec<f32>) -> Result<Self> {
        if projection.len() != spec.d_in * spec.d_lat || codebook.len() != spec.codebook_size * spec.d_lat {
            return Err(Error::InvalidInput("quantizer matrix sizes do not match its dimensions".into()));
        }
        Ok(Quantizer {
            spec,
            projection,
            codebook,
        })
    }

    /// L2-normalized projection of `x`; the zero projection stays zero.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let QuantizerSpec { d_in, d_lat, .. } = self.spec;
        if x.len() != d_in {
            return Err(Error::InvalidInput(format!(
                "quantizer expects dimension {d_in}, got {}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite quantizer input".into()));
        }
        let mut z = vec![0.0f64; d_lat];
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.projection[i * d_lat..(i + 1) * d_lat];
            for (zj, &p) in z.iter_mut().zip(row) {
                *zj += xi * p as f64;
            }
        }
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            z.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(z)
    }

    pub fn quantize(&self, x: &[f64]) -> Result<usize> {
        let z = self.project(x)?;
        let d_lat = self.spec.d_lat;
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (k, row) in self.codebook.chunks_exact(d_lat).enumerate() {
            let dist: f64 = row.iter().zip(&z).map(|(&c, &u)| (c as f64 - u).powi(2)).sum();
            if dist < best_dist {
                best = k;
                best_dist = dist;
            }
        }
        Ok(best)
    }

    /// One label per patch, always computed on the full unmasked grid.
    pub fn quantize_grid(&self, grid: &PatchGrid) -> Result<Vec<usize>> {
        grid.patches.iter().map(|p| self.quantize(p)).collect()
    }

    pub fn codebook_row(&self, k: usize) -> &[f32] {
        let d = self.spec.d_lat;
        &self.codebook[k * d..(k + 1) * d]
    }
}
