//! Handcrafted per-patch CTG features.
//!
//! Order of the 17 entries:
//!
//! | # | feature |
//! |---|---------|
//! | 1 | FHR mean |
//! | 2 | FHR std |
//! | 3 | FHR min |
//! | 4 | FHR max |
//! | 5 | FHR range (max - min) |
//! | 6 | FHR short-term variability, mean abs successive difference |
//! | 7 | FHR RMSSD |
//! | 8 | zero crossings of the linearly detrended FHR |
//! | 9 | FHR linear trend, bpm per minute |
//! | 10 | samples above median + 15 bpm |
//! | 11 | samples below median - 15 bpm |
//! | 12 | patch missing fraction (both channels) |
//! | 13 | UA mean |
//! | 14 | UA std |
//! | 15 | UA max |
//! | 16 | UA peaks above mean + 0.5 std, at least 20 s apart |
//! | 17 | FHR/UA Pearson correlation at lag 0 |
//!
//! Statistics use valid samples only, on raw (bpm / UA unit) values. A channel
//! with fewer than two valid samples falls back to the mean of its filled
//! values with zero spread.

use serde::{Deserialize, Serialize};

use crate::signal::{denormalize_fhr, denormalize_ua, PatchGrid};
use crate::{Error, Result};

pub const N_FEATURES: usize = 17;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "fhr_mean",
    "fhr_std",
    "fhr_min",
    "fhr_max",
    "fhr_range",
    "fhr_stv",
    "fhr_rmssd",
    "fhr_zero_crossings",
    "fhr_slope_per_min",
    "fhr_accel_samples",
    "fhr_decel_samples",
    "missing_fraction",
    "ua_mean",
    "ua_std",
    "ua_max",
    "ua_peaks",
    "fhr_ua_corr",
];

const EVENT_OFFSET_BPM: f64 = 15.0;
const PEAK_SEPARATION: usize = 20;
const FLAT_EPS: f64 = 1e-12;
/// Detrended residuals at or below this magnitude count as zero.
pub const RESIDUAL_ZERO: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// One patch in raw units with per-sample validity.
#[derive(Debug, Clone, Copy)]
pub struct RawPatch<'a> {
    pub fhr: &'a [f64],
    pub fhr_valid: &'a [bool],
    pub ua: &'a [f64],
    pub ua_valid: &'a [bool],
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std(xs: &[f64], m: f64) -> f64 {
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct ChannelStats {
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
}

fn channel_stats(values: &[f64], valid: &[bool]) -> (ChannelStats, Vec<(usize, f64)>) {
    let obs: Vec<(usize, f64)> = values
        .iter()
        .zip(valid)
        .enumerate()
        .filter(|(_, (_, &v))| v)
        .map(|(t, (&x, _))| (t, x))
        .collect();
    if obs.len() < 2 {
        let fill = mean(values);
        return (
            ChannelStats {
                mean: fill,
                std: 0.0,
                min: fill,
                max: fill,
            },
            obs,
        );
    }
    let xs: Vec<f64> = obs.iter().map(|o| o.1).collect();
    let m = mean(&xs);
    let stats = ChannelStats {
        mean: m,
        std: std(&xs, m),
        min: xs.iter().copied().fold(f64::INFINITY, f64::min),
        max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    (stats, obs)
}

/// Least-squares slope (per sample) and intercept over `(t, x)` pairs.
fn linear_fit(obs: &[(usize, f64)]) -> (f64, f64) {
    let n = obs.len() as f64;
    let tm = obs.iter().map(|o| o.0 as f64).sum::<f64>() / n;
    let xm = obs.iter().map(|o| o.1).sum::<f64>() / n;
    let sxx: f64 = obs.iter().map(|o| (o.0 as f64 - tm).powi(2)).sum();
    let sxy: f64 = obs.iter().map(|o| (o.0 as f64 - tm) * (o.1 - xm)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, xm - slope * tm)
}

pub fn extract_features(patch: RawPatch<'_>) -> FeatureVector {
    let n = patch.fhr.len();
    assert_eq!(patch.ua.len(), n);
    let mut f = [0.0; N_FEATURES];

    let (fs, fobs) = channel_stats(patch.fhr, patch.fhr_valid);
    f[0] = fs.mean;
    f[1] = fs.std;
    f[2] = fs.min;
    f[3] = fs.max;
    f[4] = fs.max - fs.min;

    if fobs.len() >= 2 {
        let diffs: Vec<f64> = (0..n.saturating_sub(1))
            .filter(|&t| patch.fhr_valid[t] && patch.fhr_valid[t + 1])
            .map(|t| patch.fhr[t + 1] - patch.fhr[t])
            .collect();
        if !diffs.is_empty() {
            f[5] = diffs.iter().map(|d| d.abs()).sum::<f64>() / diffs.len() as f64;
            f[6] = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
        }

        let (slope, icpt) = linear_fit(&fobs);
        let mut prev_sign = 0i8;
        let mut crossings = 0;
        for &(t, x) in &fobs {
            let r = x - (icpt + slope * t as f64);
            let sign = if r > RESIDUAL_ZERO {
                1
            } else if r < -RESIDUAL_ZERO {
                -1
            } else {
                0
            };
            if sign != 0 {
                if prev_sign != 0 && sign != prev_sign {
                    crossings += 1;
                }
                prev_sign = sign;
            }
        }
        f[7] = crossings as f64;
        f[8] = slope * 60.0;

        let xs: Vec<f64> = fobs.iter().map(|o| o.1).collect();
        let med = median(&xs);
        f[9] = xs.iter().filter(|&&x| x > med + EVENT_OFFSET_BPM).count() as f64;
        f[10] = xs.iter().filter(|&&x| x < med - EVENT_OFFSET_BPM).count() as f64;
    }

    let n_valid = patch.fhr_valid.iter().chain(patch.ua_valid).filter(|&&v| v).count();
    f[11] = 1.0 - n_valid as f64 / (2 * n) as f64;

    let (us, uobs) = channel_stats(patch.ua, patch.ua_valid);
    f[12] = us.mean;
    f[13] = us.std;
    f[14] = us.max;

    if uobs.len() >= 2 && us.std > FLAT_EPS {
        let thr = us.mean + 0.5 * us.std;
        let mut last: Option<usize> = None;
        let mut peaks = 0;
        for t in 1..n.saturating_sub(1) {
            if !(patch.ua_valid[t - 1] && patch.ua_valid[t] && patch.ua_valid[t + 1]) {
                continue;
            }
            let x = patch.ua[t];
            if x > thr && x > patch.ua[t - 1] && x >= patch.ua[t + 1] && last.map_or(true, |l| t - l >= PEAK_SEPARATION) {
                peaks += 1;
                last = Some(t);
            }
        }
        f[15] = peaks as f64;
    }

    let pairs: Vec<(f64, f64)> = (0..n)
        .filter(|&t| patch.fhr_valid[t] && patch.ua_valid[t])
        .map(|t| (patch.fhr[t], patch.ua[t]))
        .collect();
    if pairs.len() >= 2 {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (ma, mb) = (mean(&a), mean(&b));
        let (sa, sb) = (std(&a, ma), std(&b, mb));
        if sa > FLAT_EPS && sb > FLAT_EPS {
            let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
            f[16] = (cov / (sa * sb)).clamp(-1.0, 1.0);
        }
    }

    FeatureVector(f)
}

/// Features of patch `i` of a normalized grid, computed on denormalized values.
pub fn grid_patch_features(grid: &PatchGrid, i: usize) -> FeatureVector {
    let p = grid.patch_len;
    let row = &grid.patches[i];
    let valid = &grid.valid[i];
    let fhr: Vec<f64> = row[..p].iter().map(|&z| denormalize_fhr(z)).collect();
    let ua: Vec<f64> = row[p..].iter().map(|&z| denormalize_ua(z)).collect();
    extract_features(RawPatch {
        fhr: &fhr,
        fhr_valid: &valid[..p],
        ua: &ua,
        ua_valid: &valid[p..],
    })
}

pub fn grid_features(grid: &PatchGrid) -> Vec<FeatureVector> {
    (0..grid.n_patches()).map(|i| grid_patch_features(grid, i)).collect()
}

/// Per-dimension z-score parameters fitted on the pretraining corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const DEGENERATE_STD: f64 = 1e-8;

impl FeatureStats {
    pub fn fit<'a>(vectors: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let rows: Vec<&[f64]> = vectors.into_iter().collect();
        let Some(first) = rows.first() else {
            return Err(Error::InvalidInput("cannot fit statistics on an empty corpus".into()));
        };
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(r.iter()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in &rows {
            for ((v, x), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *v += (x - m).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(FeatureStats { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| if *s < DEGENERATE_STD { 0.0 } else { (v - m) / s })
            .collect()
    }
}

/// Z-scoring that must be fitted before use.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureStandardizer {
    stats: Option<FeatureStats>,
}

impl FeatureStandardizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fitted(stats: FeatureStats) -> Self {
        FeatureStandardizer { stats: Some(stats) }
    }

    pub fn fit(&mut self, vectors: &[FeatureVector]) -> Result<&FeatureStats> {
        let stats = FeatureStats::fit(vectors.iter().map(|v| v.as_slice()))?;
        Ok(self.stats.insert(stats))
    }

    pub fn stats(&self) -> Option<&FeatureStats> {
        self.stats.as_ref()
    }

    pub fn transform(&self, vectors: &[FeatureVector]) -> Result<Vec<Vec<f64>>> {
        let stats = self.stats.as_ref().ok_or(Error::StatsNotFitted)?;
        Ok(vectors.iter().map(|v| stats.apply(v.as_slice())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_valid(n: usize) -> Vec<bool> {
        vec![true; n]
    }

    #[test]
    fn constant_patch_has_analytic_vector() {
        let fhr = vec![140.0; 60];
        let ua = vec![20.0; 60];
        let v = all_valid(60);
        let f = extract_features(RawPatch {
            fhr: &fhr,
            fhr_valid: &v,
            ua: &ua,
            ua_valid: &v,
        });
        let want = [
            140.0, 0.0, 140.0, 140.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 20.0, 0.0, 20.0, 0.0, 0.0,
        ];
        assert_eq!(f.0, want);
    }

    #[test]
    fn ramp_patch() {
        let fhr: Vec<f64> = (0..60).map(|t| 100.0 + t as f64).collect();
        let ua = vec![20.0; 60];
        let v = all_valid(60);
        let f = extract_features(RawPatch {
            fhr: &fhr,
            fhr_valid: &v,
            ua: &ua,
            ua_valid: &v,
        });
        assert!((f.0[5] - 1.0).abs() < 1e-12);
        assert!((f.0[8] - 60.0).abs() < 1e-9);
        assert_eq!(f.0[4], 59.0);
        assert_eq!(f.0[4], f.0[3] - f.0[2]);
    }

    #[test]
    fn sparse_channel_uses_fallbacks() {
        let fhr = vec![150.0; 60];
        let mut fv = vec![false; 60];
        fv[10] = true;
        let ua: Vec<f64> = (0..60).map(|t| (t as f64 * 0.3).sin() * 10.0 + 30.0).collect();
        let uv = all_valid(60);
        let f = extract_features(RawPatch {
            fhr: &fhr,
            fhr_valid: &fv,
            ua: &ua,
            ua_valid: &uv,
        });
        assert_eq!(&f.0[..11], &[150.0, 0.0, 150.0, 150.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((f.0[11] - 59.0 / 120.0).abs() < 1e-12);
        assert_eq!(f.0[16], 0.0);
    }

    #[test]
    fn standardization() {
        let stats = FeatureStats {
            mean: vec![10.0, 5.0],
            std: vec![2.0, 0.0],
        };
        assert_eq!(stats.apply(&[14.0, 7.0]), vec![2.0, 0.0]);
        let s = FeatureStandardizer::new();
        assert!(matches!(s.transform(&[]), Err(Error::StatsNotFitted)));
    }
}
