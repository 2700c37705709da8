//! Seeded synthetic CTG generator with ground-truth labels.
//!
//! FHR is a baseline plus band-limited noise, Gaussian accelerations and
//! decelerations (mostly trailing contractions). UA is a tone plus periodic
//! raised-cosine contractions. Dropout is applied as contiguous runs.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io;
use crate::signal::{CtgRecord, Metadata};
use crate::{Error, Result};

pub const GENERATOR_VERSION: &str = "ctg-synth/1";

pub const SAMPLE_HZ: usize = 4;
const NOISE_WINDOW: usize = 16;
const DECEL_AFTER_CONTRACTION_P: f64 = 0.7;
const CONTRACTION_HALF_WIDTH_S: f64 = 45.0;

/// Thresholds behind the synthetic labels.
pub const ABNORMAL_MAX_VARIABILITY: f64 = 5.0;
pub const ABNORMAL_MIN_DECEL_RATE: f64 = 6.0;
pub const NEAR_DELIVERY_DAYS: f64 = 7.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub baseline_bpm: f64,
    pub variability_bpm: f64,
    /// Events per hour.
    pub accel_rate: f64,
    /// Events per hour.
    pub decel_rate: f64,
    pub decel_depth_bpm: f64,
    /// Seconds.
    pub contraction_period: f64,
    pub contraction_amplitude: f64,
    pub dropout_fraction: f64,
    /// Seconds.
    pub duration: usize,
    pub seed: u64,
    /// Drawn from the seed when absent.
    pub metadata: Option<Metadata>,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            baseline_bpm: 140.0,
            variability_bpm: 8.0,
            accel_rate: 3.0,
            decel_rate: 1.0,
            decel_depth_bpm: 20.0,
            contraction_period: 300.0,
            contraction_amplitude: 40.0,
            dropout_fraction: 0.0,
            duration: 1200,
            seed: 0,
            metadata: None,
        }
    }
}

fn check(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if v.is_finite() && (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name}={v} outside [{lo}, {hi}]")))
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        check("baseline_bpm", self.baseline_bpm, 110.0, 160.0)?;
        check("variability_bpm", self.variability_bpm, 0.0, 25.0)?;
        check("accel_rate", self.accel_rate, 0.0, 60.0)?;
        check("decel_rate", self.decel_rate, 0.0, 60.0)?;
        check("decel_depth_bpm", self.decel_depth_bpm, 10.0, 60.0)?;
        check("contraction_period", self.contraction_period, 120.0, 600.0)?;
        check("contraction_amplitude", self.contraction_amplitude, 0.0, 100.0)?;
        check("dropout_fraction", self.dropout_fraction, 0.0, 0.6)?;
        if self.duration == 0 {
            return Err(Error::InvalidInput("duration must be positive".into()));
        }
        if let Some(m) = &self.metadata {
            m.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenLabel {
    pub abnormal: u8,
    pub near_delivery: u8,
}

impl GenLabel {
    pub fn from_params(params: &GenParams, metadata: &Metadata) -> Self {
        let abnormal = params.variability_bpm < ABNORMAL_MAX_VARIABILITY && params.decel_rate >= ABNORMAL_MIN_DECEL_RATE;
        GenLabel {
            abnormal: abnormal as u8,
            near_delivery: (metadata.time_to_birth <= NEAR_DELIVERY_DAYS) as u8,
        }
    }

    pub fn get(&self, task: &str) -> Option<u8> {
        match task {
            "abnormal" => Some(self.abnormal),
            "near_delivery" => Some(self.near_delivery),
            _ => None,
        }
    }
}

fn draw_metadata<R: Rng>(rng: &mut R, near_delivery: bool) -> Metadata {
    let maternal = Normal::new(30.0, 5.0).unwrap().sample(rng);
    Metadata {
        gestational_age: rng.gen_range(26.0..42.0),
        time_to_birth: if near_delivery {
            rng.gen_range(0.0..NEAR_DELIVERY_DAYS)
        } else {
            rng.gen_range(7.5..100.0)
        },
        maternal_age: f64::clamp(maternal, 16.0, 50.0),
    }
}

fn gaussian_bump(t: f64, center: f64, sigma: f64) -> f64 {
    (-0.5 * ((t - center) / sigma).powi(2)).exp()
}

fn poisson_times<R: Rng>(rng: &mut R, rate_per_hour: f64, duration: f64) -> Vec<f64> {
    if rate_per_hour <= 0.0 {
        return Vec::new();
    }
    let gap = Exp::new(rate_per_hour / 3600.0).unwrap();
    let mut out = Vec::new();
    let mut t = gap.sample(rng);
    while t < duration {
        out.push(t);
        t += gap.sample(rng);
    }
    out
}

fn apply_dropout<R: Rng>(rng: &mut R, n: usize, fraction: f64) -> Vec<bool> {
    let target = (fraction * n as f64).round() as usize;
    let mut missing = vec![false; n];
    let mut count = 0;
    while count < target {
        let start = rng.gen_range(0..n);
        let len = rng.gen_range(4 * SAMPLE_HZ..=120 * SAMPLE_HZ);
        for m in missing.iter_mut().skip(start).take(len) {
            if count == target {
                break;
            }
            if !*m {
                *m = true;
                count += 1;
            }
        }
    }
    missing
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Generates one 4 Hz record and its labels. Output depends only on `params`.
pub fn generate(record_id: &str, params: &GenParams) -> Result<(CtgRecord, GenLabel)> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let metadata = match params.metadata {
        Some(m) => m,
        None => {
            let near = rng.gen_bool(0.5);
            draw_metadata(&mut rng, near)
        }
    };
    let n = params.duration * SAMPLE_HZ;
    let dt = 1.0 / SAMPLE_HZ as f64;
    let duration = params.duration as f64;
    let time = |i: usize| i as f64 * dt;

    // uterine activity
    let tone = rng.gen_range(5.0..15.0);
    let mut peaks = Vec::new();
    let mut p = rng.gen_range(0.0..params.contraction_period);
    while p < duration {
        peaks.push(p);
        p += params.contraction_period * rng.gen_range(0.8..1.2);
    }
    let ua_noise = Normal::new(0.0, 0.5).unwrap();
    let ua: Vec<f64> = (0..n)
        .map(|i| {
            let t = time(i);
            let contraction: f64 = peaks
                .iter()
                .filter(|&&pk| (t - pk).abs() < CONTRACTION_HALF_WIDTH_S)
                .map(|&pk| {
                    0.5 * params.contraction_amplitude
                        * (1.0 + (std::f64::consts::PI * (t - pk) / CONTRACTION_HALF_WIDTH_S).cos())
                })
                .sum();
            (tone + contraction + ua_noise.sample(&mut rng)).clamp(0.0, 100.0)
        })
        .collect();

    // FHR variability: moving average of white noise, rescaled to sd = variability / 4
    let mut fhr = vec![params.baseline_bpm; n];
    if params.variability_bpm > 0.0 {
        let unit = Normal::new(0.0, 1.0).unwrap();
        let white: Vec<f64> = (0..n + NOISE_WINDOW).map(|_| unit.sample(&mut rng)).collect();
        let gain = (NOISE_WINDOW as f64).sqrt() * params.variability_bpm / 4.0;
        let mut acc: f64 = white[..NOISE_WINDOW].iter().sum();
        for i in 0..n {
            fhr[i] += gain * acc / NOISE_WINDOW as f64;
            acc += white[i + NOISE_WINDOW] - white[i];
        }
    }

    for center in poisson_times(&mut rng, params.accel_rate, duration) {
        let amp = rng.gen_range(15.0..25.0);
        let sigma = rng.gen_range(15.0..45.0) / 4.0;
        for (i, x) in fhr.iter_mut().enumerate() {
            *x += amp * gaussian_bump(time(i), center, sigma);
        }
    }
    for t0 in poisson_times(&mut rng, params.decel_rate, duration) {
        let center = if !peaks.is_empty() && rng.gen_bool(DECEL_AFTER_CONTRACTION_P) {
            peaks[rng.gen_range(0..peaks.len())] + rng.gen_range(0.0..30.0)
        } else {
            t0
        };
        let sigma = rng.gen_range(30.0..90.0) / 4.0;
        for (i, x) in fhr.iter_mut().enumerate() {
            *x -= params.decel_depth_bpm * gaussian_bump(time(i), center, sigma);
        }
    }

    let fhr_missing = apply_dropout(&mut rng, n, params.dropout_fraction);
    let ua_missing = apply_dropout(&mut rng, n, params.dropout_fraction);

    let fhr = fhr
        .iter()
        .zip(&fhr_missing)
        .map(|(&x, &m)| (!m).then(|| round2(x.clamp(40.0, 230.0))));
    let ua = ua.iter().zip(&ua_missing).map(|(&x, &m)| (!m).then(|| round2(x)));
    let record = CtgRecord::ingest(record_id, fhr, ua, metadata)?;
    let label = GenLabel::from_params(params, &metadata);
    Ok((record, label))
}

/// How dropout targets are assigned to corpus records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DropoutPlan {
    Uniform { lo: f64, hi: f64 },
    /// Record `i` uses `targets[i % len]`.
    Cycle(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_records: usize,
    /// Proportion of `abnormal` records.
    pub abnormal_fraction: f64,
    /// Proportion of `near_delivery` records.
    pub near_delivery_fraction: f64,
    /// Seconds per record.
    pub duration: usize,
    pub dropout: DropoutPlan,
    pub seed: u64,
    pub id_prefix: String,
}

impl CorpusSpec {
    pub fn new(n_records: usize, abnormal_fraction: f64, seed: u64) -> Self {
        CorpusSpec {
            n_records,
            abnormal_fraction,
            near_delivery_fraction: 0.5,
            duration: 1200,
            dropout: DropoutPlan::Uniform { lo: 0.0, hi: 0.3 },
            seed,
            id_prefix: "rec".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub records: Vec<CtgRecord>,
    pub labels: Vec<GenLabel>,
    pub params: Vec<GenParams>,
}

fn stratified_flags(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let k = ((n as f64) * fraction).round() as usize;
    let mut flags: Vec<bool> = (0..n).map(|i| i < k.min(n)).collect();
    flags.shuffle(rng);
    flags
}

/// Record parameters for one class assignment.
pub fn draw_params<R: Rng>(rng: &mut R, abnormal: bool, near_delivery: bool, dropout: f64, duration: usize) -> GenParams {
    let (variability, decel_rate, accel_rate) = if abnormal {
        (rng.gen_range(1.5..4.5), rng.gen_range(6.0..12.0), rng.gen_range(0.0..2.0))
    } else {
        let accel = rng.gen_range(1.0..6.0);
        match rng.gen_range(0.0..1.0) {
            u if u < 0.5 => (rng.gen_range(6.0..15.0), rng.gen_range(0.0..3.0), accel),
            u if u < 0.75 => (rng.gen_range(6.0..15.0), rng.gen_range(6.0..12.0), accel),
            _ => (rng.gen_range(1.5..4.5), rng.gen_range(0.0..3.0), accel),
        }
    };
    let (period, amplitude) = if near_delivery {
        (rng.gen_range(150.0..300.0), rng.gen_range(40.0..80.0))
    } else {
        (rng.gen_range(240.0..600.0), rng.gen_range(15.0..55.0))
    };
    let metadata = draw_metadata(rng, near_delivery);
    GenParams {
        baseline_bpm: rng.gen_range(120.0..155.0),
        variability_bpm: variability,
        accel_rate,
        decel_rate,
        decel_depth_bpm: rng.gen_range(15.0..40.0),
        contraction_period: period,
        contraction_amplitude: amplitude,
        dropout_fraction: dropout,
        duration,
        seed: rng.gen(),
        metadata: Some(metadata),
    }
}

/// Generates a class-stratified corpus in memory.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    if spec.n_records == 0 {
        return Err(Error::InvalidInput("n_records must be >= 1".into()));
    }
    for f in [spec.abnormal_fraction, spec.near_delivery_fraction] {
        check("class fraction", f, 0.0, 1.0)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let abnormal = stratified_flags(spec.n_records, spec.abnormal_fraction, &mut rng);
    let near = stratified_flags(spec.n_records, spec.near_delivery_fraction, &mut rng);

    let generated: Vec<Result<(CtgRecord, GenLabel, GenParams)>> = (0..spec.n_records)
        .into_par_iter()
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
            r.set_stream(i as u64 + 1);
            let dropout = match &spec.dropout {
                DropoutPlan::Uniform { lo, hi } => {
                    if hi > lo {
                        r.gen_range(*lo..*hi)
                    } else {
                        *lo
                    }
                }
                DropoutPlan::Cycle(t) => t[i % t.len()],
            };
            let params = draw_params(&mut r, abnormal[i], near[i], dropout, spec.duration);
            let id = format!("{}{:05}", spec.id_prefix, i);
            let (rec, label) = generate(&id, &params)?;
            Ok((rec, label, params))
        })
        .collect();

    let mut corpus = Corpus {
        records: Vec::with_capacity(spec.n_records),
        labels: Vec::with_capacity(spec.n_records),
        params: Vec::with_capacity(spec.n_records),
    };
    for g in generated {
        let (rec, label, params) = g?;
        corpus.records.push(rec);
        corpus.labels.push(label);
        corpus.params.push(params);
    }
    Ok(corpus)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub generator_version: String,
    pub seed: u64,
    pub n_records: usize,
    pub abnormal_fraction: f64,
    pub near_delivery_fraction: f64,
    pub realized_abnormal: usize,
    pub realized_near_delivery: usize,
    pub spec: CorpusSpec,
}

/// Writes `records.ndjson`, `labels.csv` and `manifest.json` into `dir`.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec, corpus: &Corpus) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_ndjson(&dir.join(io::RECORDS_FILE), &corpus.records)?;
    let rows: Vec<(String, GenLabel)> = corpus
        .records
        .iter()
        .zip(&corpus.labels)
        .map(|(r, l)| (r.record_id.clone(), *l))
        .collect();
    io::write_labels(&dir.join(io::LABELS_FILE), &rows)?;
    let manifest = CorpusManifest {
        generator_version: GENERATOR_VERSION.into(),
        seed: spec.seed,
        n_records: spec.n_records,
        abnormal_fraction: spec.abnormal_fraction,
        near_delivery_fraction: spec.near_delivery_fraction,
        realized_abnormal: corpus.labels.iter().filter(|l| l.abnormal == 1).count(),
        realized_near_delivery: corpus.labels.iter().filter(|l| l.near_delivery == 1).count(),
        spec: spec.clone(),
    };
    io::write_json(&dir.join("manifest.json"), &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_signal_without_stochastic_terms() {
        let p = GenParams {
            variability_bpm: 0.0,
            accel_rate: 0.0,
            decel_rate: 0.0,
            dropout_fraction: 0.0,
            ..GenParams::default()
        };
        let (rec, _) = generate("a", &p).unwrap();
        assert!(rec.fhr.iter().all(|x| *x == Some(140.0)));
        assert_eq!(rec.len(), 1200 * 4);
    }

    #[test]
    fn dropout_fraction_is_realized() {
        let p = GenParams {
            dropout_fraction: 0.3,
            duration: 3600,
            ..GenParams::default()
        };
        let (rec, _) = generate("a", &p).unwrap();
        for ch in [&rec.fhr, &rec.ua] {
            let f = ch.iter().filter(|x| x.is_none()).count() as f64 / ch.len() as f64;
            assert!((0.25..=0.35).contains(&f), "{f}");
        }
    }

    #[test]
    fn same_seed_same_record() {
        let p = GenParams {
            seed: 99,
            dropout_fraction: 0.2,
            ..GenParams::default()
        };
        assert_eq!(generate("a", &p).unwrap(), generate("a", &p).unwrap());
    }

    #[test]
    fn rejects_out_of_range_params() {
        let p = GenParams {
            baseline_bpm: 200.0,
            ..GenParams::default()
        };
        assert!(generate("a", &p).is_err());
    }

    #[test]
    fn stratified_class_mix() {
        let c = generate_corpus(&CorpusSpec {
            duration: 300,
            ..CorpusSpec::new(100, 0.5, 3)
        })
        .unwrap();
        let n_abn = c.labels.iter().filter(|l| l.abnormal == 1).count();
        assert!((49..=51).contains(&n_abn));
        for (p, l) in c.params.iter().zip(&c.labels) {
            assert_eq!(GenLabel::from_params(p, p.metadata.as_ref().unwrap()), *l);
        }
        let one = generate_corpus(&CorpusSpec {
            duration: 300,
            ..CorpusSpec::new(1, 0.5, 3)
        })
        .unwrap();
        assert_eq!(one.records.len(), 1);
    }
}
