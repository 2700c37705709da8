//! CTG domain types and deterministic preprocessing.
//!
//! The pipeline is `downsample_4hz_to_1hz -> window_segments -> fill_gaps ->
//! normalize -> to_patches`. Missing samples are `None` until gap filling,
//! after which a validity mask remembers which samples were observed.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Samples per segment at 1 Hz (20 minutes).
pub const WINDOW_LEN: usize = 1200;
/// Samples per patch (1 minute at 1 Hz).
pub const PATCH_LEN: usize = 60;
/// Channels: FHR then UA.
pub const CHANNELS: usize = 2;
/// Patches per segment.
pub const N_PATCHES: usize = WINDOW_LEN / PATCH_LEN;

/// Interior gaps up to this many samples are linearly interpolated.
pub const MAX_INTERP_GAP: usize = 30;

pub const FHR_VALID_MIN: f64 = 30.0;
pub const FHR_VALID_MAX: f64 = 240.0;
pub const UA_MIN: f64 = 0.0;
pub const UA_MAX: f64 = 100.0;

pub const FHR_DEFAULT: f64 = 130.0;
pub const UA_DEFAULT: f64 = 10.0;

const FHR_CENTER: f64 = 130.0;
const FHR_SCALE: f64 = 30.0;
const FHR_CLIP: (f64, f64) = (50.0, 210.0);
const UA_CENTER: f64 = 25.0;
const UA_SCALE: f64 = 25.0;
const UA_CLIP: (f64, f64) = (0.0, 100.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    /// Weeks.
    pub gestational_age: f64,
    /// Days.
    pub time_to_birth: f64,
    /// Years.
    pub maternal_age: f64,
}

impl Metadata {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gestational_age.is_finite()
            && self.time_to_birth.is_finite()
            && self.maternal_age.is_finite()
            && (20.0..=44.0).contains(&self.gestational_age)
            && self.time_to_birth >= 0.0
            && (14.0..=55.0).contains(&self.maternal_age);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("metadata out of range: {self:?}")))
        }
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.gestational_age, self.time_to_birth, self.maternal_age]
    }
}

/// A two-channel CTG recording. Sample rate is implied by the pipeline stage
/// (4 Hz at ingestion, 1 Hz after downsampling).
#[derive(Debug, Clone, PartialEq)]
pub struct CtgRecord {
    pub record_id: String,
    pub fhr: Vec<Option<f64>>,
    pub ua: Vec<Option<f64>>,
    pub metadata: Metadata,
}

impl CtgRecord {
    /// Builds a record applying the ingestion rules: non-finite values and FHR
    /// outside [30, 240] bpm become missing, UA is clipped to [0, 100].
    pub fn ingest(
        record_id: impl Into<String>,
        fhr: impl IntoIterator<Item = Option<f64>>,
        ua: impl IntoIterator<Item = Option<f64>>,
        metadata: Metadata,
    ) -> Result<Self> {
        let fhr: Vec<_> = fhr
            .into_iter()
            .map(|v| v.filter(|x| x.is_finite() && (FHR_VALID_MIN..=FHR_VALID_MAX).contains(x)))
            .collect();
        let ua: Vec<_> = ua
            .into_iter()
            .map(|v| v.filter(|x| x.is_finite()).map(|x| x.clamp(UA_MIN, UA_MAX)))
            .collect();
        if fhr.len() != ua.len() {
            return Err(Error::InvalidInput(format!(
                "fhr and ua lengths differ ({} vs {})",
                fhr.len(),
                ua.len()
            )));
        }
        metadata.validate()?;
        Ok(CtgRecord {
            record_id: record_id.into(),
            fhr,
            ua,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.fhr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fhr.is_empty()
    }
}

/// Mean of each block of 4 samples, ignoring missing ones. A trailing partial
/// block is dropped.
pub fn downsample_4hz_to_1hz(record: &CtgRecord) -> Result<CtgRecord> {
    if record.len() < 4 {
        return Err(Error::EmptyRecord);
    }
    let block = |xs: &[Option<f64>]| -> Vec<Option<f64>> {
        xs.chunks_exact(4)
            .map(|c| {
                let (sum, n) = c
                    .iter()
                    .flatten()
                    .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
                (n > 0).then(|| sum / n as f64)
            })
            .collect()
    };
    Ok(CtgRecord {
        record_id: record.record_id.clone(),
        fhr: block(&record.fhr),
        ua: block(&record.ua),
        metadata: record.metadata,
    })
}

/// A 1 Hz window with missing flags still in place.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    pub values: Vec<[Option<f64>; CHANNELS]>,
    pub metadata: Metadata,
    pub source_record: String,
    pub start_offset: usize,
}

/// Windows of [`WINDOW_LEN`] samples starting every `stride` samples. Windows
/// that would run past the end are discarded.
pub fn window_segments(record: &CtgRecord, stride: usize) -> Result<Vec<RawWindow>> {
    if stride == 0 {
        return Err(Error::InvalidInput("stride must be >= 1".into()));
    }
    let len = record.len();
    let mut out = Vec::new();
    let mut offset = 0;
    while offset + WINDOW_LEN <= len {
        let values = (offset..offset + WINDOW_LEN)
            .map(|t| [record.fhr[t], record.ua[t]])
            .collect();
        out.push(RawWindow {
            values,
            metadata: record.metadata,
            source_record: record.record_id.clone(),
            start_offset: offset,
        });
        offset += stride;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    Raw,
    Normalized,
}

/// A gap-filled window. `values` never contains missing samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub values: Vec<[f64; CHANNELS]>,
    pub valid: Vec<[bool; CHANNELS]>,
    pub missing_fraction: f64,
    pub metadata: Metadata,
    pub source_record: String,
    pub start_offset: usize,
    pub scale: Scale,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Stable identifier `record@offset`.
    pub fn id(&self) -> String {
        format!("{}@{}", self.source_record, self.start_offset)
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[c]).collect()
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn fill_channel(xs: &[Option<f64>], default: f64) -> Vec<f64> {
    let mut observed: Vec<f64> = xs.iter().flatten().copied().collect();
    if observed.is_empty() {
        return vec![default; xs.len()];
    }
    let med = median(&mut observed);
    let mut out: Vec<f64> = xs.iter().map(|v| v.unwrap_or(med)).collect();

    let mut t = 0;
    while t < xs.len() {
        if xs[t].is_some() {
            t += 1;
            continue;
        }
        let start = t;
        while t < xs.len() && xs[t].is_none() {
            t += 1;
        }
        let gap = t - start;
        // interior gaps only; boundary gaps keep the median
        if start > 0 && t < xs.len() && gap <= MAX_INTERP_GAP {
            let left = xs[start - 1].unwrap();
            let right = xs[t].unwrap();
            let span = (gap + 1) as f64;
            for (k, slot) in out[start..t].iter_mut().enumerate() {
                let w = (k + 1) as f64 / span;
                *slot = left + w * (right - left);
            }
        }
    }
    out
}

/// Fills gaps: interior gaps of at most 30 samples are interpolated, all
/// other gaps take the channel median; an empty channel takes its default.
pub fn fill_gaps(window: &RawWindow) -> Segment {
    let n = window.values.len();
    let fhr: Vec<Option<f64>> = window.values.iter().map(|v| v[0]).collect();
    let ua: Vec<Option<f64>> = window.values.iter().map(|v| v[1]).collect();
    let fhr_f = fill_channel(&fhr, FHR_DEFAULT);
    let ua_f = fill_channel(&ua, UA_DEFAULT);

    let valid: Vec<[bool; CHANNELS]> = window
        .values
        .iter()
        .map(|v| [v[0].is_some(), v[1].is_some()])
        .collect();
    let n_valid: usize = valid.iter().map(|v| v[0] as usize + v[1] as usize).sum();
    let missing_fraction = if n == 0 {
        1.0
    } else {
        1.0 - n_valid as f64 / (CHANNELS * n) as f64
    };

    Segment {
        values: fhr_f.into_iter().zip(ua_f).map(|(a, b)| [a, b]).collect(),
        valid,
        missing_fraction,
        metadata: window.metadata,
        source_record: window.source_record.clone(),
        start_offset: window.start_offset,
        scale: Scale::Raw,
    }
}

pub fn normalize_fhr(x: f64) -> f64 {
    (x.clamp(FHR_CLIP.0, FHR_CLIP.1) - FHR_CENTER) / FHR_SCALE
}

pub fn normalize_ua(x: f64) -> f64 {
    (x.clamp(UA_CLIP.0, UA_CLIP.1) - UA_CENTER) / UA_SCALE
}

pub fn denormalize_fhr(z: f64) -> f64 {
    z * FHR_SCALE + FHR_CENTER
}

pub fn denormalize_ua(z: f64) -> f64 {
    z * UA_SCALE + UA_CENTER
}

pub fn normalize(segment: &Segment) -> Segment {
    if segment.scale == Scale::Normalized {
        return segment.clone();
    }
    let mut out = segment.clone();
    for v in &mut out.values {
        *v = [normalize_fhr(v[0]), normalize_ua(v[1])];
    }
    out.scale = Scale::Normalized;
    out
}

pub fn denormalize(segment: &Segment) -> Segment {
    if segment.scale == Scale::Raw {
        return segment.clone();
    }
    let mut out = segment.clone();
    for v in &mut out.values {
        *v = [denormalize_fhr(v[0]), denormalize_ua(v[1])];
    }
    out.scale = Scale::Raw;
    out
}

/// Keeps segments with at most half of their samples missing.
pub fn filter_for_pretraining(segments: Vec<Segment>) -> Vec<Segment> {
    segments
        .into_iter()
        .filter(|s| s.missing_fraction <= 0.5)
        .collect()
}

/// Non-overlapping patches of a segment. Each patch row holds the FHR samples
/// of that minute followed by the UA samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patches: Vec<Vec<f64>>,
    pub valid: Vec<Vec<bool>>,
    pub patch_valid_fraction: Vec<f64>,
    pub patch_len: usize,
}

impl PatchGrid {
    pub fn n_patches(&self) -> usize {
        self.patches.len()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_len * CHANNELS
    }

    /// Inverse of [`to_patches`].
    pub fn reassemble(&self) -> Vec<[f64; CHANNELS]> {
        let p = self.patch_len;
        let mut out = Vec::with_capacity(self.patches.len() * p);
        for patch in &self.patches {
            for t in 0..p {
                out.push([patch[t], patch[p + t]]);
            }
        }
        out
    }
}

pub fn to_patches(segment: &Segment, patch_len: usize) -> Result<PatchGrid> {
    if patch_len == 0 || segment.len() % patch_len != 0 || segment.is_empty() {
        return Err(Error::InvalidInput(format!(
            "segment length {} not divisible by patch length {patch_len}",
            segment.len()
        )));
    }
    let n = segment.len() / patch_len;
    let mut patches = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    let mut frac = Vec::with_capacity(n);
    for i in 0..n {
        let span = i * patch_len..(i + 1) * patch_len;
        let mut row = Vec::with_capacity(patch_len * CHANNELS);
        let mut vrow = Vec::with_capacity(patch_len * CHANNELS);
        for c in 0..CHANNELS {
            for t in span.clone() {
                row.push(segment.values[t][c]);
                vrow.push(segment.valid[t][c]);
            }
        }
        frac.push(vrow.iter().filter(|&&b| b).count() as f64 / vrow.len() as f64);
        patches.push(row);
        valid.push(vrow);
    }
    Ok(PatchGrid {
        patches,
        valid,
        patch_valid_fraction: frac,
        patch_len,
    })
}

/// Full preprocessing of one 4 Hz record into gap-filled raw-scale segments.
pub fn preprocess_record(record: &CtgRecord, stride: usize) -> Result<Vec<Segment>> {
    let one_hz = downsample_4hz_to_1hz(record)?;
    Ok(window_segments(&one_hz, stride)?
        .iter()
        .map(fill_gaps)
        .collect())
}
