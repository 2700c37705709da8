//! Corpus preparation: segments, pseudo-labels, and fitted statistics.

use rayon::prelude::*;

use crate::config::ModelConfig;
use crate::features::{grid_features, FeatureStats, FeatureVector};
use crate::quantizer::Quantizer;
use crate::signal::{self, CtgRecord, PatchGrid, Segment, CHANNELS};
use crate::{Error, Result};

/// Z-score statistics of the three metadata targets.
pub type MetaStats = FeatureStats;

/// A segment ready for the model: normalized values, patch grid and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSegment {
    pub id: String,
    pub record_id: String,
    pub start_offset: usize,
    pub values: Vec<[f64; CHANNELS]>,
    /// Normalized patches with validity.
    pub grid: PatchGrid,
    pub signal_labels: Vec<usize>,
    /// Empty unless feature statistics were supplied.
    pub feature_labels: Vec<usize>,
    pub meta_z: [f64; 3],
    pub missing_fraction: f64,
}

/// Gap-filled raw-scale segments of every record, in record order.
pub fn segments_from_records(records: &[CtgRecord], stride: usize, pretraining_filter: bool) -> Result<Vec<Segment>> {
    let per: Vec<Result<Vec<Segment>>> = records
        .par_iter()
        .map(|r| signal::preprocess_record(r, stride))
        .collect();
    let mut out = Vec::new();
    for s in per {
        out.extend(s?);
    }
    Ok(if pretraining_filter {
        signal::filter_for_pretraining(out)
    } else {
        out
    })
}

/// Normalizes, patches and labels one raw-scale segment.
pub fn prepare_segment(
    raw: &Segment,
    cfg: &ModelConfig,
    sig_q: &Quantizer,
    feat: Option<(&FeatureStats, &Quantizer)>,
    meta: Option<&MetaStats>,
) -> Result<PreparedSegment> {
    let norm = signal::normalize(raw);
    let grid = signal::to_patches(&norm, cfg.patch_len)?;
    if grid.n_patches() != cfg.n_patches {
        return Err(Error::InvalidInput(format!(
            "segment has {} patches, model expects {}",
            grid.n_patches(),
            cfg.n_patches
        )));
    }
    let signal_labels = sig_q.quantize_grid(&grid)?;
    let feature_labels = match feat {
        Some((stats, q)) => grid_features(&grid)
            .iter()
            .map(|f| q.quantize(&stats.apply(f.as_slice())))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let meta_z = match meta {
        Some(m) => {
            let z = m.apply(&raw.metadata.to_array());
            [z[0], z[1], z[2]]
        }
        None => [0.0; 3],
    };
    Ok(PreparedSegment {
        id: raw.id(),
        record_id: raw.source_record.clone(),
        start_offset: raw.start_offset,
        values: norm.values,
        grid,
        signal_labels,
        feature_labels,
        meta_z,
        missing_fraction: raw.missing_fraction,
    })
}

#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub segments: Vec<PreparedSegment>,
    pub feature_stats: FeatureStats,
    pub meta_stats: MetaStats,
}

/// Fits feature and metadata statistics on `raw` (already filtered) and
/// prepares every segment with full targets.
pub fn prepare_pretraining(raw: &[Segment], cfg: &ModelConfig, sig_q: &Quantizer, feat_q: &Quantizer) -> Result<PreparedCorpus> {
    if raw.is_empty() {
        return Err(Error::InvalidInput("pretraining corpus is empty".into()));
    }
    let feats: Vec<Vec<FeatureVector>> = raw
        .par_iter()
        .map(|s| {
            let g = signal::to_patches(&signal::normalize(s), cfg.patch_len)?;
            Ok(grid_features(&g))
        })
        .collect::<Result<_>>()?;
    let feature_stats = FeatureStats::fit(feats.iter().flatten().map(|f| f.as_slice()))?;
    let metas: Vec<[f64; 3]> = raw.iter().map(|s| s.metadata.to_array()).collect();
    let meta_stats = FeatureStats::fit(metas.iter().map(|m| m.as_slice()))?;
    let segments = raw
        .par_iter()
        .map(|s| prepare_segment(s, cfg, sig_q, Some((&feature_stats, feat_q)), Some(&meta_stats)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedCorpus {
        segments,
        feature_stats,
        meta_stats,
    })
}
