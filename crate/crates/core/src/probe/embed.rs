//! Frozen representations of labelled segments, with an on-disk cache.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Model, SampleInput};
use crate::nn::Real;
use crate::pretrain::{prepare_segment, segments_from_records, PreparedSegment};
use crate::signal::CtgRecord;
use crate::Result;

/// Every window of every record (no pretraining filter), normalized and
/// tokenized with the model's signal quantizer.
pub fn prepare_probe_segments<T: Real>(model: &Model<T>, records: &[CtgRecord], stride: usize) -> Result<Vec<PreparedSegment>> {
    let raw = segments_from_records(records, stride, false)?;
    raw.par_iter()
        .map(|s| prepare_segment(s, &model.cfg, &model.sig_q, None, None))
        .collect()
}

/// Representation vectors in segment order.
pub fn embed_segments<T: Real>(model: &Model<T>, segs: &[PreparedSegment]) -> Result<Vec<Vec<f64>>> {
    segs.par_iter()
        .map(|s| {
            model.forward_probe(&SampleInput {
                values: &s.values,
                signal_labels: &s.signal_labels,
            })
        })
        .collect()
}

/// The normalized signal itself, flattened: the input of the supervised
/// raw-signal comparator.
pub fn raw_features(segs: &[PreparedSegment]) -> Vec<Vec<f64>> {
    segs.iter().map(|s| s.values.iter().flat_map(|v| v.iter().copied()).collect()).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheFile {
    checkpoint_digest: String,
    rows: BTreeMap<String, Vec<f64>>,
}

fn cache_path(dir: &Path, digest: &str) -> PathBuf {
    dir.join(format!("embeddings-{}.json", &digest[..digest.len().min(16)]))
}

/// Like [`embed_segments`], reusing `cache_dir` entries keyed by checkpoint
/// digest and segment id. A cache whose recorded digest differs is ignored
/// and rewritten.
pub fn embed_corpus<T: Real>(
    model: &Model<T>,
    digest: &str,
    segs: &[PreparedSegment],
    cache_dir: Option<&Path>,
) -> Result<Vec<Vec<f64>>> {
    let Some(dir) = cache_dir else {
        return embed_segments(model, segs);
    };
    let path = cache_path(dir, digest);
    let mut cache = std::fs::read(&path)
        .ok()
        .and_then(|b| serde_json::from_slice::<CacheFile>(&b).ok())
        .filter(|c| c.checkpoint_digest == digest)
        .unwrap_or_else(|| CacheFile {
            checkpoint_digest: digest.to_string(),
            rows: BTreeMap::new(),
        });
    let todo: Vec<PreparedSegment> = segs.iter().filter(|s| !cache.rows.contains_key(&s.id)).cloned().collect();
    if !todo.is_empty() {
        for (s, e) in todo.iter().zip(embed_segments(model, &todo)?) {
            cache.rows.insert(s.id.clone(), e);
        }
        std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
        crate::io::write_json(&path, &cache)?;
    }
    Ok(segs.iter().map(|s| cache.rows[&s.id].clone()).collect())
}
