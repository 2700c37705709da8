//! The closed-loop synthetic study: a pretraining corpus, a labelled probe
//! corpus, and helpers that probe a frozen model on it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::model::Model;
use crate::nn::Real;
use crate::pretrain::{prepare_pretraining, segments_from_records, PreparedCorpus, PreparedSegment, StepMetrics, Trainer};
use crate::probe::{
    dropout_robustness, embed_segments, prepare_probe_segments, probe_task, raw_features, stratified_split, DropoutBin,
    ProbeData, ProbeReport, ProbeSettings, Split,
};
use crate::signal::WINDOW_LEN;
use crate::synth::{generate_corpus, Corpus, CorpusSpec, DropoutPlan};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub pretrain_records: usize,
    /// Seconds per pretraining record.
    pub pretrain_duration: usize,
    /// Filtered segments kept for pretraining.
    pub pretrain_segments: usize,
    /// One-segment labelled records.
    pub probe_records: usize,
    /// Dropout targets cycled over probe records.
    pub probe_dropout: Vec<f64>,
    pub seed: u64,
}

impl Default for StudySpec {
    fn default() -> Self {
        StudySpec {
            pretrain_records: 840,
            pretrain_duration: 3600,
            pretrain_segments: 2000,
            probe_records: 400,
            probe_dropout: vec![0.05, 0.17, 0.37],
            seed: 0,
        }
    }
}

impl StudySpec {
    pub fn pretrain_corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            duration: self.pretrain_duration,
            dropout: DropoutPlan::Uniform { lo: 0.0, hi: 0.6 },
            id_prefix: "pre".into(),
            ..CorpusSpec::new(self.pretrain_records, 0.5, self.seed)
        }
    }

    pub fn probe_corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            duration: WINDOW_LEN,
            dropout: DropoutPlan::Cycle(self.probe_dropout.clone()),
            id_prefix: "probe".into(),
            ..CorpusSpec::new(self.probe_records, 0.5, self.seed.wrapping_add(1))
        }
    }
}

/// Generates, filters and prepares the pretraining segments, keeping the
/// first `pretrain_segments` in record order.
pub fn pretraining_corpus(spec: &StudySpec, cfg: &ModelConfig) -> Result<PreparedCorpus> {
    let corpus = generate_corpus(&spec.pretrain_corpus_spec())?;
    let mut raw = segments_from_records(&corpus.records, WINDOW_LEN, true)?;
    if raw.len() < spec.pretrain_segments {
        return Err(Error::InvalidInput(format!(
            "only {} segments survive filtering, {} requested",
            raw.len(),
            spec.pretrain_segments
        )));
    }
    raw.truncate(spec.pretrain_segments);
    let quantizers = Model::<f32>::new(cfg.clone())?;
    prepare_pretraining(&raw, cfg, &quantizers.sig_q, &quantizers.feat_q)
}

/// Labelled probe corpus with its prepared segments.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub corpus: Corpus,
    pub segments: Vec<PreparedSegment>,
}

impl ProbeSet {
    pub fn generate<T: Real>(spec: &StudySpec, model: &Model<T>) -> Result<Self> {
        let corpus = generate_corpus(&spec.probe_corpus_spec())?;
        let segments = prepare_probe_segments(model, &corpus.records, WINDOW_LEN)?;
        Ok(ProbeSet { corpus, segments })
    }

    pub fn labels(&self, task: &str) -> Result<BTreeMap<String, u8>> {
        self.corpus
            .records
            .iter()
            .zip(&self.corpus.labels)
            .map(|(r, l)| {
                l.get(task)
                    .map(|v| (r.record_id.clone(), v))
                    .ok_or_else(|| Error::InvalidInput(format!("unknown task `{task}`")))
            })
            .collect()
    }

    pub fn data(&self, task: &str, x: Vec<Vec<f64>>) -> Result<ProbeData> {
        let labels = self.labels(task)?;
        ProbeData::new(&self.segments, x, |r| Ok(labels.get(r).copied()))
    }

    pub fn embed<T: Real>(&self, model: &Model<T>) -> Result<Vec<Vec<f64>>> {
        embed_segments(model, &self.segments)
    }

    pub fn raw(&self) -> Vec<Vec<f64>> {
        raw_features(&self.segments)
    }

    pub fn split(&self, task: &str, seed: u64) -> Result<Split> {
        stratified_split(&self.labels(task)?, 0.2, seed)
    }
}

/// Pretrains `cfg` for `tc.steps` steps on the study's pretraining corpus.
pub fn pretrain<F>(spec: &StudySpec, cfg: &ModelConfig, tc: TrainConfig, mut hook: F) -> Result<Trainer>
where
    F: FnMut(&StepMetrics),
{
    let corpus = pretraining_corpus(spec, cfg)?;
    let steps = tc.steps;
    let mut trainer = Trainer::new(cfg.clone(), tc, corpus)?;
    trainer.run_until(steps, |_, m| {
        hook(m);
        Ok(())
    })?;
    Ok(trainer)
}

/// Probe results for one representation on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub representation: String,
    pub task: String,
    pub full: ProbeReport,
    /// Train fraction [`LOW_FRACTION`].
    pub low: ProbeReport,
    pub bins: Vec<ProbeReport>,
}

pub const LOW_FRACTION: f64 = 0.1;

impl StudyRow {
    pub fn auc(&self) -> f64 {
        self.full.auc_mean.unwrap_or(f64::NAN)
    }

    /// AUC in the first dropout bin minus AUC in the last.
    pub fn bin_drop(&self) -> f64 {
        let at = |r: Option<&ProbeReport>| r.and_then(|r| r.auc_mean).unwrap_or(f64::NAN);
        at(self.bins.first()) - at(self.bins.last())
    }
}

/// Full-fraction, low-fraction and per-dropout-bin probes for every
/// representation and task. Every representation sees the same per-run splits.
pub fn evaluate(
    probes: &ProbeSet,
    reps: &[(&str, Vec<Vec<f64>>)],
    tasks: &[&str],
    settings: &ProbeSettings,
) -> Result<Vec<StudyRow>> {
    let mut rows = vec![];
    for &task in tasks {
        for (name, x) in reps {
            let data = probes.data(task, x.clone())?;
            rows.push(StudyRow {
                representation: name.to_string(),
                task: task.to_string(),
                full: probe_task(&data, settings, 1.0, name, task)?,
                low: probe_task(&data, settings, LOW_FRACTION, name, task)?,
                bins: dropout_robustness(&data, settings, &DropoutBin::default_bins(), name, task)?,
            });
        }
    }
    Ok(rows)
}
