//! Probe experiments: standard probe, data-regime sweep, dropout bins and
//! the ablation variant list.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::auc::auc;
use super::linear::{train_linear_probe, LinearProbe, ProbeHyper};
use super::split::{stratified_split, subsample_stratified, Split};
use crate::config::ModelConfig;
use crate::pretrain::PreparedSegment;
use crate::{io, Error, Result};

/// Labelled representation rows for one task. Rows without a label are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeData {
    pub segment_ids: Vec<String>,
    pub record_ids: Vec<String>,
    pub labels: Vec<u8>,
    pub missing: Vec<f64>,
    pub x: Vec<Vec<f64>>,
}

impl ProbeData {
    pub fn new<F>(segs: &[PreparedSegment], x: Vec<Vec<f64>>, mut label_of: F) -> Result<Self>
    where
        F: FnMut(&str) -> Result<Option<u8>>,
    {
        if segs.len() != x.len() {
            return Err(Error::InvalidInput("one representation per segment expected".into()));
        }
        let mut d = ProbeData {
            segment_ids: vec![],
            record_ids: vec![],
            labels: vec![],
            missing: vec![],
            x: vec![],
        };
        for (s, row) in segs.iter().zip(x) {
            if let Some(l) = label_of(&s.record_id)? {
                d.segment_ids.push(s.id.clone());
                d.record_ids.push(s.record_id.clone());
                d.labels.push(l);
                d.missing.push(s.missing_fraction);
                d.x.push(row);
            }
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Record label: the label of the record's first segment.
    pub fn record_labels(&self) -> BTreeMap<String, u8> {
        let mut m = BTreeMap::new();
        for (r, &l) in self.record_ids.iter().zip(&self.labels) {
            m.entry(r.clone()).or_insert(l);
        }
        m
    }

    pub fn indices_of(&self, records: &BTreeSet<String>) -> Vec<usize> {
        (0..self.len()).filter(|&i| records.contains(&self.record_ids[i])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub hyper: ProbeHyper,
    pub n_runs: usize,
    pub seed: u64,
    pub test_fraction: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            hyper: ProbeHyper::default(),
            n_runs: 5,
            seed: 0,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutBin {
    pub lo: f64,
    pub hi: f64,
    pub closed_hi: bool,
}

impl DropoutBin {
    pub fn default_bins() -> Vec<DropoutBin> {
        vec![
            DropoutBin { lo: 0.0, hi: 0.1, closed_hi: false },
            DropoutBin { lo: 0.1, hi: 0.25, closed_hi: false },
            DropoutBin { lo: 0.25, hi: 0.5, closed_hi: true },
        ]
    }

    pub fn contains(&self, m: f64) -> bool {
        m >= self.lo && (m < self.hi || (self.closed_hi && m == self.hi))
    }

    pub fn name(&self) -> String {
        format!("[{},{}{}", self.lo, self.hi, if self.closed_hi { "]" } else { ")" })
    }
}

/// Minimum test segments per class for a dropout bin to be scored.
pub const MIN_BIN_PER_CLASS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Which representation was probed, e.g. `pretrained`, `random_init`, `raw_signal`.
    pub representation: String,
    pub task: String,
    pub train_fraction: f64,
    pub dropout_bin: Option<DropoutBin>,
    /// `ok` or `insufficient`.
    pub status: String,
    pub auc_mean: Option<f64>,
    pub auc_sd: Option<f64>,
    /// Test AUC of each scored run.
    pub aucs: Vec<f64>,
    /// Segment counts are totals over all runs.
    pub n_train: usize,
    pub n_test: usize,
    pub n_test_pos: usize,
    pub n_test_neg: usize,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

/// One record-level split per run: run `r` uses split seed `seed + r`.
pub fn run_splits(data: &ProbeData, settings: &ProbeSettings) -> Result<Vec<Split>> {
    let labels = data.record_labels();
    (0..settings.n_runs as u64)
        .map(|r| stratified_split(&labels, settings.test_fraction, settings.seed.wrapping_add(r)))
        .collect()
}

/// A probe fitted on run `r`'s split and the test segments it is scored on.
struct Run {
    probe: LinearProbe,
    test: Vec<usize>,
    n_train: usize,
}

fn fit_runs(data: &ProbeData, fraction: f64, s: &ProbeSettings) -> Result<Vec<Run>> {
    if s.n_runs == 0 {
        return Err(Error::InvalidInput("n_runs must be >= 1".into()));
    }
    let mut runs = Vec::with_capacity(s.n_runs);
    for (r, split) in run_splits(data, s)?.iter().enumerate() {
        if !split.is_disjoint() {
            return Err(Error::InvalidInput("train and test records overlap".into()));
        }
        let r = r as u64;
        let train = data.indices_of(&split.train);
        let sub = subsample_stratified(&train, &data.labels, fraction, s.seed.wrapping_add(1000 + r));
        let x: Vec<Vec<f64>> = sub.iter().map(|&i| data.x[i].clone()).collect();
        let y: Vec<u8> = sub.iter().map(|&i| data.labels[i]).collect();
        runs.push(Run {
            probe: train_linear_probe(&x, &y, &s.hyper, s.seed.wrapping_add(r))?.probe,
            test: data.indices_of(&split.test),
            n_train: sub.len(),
        });
    }
    Ok(runs)
}

/// Scores each run on the subset of its test segments accepted by `keep`.
/// With `require_min`, runs where either class has fewer than
/// [`MIN_BIN_PER_CLASS`] segments are skipped; the report is insufficient if
/// no run is left.
fn score_report<F>(data: &ProbeData, runs: &[Run], keep: F, base: ProbeReport, require_min: bool) -> Result<ProbeReport>
where
    F: Fn(usize) -> bool,
{
    let mut rep = base;
    for run in runs {
        let test: Vec<usize> = run.test.iter().copied().filter(|&i| keep(i)).collect();
        let y: Vec<u8> = test.iter().map(|&i| data.labels[i]).collect();
        let n_pos = y.iter().filter(|&&l| l == 1).count();
        let n_neg = y.len() - n_pos;
        rep.n_train += run.n_train;
        rep.n_test += test.len();
        rep.n_test_pos += n_pos;
        rep.n_test_neg += n_neg;
        let min = if require_min { MIN_BIN_PER_CLASS } else { 1 };
        if n_pos < min || n_neg < min {
            continue;
        }
        let scores: Vec<f64> = test.iter().map(|&i| run.probe.score(&data.x[i])).collect();
        rep.aucs.push(auc(&scores, &y)?);
    }
    if rep.aucs.is_empty() {
        rep.status = "insufficient".into();
    } else {
        let (m, sd) = mean_sd(&rep.aucs);
        rep.auc_mean = Some(m);
        rep.auc_sd = Some(sd);
        rep.status = "ok".into();
    }
    Ok(rep)
}

fn blank(representation: &str, task: &str, fraction: f64) -> ProbeReport {
    ProbeReport {
        representation: representation.into(),
        task: task.into(),
        train_fraction: fraction,
        dropout_bin: None,
        status: String::new(),
        auc_mean: None,
        auc_sd: None,
        aucs: vec![],
        n_train: 0,
        n_test: 0,
        n_test_pos: 0,
        n_test_neg: 0,
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("train fraction {fraction} outside (0, 1]")));
    }
    Ok(())
}

/// Trains `n_runs` probes, each on a stratified `fraction` of its own split's
/// train segments, and reports the test AUC over runs. Fraction 1 is the
/// standard probe.
pub fn probe_task(
    data: &ProbeData,
    settings: &ProbeSettings,
    fraction: f64,
    representation: &str,
    task: &str,
) -> Result<ProbeReport> {
    check_fraction(fraction)?;
    let runs = fit_runs(data, fraction, settings)?;
    score_report(data, &runs, |_| true, blank(representation, task, fraction), false)
}

/// [`probe_task`] at each fraction. Runs share splits across fractions.
pub fn data_regime_sweep(
    data: &ProbeData,
    settings: &ProbeSettings,
    fractions: &[f64],
    representation: &str,
    task: &str,
) -> Result<Vec<ProbeReport>> {
    fractions
        .iter()
        .map(|&f| probe_task(data, settings, f, representation, task))
        .collect()
}

/// Probes trained on the full train split of each run, scored separately on
/// the test segments of each dropout bin.
pub fn dropout_robustness(
    data: &ProbeData,
    settings: &ProbeSettings,
    bins: &[DropoutBin],
    representation: &str,
    task: &str,
) -> Result<Vec<ProbeReport>> {
    let runs = fit_runs(data, 1.0, settings)?;
    bins.iter()
        .map(|b| {
            let base = ProbeReport {
                dropout_bin: Some(*b),
                ..blank(representation, task, 1.0)
            };
            score_report(data, &runs, |i| b.contains(data.missing[i]), base, true)
        })
        .collect()
}

/// The full model and one variant per disabled component.
pub fn ablation_variants(base: &ModelConfig) -> Vec<(&'static str, ModelConfig)> {
    let with = |f: fn(&mut ModelConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    vec![
        ("full", base.clone()),
        ("no_cnn", with(|c| c.use_cnn = false)),
        ("no_label_embed", with(|c| c.use_label_embed = false)),
        ("no_multiview", with(|c| c.use_multiview = false)),
        ("no_bestrq_mae", with(|c| c.use_bestrq_mae = false)),
        ("no_uncertainty_weighting", with(|c| c.use_uncertainty_weighting = false)),
    ]
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Writes `<name>.csv`, `<name>.ndjson` and `<name>_plot.csv` (series, x, y, sd).
/// The plot x is the train fraction, or the bin midpoint for dropout reports.
pub fn write_reports(dir: &Path, name: &str, reports: &[ProbeReport]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = [
        "representation", "task", "train_fraction", "dropout_bin", "status", "auc_mean", "auc_sd", "n_train", "n_test",
        "n_test_pos", "n_test_neg",
    ];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.representation.clone(),
                r.task.clone(),
                r.train_fraction.to_string(),
                r.dropout_bin.map(|b| b.name()).unwrap_or_default(),
                r.status.clone(),
                opt(r.auc_mean),
                opt(r.auc_sd),
                r.n_train.to_string(),
                r.n_test.to_string(),
                r.n_test_pos.to_string(),
                r.n_test_neg.to_string(),
            ]
        })
        .collect();
    io::write_csv(&dir.join(format!("{name}.csv")), &header, &rows)?;
    io::write_ndjson_rows(&dir.join(format!("{name}.ndjson")), reports)?;
    let plot: Vec<Vec<String>> = reports
        .iter()
        .filter(|r| r.auc_mean.is_some())
        .map(|r| {
            let x = r.dropout_bin.map(|b| (b.lo + b.hi) / 2.0).unwrap_or(r.train_fraction);
            vec![r.representation.clone(), x.to_string(), opt(r.auc_mean), opt(r.auc_sd)]
        })
        .collect();
    io::write_csv(&dir.join(format!("{name}_plot.csv")), &["series", "x", "y", "sd"], &plot)
}
