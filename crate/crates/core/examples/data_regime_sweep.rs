//! Probe AUC as the labelled training set shrinks, for a random-init encoder
//! and the raw signal. Reports land in `sweep_out/`.
//!
//! cargo run --release --example data_regime_sweep

use std::path::Path;

use ctg_ssl::config::ModelConfig;
use ctg_ssl::model::Model;
use ctg_ssl::probe::{data_regime_sweep, write_reports, ProbeSettings};
use ctg_ssl::study::{ProbeSet, StudySpec};

fn main() -> ctg_ssl::Result<()> {
    let spec = StudySpec {
        probe_records: 200,
        ..StudySpec::default()
    };
    let model = Model::<f32>::new(ModelConfig::default())?;
    let probes = ProbeSet::generate(&spec, &model)?;
    let settings = ProbeSettings::default();
    let fractions = [0.1, 0.25, 0.5, 0.75, 1.0];
    let mut all = vec![];
    for task in ["abnormal", "near_delivery"] {
        for (name, x) in [("random_init", probes.embed(&model)?), ("raw_signal", probes.raw())] {
            let reps = data_regime_sweep(&probes.data(task, x)?, &settings, &fractions, name, task)?;
            let line: Vec<String> = reps
                .iter()
                .map(|r| format!("{:.2}:{:.3}", r.train_fraction, r.auc_mean.unwrap_or(f64::NAN)))
                .collect();
            println!("{task:14} {name:12} {}", line.join("  "));
            all.extend(reps);
        }
    }
    write_reports(Path::new("sweep_out"), "sweep", &all)?;
    println!("wrote sweep_out/sweep.csv, sweep.ndjson, sweep_plot.csv");
    Ok(())
}
