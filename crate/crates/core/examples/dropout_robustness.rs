//! Probe AUC by proportion of missing signal, on a probe corpus whose records
//! cycle through three dropout levels.
//!
//! cargo run --release --example dropout_robustness

use ctg_ssl::config::ModelConfig;
use ctg_ssl::model::Model;
use ctg_ssl::probe::{dropout_robustness, DropoutBin, ProbeSettings};
use ctg_ssl::study::{ProbeSet, StudySpec};

fn main() -> ctg_ssl::Result<()> {
    let spec = StudySpec::default();
    let model = Model::<f32>::new(ModelConfig::default())?;
    let probes = ProbeSet::generate(&spec, &model)?;
    let bins = DropoutBin::default_bins();
    for b in &bins {
        let n = probes.segments.iter().filter(|s| b.contains(s.missing_fraction)).count();
        println!("bin {:12} {n} segments", b.name());
    }
    let task = "abnormal";
    for (name, x) in [("random_init", probes.embed(&model)?), ("raw_signal", probes.raw())] {
        let reps = dropout_robustness(&probes.data(task, x)?, &ProbeSettings::default(), &bins, name, task)?;
        for r in reps {
            println!(
                "{name:12} {:12} {:12} AUC {}  (test {} pos / {} neg)",
                r.dropout_bin.map(|b| b.name()).unwrap_or_default(),
                r.status,
                r.auc_mean.map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into()),
                r.n_test_pos,
                r.n_test_neg
            );
        }
    }
    Ok(())
}
