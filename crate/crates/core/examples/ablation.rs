//! Pretrains every ablation variant for the same number of steps on the same
//! data and compares their probe AUCs.
//!
//! cargo run --release --example ablation -- [steps]

use ctg_ssl::config::{ModelConfig, TrainConfig};
use ctg_ssl::probe::{ablation_variants, probe_task, ProbeSettings};
use ctg_ssl::study::{self, ProbeSet, StudySpec};

fn main() -> ctg_ssl::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let spec = StudySpec {
        pretrain_records: 120,
        pretrain_segments: 250,
        probe_records: 200,
        ..StudySpec::default()
    };
    let base = ModelConfig {
        d_model: 32,
        enc_layers: 2,
        dec_layers: 1,
        cnn_channels: 8,
        cnn_blocks: 1,
        ..ModelConfig::default()
    };
    let mut full_auc = None;
    for (name, cfg) in ablation_variants(&base) {
        let tc = TrainConfig { steps, batch_size: 16, ..TrainConfig::default() };
        let trainer = study::pretrain(&spec, &cfg, tc, |_| {})?;
        let probes = ProbeSet::generate(&spec, &trainer.model)?;
        let x = probes.embed(&trainer.model)?;
        let mut aucs = vec![];
        for task in ["abnormal", "near_delivery"] {
            let r = probe_task(&probes.data(task, x.clone())?, &ProbeSettings::default(), 1.0, name, task)?;
            aucs.push(r.auc_mean.unwrap_or(f64::NAN));
        }
        let mean = (aucs[0] + aucs[1]) / 2.0;
        let full = *full_auc.get_or_insert(mean);
        println!(
            "{name:26} abnormal {:.3}  near_delivery {:.3}  mean {mean:.3}  delta {:+.3}",
            aucs[0],
            aucs[1],
            mean - full
        );
    }
    Ok(())
}
