//! The closed-loop study at full size: pretrain, then probe the frozen
//! encoder against a random-init encoder and a raw-signal linear model.
//!
//! cargo run --release --example closed_loop -- [steps] [out_dir]

use std::path::PathBuf;

use ctg_ssl::config::{ModelConfig, TrainConfig};
use ctg_ssl::model::Model;
use ctg_ssl::pretrain::save_checkpoint;
use ctg_ssl::probe::ProbeSettings;
use ctg_ssl::study::{self, ProbeSet, StudySpec};

fn main() -> ctg_ssl::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let out = PathBuf::from(args.get(1).cloned().unwrap_or_else(|| "closed_loop_out".into()));
    std::fs::create_dir_all(&out).ok();

    let spec = StudySpec::default();
    let cfg = ModelConfig::default();
    let tc = TrainConfig { steps, ..TrainConfig::default() };
    let t0 = std::time::Instant::now();
    let trainer = study::pretrain(&spec, &cfg, tc, |m| {
        if m.step % 100 == 0 || m.step + 1 == steps {
            println!(
                "step {:5} loss {:7.4} r {:.3} v {:.3} f {:.3} rmse {:5.2} ({:.0}s)",
                m.step, m.loss, m.loss_r, m.loss_v, m.loss_f, m.fhr_rmse_bpm, t0.elapsed().as_secs_f64()
            );
        }
    })?;
    let digest = save_checkpoint(&out.join("checkpoint.bin"), &trainer.checkpoint())?;
    println!("checkpoint {digest}");

    let random = Model::<f32>::new(cfg)?;
    let probes = ProbeSet::generate(&spec, &trainer.model)?;
    let reps = [
        ("pretrained", probes.embed(&trainer.model)?),
        ("random_init", probes.embed(&random)?),
        ("raw_signal", probes.raw()),
    ];
    let rows = study::evaluate(&probes, &reps, &["abnormal", "near_delivery"], &ProbeSettings::default())?;
    for r in &rows {
        let b: Vec<String> = r.bins.iter().map(|b| format!("{:.3}", b.auc_mean.unwrap_or(f64::NAN))).collect();
        println!(
            "{:14} {:12} auc {:.3}±{:.3}  10% {:.3}  bins {}",
            r.task,
            r.representation,
            r.auc(),
            r.full.auc_sd.unwrap_or(f64::NAN),
            r.low.auc_mean.unwrap_or(f64::NAN),
            b.join(" ")
        );
    }
    ctg_ssl::io::write_json(&out.join("study.json"), &rows)?;
    Ok(())
}
