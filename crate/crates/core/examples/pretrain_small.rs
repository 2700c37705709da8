//! Pretrains a small model on a synthetic corpus and prints the loss curve.
//!
//! cargo run --release --example pretrain_small -- [steps] [batch]

use ctg_ssl::config::{ModelConfig, TrainConfig};
use ctg_ssl::model::Model;
use ctg_ssl::pretrain::{prepare_pretraining, segments_from_records, Trainer};
use ctg_ssl::synth::{generate_corpus, CorpusSpec, DropoutPlan};

fn main() -> ctg_ssl::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let steps = args.first().copied().unwrap_or(50);
    let batch = args.get(1).copied().unwrap_or(16);

    let corpus = generate_corpus(&CorpusSpec {
        duration: 3600,
        dropout: DropoutPlan::Uniform { lo: 0.0, hi: 0.6 },
        ..CorpusSpec::new(60, 0.5, 7)
    })?;
    let raw = segments_from_records(&corpus.records, 1200, true)?;
    println!("{} records -> {} segments after filtering", corpus.records.len(), raw.len());

    let cfg = ModelConfig::default();
    let probe_model = Model::<f32>::new(cfg.clone())?;
    let prepared = prepare_pretraining(&raw, &cfg, &probe_model.sig_q, &probe_model.feat_q)?;
    let tc = TrainConfig {
        steps,
        batch_size: batch,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg, tc, prepared)?;
    let t0 = std::time::Instant::now();
    trainer.run_until(steps, |_, m| {
        if m.step % 10 == 0 || m.step + 1 == steps {
            println!(
                "step {:4}  loss {:8.4}  r {:.4}  v {:.4}  f {:.4}  rmse {:5.2} bpm  |g| {:.3}",
                m.step, m.loss, m.loss_r, m.loss_v, m.loss_f, m.fhr_rmse_bpm, m.grad_norm
            );
        }
        Ok(())
    })?;
    println!("{:.1} ms/step", t0.elapsed().as_secs_f64() * 1e3 / steps as f64);
    Ok(())
}
