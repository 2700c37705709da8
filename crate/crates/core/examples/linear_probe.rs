//! Briefly pretrains a small encoder, embeds a labelled probe corpus through
//! the frozen encoder (with an on-disk cache) and runs the standard probe.
//!
//! cargo run --release --example linear_probe -- [steps]

use ctg_ssl::config::{ModelConfig, TrainConfig};
use ctg_ssl::model::Model;
use ctg_ssl::pretrain::{prepare_pretraining, save_checkpoint, segments_from_records, Trainer};
use ctg_ssl::probe::{embed_corpus, prepare_probe_segments, probe_task, raw_features, ProbeData, ProbeSettings};
use ctg_ssl::synth::{generate_corpus, CorpusSpec, DropoutPlan};

fn main() -> ctg_ssl::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let cfg = ModelConfig {
        d_model: 32,
        enc_layers: 2,
        dec_layers: 1,
        cnn_channels: 8,
        cnn_blocks: 1,
        ..ModelConfig::default()
    };

    let pre = generate_corpus(&CorpusSpec {
        duration: 3600,
        dropout: DropoutPlan::Uniform { lo: 0.0, hi: 0.4 },
        ..CorpusSpec::new(60, 0.5, 1)
    })?;
    let q = Model::<f32>::new(cfg.clone())?;
    let corpus = prepare_pretraining(&segments_from_records(&pre.records, 1200, true)?, &cfg, &q.sig_q, &q.feat_q)?;
    let tc = TrainConfig { steps, batch_size: 16, ..TrainConfig::default() };
    let mut trainer = Trainer::new(cfg.clone(), tc, corpus)?;
    trainer.run_until(steps, |_, _| Ok(()))?;

    let dir = std::env::temp_dir().join("ctg_ssl_linear_probe");
    let digest = save_checkpoint(&dir.join("checkpoint.bin"), &trainer.checkpoint())?;
    println!("pretrained {steps} steps, checkpoint {}", &digest[..16]);

    let lab = generate_corpus(&CorpusSpec::new(160, 0.5, 2))?;
    let labels = lab
        .records
        .iter()
        .zip(&lab.labels)
        .map(|(r, l)| (r.record_id.clone(), l.abnormal))
        .collect::<std::collections::BTreeMap<_, _>>();
    let segs = prepare_probe_segments(&trainer.model, &lab.records, 1200)?;

    let t0 = std::time::Instant::now();
    let x = embed_corpus(&trainer.model, &digest, &segs, Some(&dir.join("cache")))?;
    let t1 = std::time::Instant::now();
    embed_corpus(&trainer.model, &digest, &segs, Some(&dir.join("cache")))?;
    println!(
        "embedded {} segments in {:.2}s, cached lookup {:.3}s",
        segs.len(),
        (t1 - t0).as_secs_f64(),
        t1.elapsed().as_secs_f64()
    );
    let settings = ProbeSettings::default();
    for (name, x) in [("pretrained", x), ("raw_signal", raw_features(&segs))] {
        let data = ProbeData::new(&segs, x, |r| Ok(labels.get(r).copied()))?;
        let r = probe_task(&data, &settings, 1.0, name, "abnormal")?;
        println!(
            "{name:11} AUC {:.3} ± {:.3} over {} runs ({} train / {} test segments)",
            r.auc_mean.unwrap_or(f64::NAN),
            r.auc_sd.unwrap_or(f64::NAN),
            r.aucs.len(),
            r.n_train,
            r.n_test
        );
    }
    Ok(())
}
