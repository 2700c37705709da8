//! Interrupts a training run, saves and reloads the checkpoint, and shows the
//! resumed run ends bit-identical to an uninterrupted one.
//!
//! cargo run --release --example checkpoint_resume

use ctg_ssl::config::{ModelConfig, TrainConfig};
use ctg_ssl::pretrain::{checkpoint_digest, load_checkpoint, save_checkpoint, Trainer};
use ctg_ssl::selfcheck::tiny_corpus;

fn main() -> ctg_ssl::Result<()> {
    let cfg = ModelConfig {
        d_model: 32,
        enc_layers: 2,
        dec_layers: 1,
        cnn_channels: 8,
        cnn_blocks: 1,
        ..ModelConfig::default()
    };
    let tc = TrainConfig { steps: 20, batch_size: 8, seed: 7, ..TrainConfig::default() };
    let corpus = tiny_corpus(&cfg, 6, 3)?;
    let dir = std::env::temp_dir().join("ctg_ssl_resume");

    let mut straight = Trainer::new(cfg.clone(), tc.clone(), corpus.clone())?;
    straight.run_until(20, |_, _| Ok(()))?;
    let a = save_checkpoint(&dir.join("straight.bin"), &straight.checkpoint())?;

    let mut first = Trainer::new(cfg, tc, corpus.clone())?;
    first.run_until(8, |_, _| Ok(()))?;
    let mid = save_checkpoint(&dir.join("step8.bin"), &first.checkpoint())?;
    println!("interrupted at step 8, checkpoint {}", &mid[..16]);
    drop(first);

    let mut resumed = Trainer::resume(load_checkpoint(&dir.join("step8.bin"))?, corpus)?;
    resumed.run_until(20, |_, m| {
        if m.step % 4 == 0 {
            println!("  step {:2} loss {:.5}", m.step, m.loss);
        }
        Ok(())
    })?;
    let b = save_checkpoint(&dir.join("resumed.bin"), &resumed.checkpoint())?;
    println!("uninterrupted {}\nresumed       {}", &a[..16], &b[..16]);
    println!("identical: {}", a == b && checkpoint_digest(&dir.join("resumed.bin"))? == a);
    Ok(())
}
