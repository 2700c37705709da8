//! Finite-difference check of the full pretraining loss in 64-bit, per
//! parameter group.
//!
//! cargo run --release --example gradcheck -- [fraction] [--full]

use ctg_ssl::config::ModelConfig;
use ctg_ssl::selfcheck;

fn main() -> ctg_ssl::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let fraction: f64 = args.iter().find_map(|a| a.parse().ok()).unwrap_or(0.05);
    let cfg = if args.iter().any(|a| a == "--full") {
        ModelConfig::default()
    } else {
        ModelConfig {
            d_model: 16,
            heads: 2,
            enc_layers: 2,
            dec_layers: 1,
            cnn_channels: 4,
            cnn_blocks: 1,
            ..ModelConfig::default()
        }
    };
    let (outcome, report) = selfcheck::gradients(&cfg, 2, fraction, 1e-4, 0)?;
    for g in &report.groups {
        println!(
            "{:28} checked {:5}  max rel err {:.2e}  max |grad| {:.2e}",
            g.name, g.checked, g.max_rel_error, g.max_abs_grad
        );
    }
    println!("frozen gradients zero: {}", report.frozen_grads_zero);
    println!("{}: {}", if outcome.passed { "PASS" } else { "FAIL" }, outcome.detail);
    Ok(())
}
