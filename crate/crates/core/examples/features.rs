//! Extracts the 17 per-patch clinical features from one synthetic window.
//!
//! cargo run --release --example features -- [seed]

use ctg_ssl::features::{grid_features, FEATURE_NAMES};
use ctg_ssl::pretrain::segments_from_records;
use ctg_ssl::signal::{normalize, to_patches, PATCH_LEN};
use ctg_ssl::synth::{draw_params, generate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ctg_ssl::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = draw_params(&mut rng, true, false, 0.1, 1200);
    let (record, label) = generate("demo", &params)?;
    println!("abnormal={} baseline {:.1} bpm", label.abnormal, params.baseline_bpm);

    let seg = &segments_from_records(&[record], 1200, false)?[0];
    let grid = to_patches(&normalize(seg), PATCH_LEN)?;
    let feats = grid_features(&grid);

    print!("{:>20}", "patch");
    for i in (0..feats.len()).step_by(4) {
        print!("{i:>9}");
    }
    println!();
    for (j, name) in FEATURE_NAMES.iter().enumerate() {
        print!("{name:>20}");
        for f in feats.iter().step_by(4) {
            print!("{:>9.3}", f.0[j]);
        }
        println!();
    }
    Ok(())
}
