//! Random-projection quantization: pseudo-labels for signal patches, their
//! invariance to positive rescaling, and codebook usage over a corpus.
//!
//! cargo run --release --example quantize

use ctg_ssl::pretrain::segments_from_records;
use ctg_ssl::quantizer::{Quantizer, QuantizerSpec};
use ctg_ssl::signal::{normalize, to_patches, PATCH_LEN};
use ctg_ssl::synth::{generate_corpus, CorpusSpec};

fn main() -> ctg_ssl::Result<()> {
    let q = Quantizer::build(QuantizerSpec::signal(1))?;
    println!(
        "signal quantizer: {} -> {} dims, {} codes",
        q.spec.d_in, q.spec.d_lat, q.spec.codebook_size
    );

    let corpus = generate_corpus(&CorpusSpec::new(30, 0.5, 3))?;
    let segs = segments_from_records(&corpus.records, 1200, false)?;
    let mut used = vec![0usize; q.spec.codebook_size];
    for s in &segs {
        let grid = to_patches(&normalize(s), PATCH_LEN)?;
        for l in q.quantize_grid(&grid)? {
            used[l] += 1;
        }
    }
    let distinct = used.iter().filter(|&&c| c > 0).count();
    let top = used.iter().max().copied().unwrap_or(0);
    println!("{} patches use {distinct} distinct codes, most frequent {top}", segs.len() * 20);

    let grid = to_patches(&normalize(&segs[0]), PATCH_LEN)?;
    let x = grid.patches[0].clone();
    let base = q.quantize(&x)?;
    for c in [1e-3, 0.5, 7.0, 1e4] {
        let y: Vec<f64> = x.iter().map(|v| v * c).collect();
        println!("scale {c:>8}: label {} (unscaled {base})", q.quantize(&y)?);
    }
    Ok(())
}
