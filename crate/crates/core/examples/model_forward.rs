//! One forward pass through every part of the model, printing shapes, the
//! isolation mask and the probe representation.
//!
//! cargo run --release --example model_forward

use std::sync::Arc;

use ctg_ssl::config::ModelConfig;
use ctg_ssl::model::{isolation_mask, Model, SampleInput};
use ctg_ssl::nn::Graph;
use ctg_ssl::pretrain::{prepare_segment, sample_mask, segments_from_records};
use ctg_ssl::synth::{generate_corpus, CorpusSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ctg_ssl::Result<()> {
    let cfg = ModelConfig::default();
    let model = Model::<f32>::new(cfg.clone())?;
    let n_params: usize = model.params.iter().filter(|p| p.trainable).map(|p| p.numel()).sum();
    println!("trainable parameters: {n_params}");

    let corpus = generate_corpus(&CorpusSpec::new(1, 1.0, 5))?;
    let raw = segments_from_records(&corpus.records, 1200, false)?;
    let seg = prepare_segment(&raw[0], &cfg, &model.sig_q, None, None)?;
    let x = SampleInput {
        values: &seg.values,
        signal_labels: &seg.signal_labels,
    };

    let mask = sample_mask(cfg.n_patches, cfg.mask_ratio, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("masked patches {:?}", mask.masked);

    let m = isolation_mask(cfg.n_cls(), 4)?;
    println!("isolation mask, 3 task tokens + 4 patches (1 = may attend):");
    for i in 0..7 {
        let row: String = (0..7).map(|j| if m.allows(i, j) { '1' } else { '.' }).collect();
        println!("  {row}");
    }

    let mut g = Graph::new(&model.params);
    let out = model.forward_pretrain(&mut g, &x, &mask.visible)?;
    println!("encoded patches  {:?}", g.shape(out.enc.patches));
    println!("reconstruction   {:?}", out.recon.map(|v| g.shape(v)));
    println!("metadata head    {:?}", out.meta.map(|v| g.shape(v)));
    println!("feature logits   {:?}", out.feat_logits.map(|v| g.shape(v)));

    let mut g2 = Graph::new(&model.params);
    let full = model.encode_with_mask(
        &mut g2,
        &x,
        &(0..cfg.n_patches).collect::<Vec<_>>(),
        Arc::new(isolation_mask(cfg.n_cls(), cfg.n_patches)?),
    )?;
    println!("unmasked encoder {:?}", g2.shape(full.patches));

    let rep = model.forward_probe(&x)?;
    println!("probe representation: {} dims, first {:?}", rep.len(), &rep[..4]);
    Ok(())
}
