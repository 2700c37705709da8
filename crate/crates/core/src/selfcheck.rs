//! The invariant battery behind `selfcheck`. Every check is sized by its
//! arguments so the same code serves a quick CLI run and a full sweep.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::config::{ModelConfig, TrainConfig};
use crate::model::{isolation_mask, Model, SampleInput};
use crate::nn::{check_gradients, Grads, Graph, GradCheckReport, ParamStore};
use crate::pretrain::{batch_objective, loss, prepare_pretraining, sample_mask, segments_from_records, AdamW, PreparedCorpus, Trainer};
use crate::probe::auc;
use crate::quantizer::{Quantizer, QuantizerSpec};
use crate::signal::{CHANNELS, WINDOW_LEN};
use crate::synth::{generate_corpus, CorpusSpec, DropoutPlan};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name: name.into(),
            passed,
            detail,
        }
    }
}

fn random_input(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> (Vec<[f64; CHANNELS]>, Vec<usize>, Vec<usize>) {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let values = (0..WINDOW_LEN).map(|_| [normal.sample(rng), normal.sample(rng)]).collect();
    let labels = (0..cfg.n_patches).map(|_| rng.gen_range(0..cfg.sig_codebook)).collect();
    let mask = sample_mask(cfg.n_patches, rng.gen_range(0.1..0.9), rng).expect("valid ratio");
    (values, labels, mask.visible)
}

fn bits(g: &Graph<'_, f32>, v: crate::nn::Var) -> Vec<u32> {
    g.value(v).iter().map(|x| x.to_bits()).collect()
}

/// Perturbing one initial task token leaves every other task token and all
/// patch tokens bit-identical at the encoder output.
pub fn isolation(cfg: &ModelConfig, pairs: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    let mut compared = 0usize;
    for p in 0..pairs {
        let model = Model::<f32>::new(ModelConfig {
            init_seed: seed.wrapping_mul(1000).wrapping_add(p as u64),
            ..cfg.clone()
        })?;
        let (values, labels, visible) = random_input(cfg, &mut rng);
        let input = SampleInput {
            values: &values,
            signal_labels: &labels,
        };
        let mask = Arc::new(isolation_mask(cfg.n_cls(), visible.len())?);
        let base_store = model.params.clone();
        let mut g = Graph::new(&base_store);
        let base = model.encode_with_mask(&mut g, &input, &visible, mask.clone())?;
        let base_cls: Vec<Vec<u32>> = base.cls.iter().map(|&c| bits(&g, c)).collect();
        let base_patches = bits(&g, base.patches);
        for (t, &cid) in model.cls_ids().iter().enumerate() {
            let mut store = model.params.clone();
            for v in store.get_mut(cid).value.iter_mut() {
                *v += rng.gen_range(-1.0f32..1.0);
            }
            let mut g2 = Graph::new(&store);
            let out = model.encode_with_mask(&mut g2, &input, &visible, mask.clone())?;
            for (u, &c) in out.cls.iter().enumerate() {
                if u != t {
                    compared += 1;
                    violations += (bits(&g2, c) != base_cls[u]) as usize;
                }
            }
            compared += 1;
            violations += (bits(&g2, out.patches) != base_patches) as usize;
        }
    }
    Ok(CheckOutcome::new(
        "isolation",
        violations == 0,
        format!("{pairs} pairs, {compared} comparisons, {violations} differ"),
    ))
}

/// A few fully prepared segments for objective-level checks.
pub fn tiny_corpus(cfg: &ModelConfig, n_records: usize, seed: u64) -> Result<PreparedCorpus> {
    let corpus = generate_corpus(&CorpusSpec {
        dropout: DropoutPlan::Uniform { lo: 0.0, hi: 0.2 },
        ..CorpusSpec::new(n_records, 0.5, seed)
    })?;
    let raw = segments_from_records(&corpus.records, WINDOW_LEN, true)?;
    let q = Model::<f32>::new(cfg.clone())?;
    prepare_pretraining(&raw, cfg, &q.sig_q, &q.feat_q)
}

/// Central differences in 64-bit over a random `fraction` of every trainable
/// parameter group of the full pretraining loss on `batch` segments.
pub fn gradients(cfg: &ModelConfig, batch: usize, fraction: f64, epsilon: f64, seed: u64) -> Result<(CheckOutcome, GradCheckReport)> {
    let corpus = tiny_corpus(cfg, batch.max(2), seed)?;
    let mut model = Model::<f64>::new(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // s = 0 would hide errors in the weighting
    let sid = model.loss_s_id();
    for v in model.params.get_mut(sid).value.iter_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    // Tokens and zero-initialized vectors are redrawn at unit scale so that
    // no group sits at a point where its gradient is vanishingly small.
    let unit = Normal::new(0.0, 1.0).unwrap();
    let small = Normal::new(0.0, 0.1).unwrap();
    for p in model.params.iter_mut().filter(|p| p.trainable && p.name != "loss.s") {
        let token = p.name == "label_embed" || p.name.starts_with("cls.") || p.name == "dec.mask_token";
        if token {
            p.value.iter_mut().for_each(|v| *v = unit.sample(&mut rng));
        } else if p.shape.len() == 1 {
            p.value.iter_mut().for_each(|v| *v += small.sample(&mut rng));
        }
    }
    let segs: Vec<_> = corpus.segments.iter().take(batch).collect();
    let masks = segs
        .iter()
        .map(|_| sample_mask(cfg.n_patches, cfg.mask_ratio, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let loss = |s: &ParamStore<f64>| {
        batch_objective(&model, s, &segs, &masks, 8, false)
            .map(|o| o.loss)
            .unwrap_or(f64::NAN)
    };
    let grad = |s: &ParamStore<f64>| {
        batch_objective(&model, s, &segs, &masks, 8, true)
            .ok()
            .and_then(|o| o.grads)
            .unwrap_or_else(|| Grads::zeros_like(s))
    };
    let report = check_gradients(&model.params, loss, grad, epsilon, fraction, seed);
    let worst = report
        .groups
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .map(|g| g.name.clone())
        .unwrap_or_default();
    let passed = report.max_rel_error < 1e-4 && report.frozen_grads_zero;
    let detail = format!(
        "{} groups, max rel err {:.2e} ({worst}), frozen grads zero: {}",
        report.groups.iter().filter(|g| g.trainable).count(),
        report.max_rel_error,
        report.frozen_grads_zero
    );
    Ok((CheckOutcome::new("gradients", passed, detail), report))
}

/// Labels are invariant to positive rescaling of the input.
pub fn quantizer_scale_invariance(n: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut agree = 0;
    for i in 0..n {
        let spec = if i % 2 == 0 {
            QuantizerSpec::signal(seed + i as u64)
        } else {
            QuantizerSpec::feature(seed + i as u64)
        };
        let q = Quantizer::build(spec)?;
        let x: Vec<f64> = (0..spec.d_in).map(|_| normal.sample(&mut rng)).collect();
        let c = 10f64.powf(rng.gen_range(-3.0..3.0));
        let y: Vec<f64> = x.iter().map(|v| v * c).collect();
        agree += (q.quantize(&x)? == q.quantize(&y)?) as usize;
    }
    Ok(CheckOutcome::new(
        "quantizer_scale_invariance",
        agree == n,
        format!("{agree}/{n} agree"),
    ))
}

/// Quantizer matrices are byte-identical after `steps` training steps.
pub fn quantizer_frozen(cfg: &ModelConfig, steps: usize, seed: u64) -> Result<CheckOutcome> {
    let corpus = tiny_corpus(cfg, 4, seed)?;
    let tc = TrainConfig {
        batch_size: 4,
        steps,
        seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg.clone(), tc, corpus)?;
    let before = trainer.model.clone();
    trainer.run_until(steps, |_, _| Ok(()))?;
    let same = frozen_identical(&before, &trainer.model);
    Ok(CheckOutcome::new(
        "quantizer_frozen",
        same,
        format!("after {steps} steps: {}", if same { "identical" } else { "changed" }),
    ))
}

/// Quantizer structs and their mirrored frozen parameters agree bit for bit.
pub fn frozen_identical(a: &Model<f32>, b: &Model<f32>) -> bool {
    let params_same = a
        .params
        .iter()
        .filter(|p| p.name.starts_with("sig_q.") || p.name.starts_with("feat_q."))
        .all(|p| {
            b.params
                .by_name(&p.name)
                .is_some_and(|q| p.value.iter().zip(&q.value).all(|(x, y)| x.to_bits() == y.to_bits()))
        });
    params_same && a.sig_q == b.sig_q && a.feat_q == b.feat_q
}

fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Rank AUC against the pair-count definition, ties included.
pub fn auc_oracle(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.gen_range(2..60);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let levels = rng.gen_range(1..8);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 * 0.25).collect();
        worst = worst.max((auc(&scores, &labels)? - pair_count_auc(&scores, &labels)).abs());
    }
    Ok(CheckOutcome::new("auc_oracle", worst <= 1e-12, format!("max deviation {worst:.1e}")))
}

/// Changing predictions at visible patches leaves the reconstruction loss unchanged.
pub fn masked_loss_locality(cfg: &ModelConfig, instances: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.patch_len * CHANNELS;
    let mut changed = 0;
    for _ in 0..instances {
        let mask = sample_mask(cfg.n_patches, cfg.mask_ratio, &mut rng)?;
        let mut pred: Vec<Vec<f64>> = (0..cfg.n_patches).map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let target: Vec<Vec<f64>> = (0..cfg.n_patches).map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let valid: Vec<Vec<bool>> = (0..cfg.n_patches).map(|_| (0..d).map(|_| rng.gen_bool(0.8)).collect()).collect();
        let before = loss::reconstruction_loss(&pred, &target, &valid, &mask.masked)?;
        let tape_before = tape_recon(&pred, &target, &valid, &mask.masked);
        for &i in &mask.visible {
            pred[i].iter_mut().for_each(|v| *v = rng.gen_range(-1e3..1e3));
        }
        let after = loss::reconstruction_loss(&pred, &target, &valid, &mask.masked)?;
        let tape_after = tape_recon(&pred, &target, &valid, &mask.masked);
        changed += (before.to_bits() != after.to_bits() || tape_before.to_bits() != tape_after.to_bits()) as usize;
    }
    Ok(CheckOutcome::new(
        "masked_loss_locality",
        changed == 0,
        format!("{instances} instances, {changed} changed"),
    ))
}

/// The weighted squared error exactly as the training tape computes it.
fn tape_recon(pred: &[Vec<f64>], target: &[Vec<f64>], valid: &[Vec<bool>], masked: &[usize]) -> f64 {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let (n, d) = (pred.len(), pred[0].len());
    let p = g.input(pred.concat(), n, d);
    let mut w = vec![0.0; n * d];
    for &i in masked {
        for (k, &v) in valid[i].iter().enumerate() {
            w[i * d + k] = if v { 1.0 } else { 0.0 };
        }
    }
    let v = g.sq_err(p, target.concat(), w);
    g.scalar(v)
}

/// Adam on `s` alone with fixed losses `l` converges to `s_i = ln l_i`.
pub fn uncertainty_stationarity(l: [f64; 3]) -> Result<(CheckOutcome, [f64; 3])> {
    let cfg = ModelConfig::default();
    let mut store = ParamStore::<f64>::new();
    let sid = store.add_zeros("loss.s", &[3]);
    let tc = TrainConfig {
        lr: 0.05,
        lr_min: 1e-4,
        steps: 3000,
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let mut opt = AdamW::new(&store);
    for t in 0..tc.steps {
        let s = store.get(sid).value.clone();
        let gs = loss::total_loss_grad_s(l, [s[0], s[1], s[2]], &cfg);
        let mut g = Grads::zeros_like(&store);
        g.get_mut(sid).copy_from_slice(&gs);
        opt.step(&mut store, &g, crate::pretrain::cosine_lr(t, &tc), &tc);
    }
    let s = store.get(sid).value.clone();
    let s = [s[0], s[1], s[2]];
    let err = (0..3).map(|i| (s[i] - l[i].ln()).abs()).fold(0.0, f64::max);
    Ok((
        CheckOutcome::new(
            "uncertainty_stationarity",
            err <= 0.05,
            format!("s = ({:.4}, {:.4}, {:.4}), max error {err:.4}", s[0], s[1], s[2]),
        ),
        s,
    ))
}

/// Reduced-size battery used by the `selfcheck` command.
pub fn run_quick(seed: u64) -> Result<Vec<CheckOutcome>> {
    let cfg = ModelConfig::default();
    let small = ModelConfig {
        d_model: 16,
        heads: 2,
        enc_layers: 2,
        dec_layers: 1,
        cnn_channels: 4,
        cnn_blocks: 1,
        ..ModelConfig::default()
    };
    Ok(vec![
        isolation(&cfg, 5, seed)?,
        gradients(&small, 2, 0.05, 1e-4, seed)?.0,
        quantizer_scale_invariance(200, seed)?,
        quantizer_frozen(&small, 3, seed)?,
        auc_oracle(200, seed)?,
        masked_loss_locality(&cfg, 100, seed)?,
        uncertainty_stationarity([1.0, 100.0, 1.0])?.0,
    ])
}

