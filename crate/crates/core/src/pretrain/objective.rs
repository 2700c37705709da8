//! The full pretraining objective on the tape, with deterministic data-parallel
//! gradient reduction.
//!
//! Each sample is its own graph. Sample `b` contributes
//! `w_r SSE_r(b)/n_r + w_v SSE_v(b)/n_v + w_f CE(b)/n_f`, where the `n_*` are
//! batch-wide element counts, so the summed gradient is exactly the gradient
//! of the batch loss. The `s` gradients are added analytically afterwards.

use rayon::prelude::*;

use crate::model::{Model, SampleInput};
use crate::nn::{Graph, Grads, ParamStore, Real, Var};
use crate::pretrain::data::PreparedSegment;
use crate::pretrain::loss::{term_weights, total_loss, total_loss_grad_s};
use crate::pretrain::mask::PatchMask;
use crate::signal::denormalize_fhr;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ObjectiveOutput<T> {
    pub loss: f64,
    /// `(L_r, L_v, L_f)`; inactive terms are 0.
    pub terms: [f64; 3],
    pub grads: Option<Grads<T>>,
    /// Masked-patch FHR reconstruction error in bpm (0 without a decoder).
    pub fhr_rmse_bpm: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    sse_r: f64,
    sse_v: f64,
    ce_f: f64,
    fhr_sse: f64,
    fhr_n: usize,
}

impl Sums {
    fn add(&mut self, o: &Sums) {
        self.sse_r += o.sse_r;
        self.sse_v += o.sse_v;
        self.ce_f += o.ce_f;
        self.fhr_sse += o.fhr_sse;
        self.fhr_n += o.fhr_n;
    }
}

fn recon_weights(seg: &PreparedSegment, mask: &PatchMask) -> Vec<bool> {
    let d = seg.grid.patch_dim();
    let mut w = vec![false; seg.grid.n_patches() * d];
    for &i in &mask.masked {
        w[i * d..(i + 1) * d].copy_from_slice(&seg.grid.valid[i]);
    }
    w
}

fn sample_pass<T: Real>(
    model: &Model<T>,
    store: &ParamStore<T>,
    seg: &PreparedSegment,
    mask: &PatchMask,
    coef: [f64; 3],
    grads: Option<&mut Grads<T>>,
) -> Result<Sums> {
    let mut g = Graph::new(store);
    let input = SampleInput {
        values: &seg.values,
        signal_labels: &seg.signal_labels,
    };
    let out = model.forward_pretrain(&mut g, &input, &mask.visible)?;
    let mut sums = Sums::default();
    let mut parts: Vec<(Var, f64)> = Vec::new();

    if let Some(recon) = out.recon {
        let w = recon_weights(seg, mask);
        let target: Vec<T> = seg.grid.patches.iter().flatten().map(|&x| T::c(x)).collect();
        let weight: Vec<T> = w.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
        let p = seg.grid.patch_len;
        let d = seg.grid.patch_dim();
        let pred = g.value(recon);
        for (k, (&pv, &tv)) in pred.iter().zip(&target).enumerate() {
            if w[k] && k % d < p {
                sums.fhr_sse += (pv.f64() - tv.f64()).powi(2);
                sums.fhr_n += 1;
            }
        }
        let v = g.sq_err(recon, target, weight);
        sums.sse_r = g.scalar(v).f64();
        parts.push((v, coef[0]));
    }
    if let Some(meta) = out.meta {
        let v = g.sq_err(meta, seg.meta_z.iter().map(|&x| T::c(x)).collect(), vec![T::one(); 3]);
        sums.sse_v = g.scalar(v).f64();
        parts.push((v, coef[1]));
    }
    if let Some(logits) = out.feat_logits {
        if seg.feature_labels.len() != seg.grid.n_patches() {
            return Err(Error::InvalidInput(format!("segment {} has no feature labels", seg.id)));
        }
        let targets: Vec<usize> = mask.visible.iter().map(|&i| seg.feature_labels[i]).collect();
        let v = g.cross_entropy(logits, &targets);
        sums.ce_f = g.scalar(v).f64();
        parts.push((v, coef[2]));
    }

    if let Some(grads) = grads {
        let mut total: Option<Var> = None;
        for (v, c) in parts {
            let s = g.scale(v, T::c(c));
            total = Some(match total {
                Some(t) => g.add(t, s),
                None => s,
            });
        }
        if let Some(t) = total {
            g.backward(t, grads);
        }
    }
    Ok(sums)
}

/// Batch loss (and optionally gradients) evaluated with `store` as the
/// parameter values. Samples are reduced in fixed chunks of `chunk` in batch
/// order, so the result does not depend on the number of threads.
pub fn batch_objective<T: Real>(
    model: &Model<T>,
    store: &ParamStore<T>,
    batch: &[&PreparedSegment],
    masks: &[PatchMask],
    chunk: usize,
    need_grads: bool,
) -> Result<ObjectiveOutput<T>> {
    if batch.is_empty() || batch.len() != masks.len() {
        return Err(Error::InvalidInput("batch and masks must be non-empty and aligned".into()));
    }
    let cfg = &model.cfg;
    let n_r: usize = batch
        .iter()
        .zip(masks)
        .map(|(s, m)| m.masked.iter().map(|&i| s.grid.valid[i].iter().filter(|&&v| v).count()).sum::<usize>())
        .sum();
    let n_v = 3 * batch.len();
    let n_f: usize = masks.iter().map(|m| m.visible.len()).sum();
    let counts = [n_r, n_v, n_f];

    let sid = model.loss_s_id();
    let sv = &store.get(sid).value;
    let s = [sv[0].f64(), sv[1].f64(), sv[2].f64()];
    let w = term_weights(s, cfg);
    let mut coef = [0.0; 3];
    for i in 0..3 {
        if counts[i] > 0 {
            coef[i] = w[i] / counts[i] as f64;
        }
    }

    let chunk = chunk.max(1);
    let idx: Vec<usize> = (0..batch.len().div_ceil(chunk)).collect();
    let partial: Vec<Result<(Option<Grads<T>>, Sums)>> = idx
        .par_iter()
        .map(|&c| {
            let lo = c * chunk;
            let hi = (lo + chunk).min(batch.len());
            let mut grads = need_grads.then(|| Grads::zeros_like(store));
            let mut sums = Sums::default();
            for b in lo..hi {
                let r = sample_pass(model, store, batch[b], &masks[b], coef, grads.as_mut())?;
                sums.add(&r);
            }
            Ok((grads, sums))
        })
        .collect();

    let mut grads: Option<Grads<T>> = None;
    let mut sums = Sums::default();
    for p in partial {
        let (g, s) = p?;
        sums.add(&s);
        if let Some(g) = g {
            match grads.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => grads = Some(g),
            }
        }
    }
    let div = |x: f64, n: usize| if n > 0 { x / n as f64 } else { 0.0 };
    let terms = [div(sums.sse_r, n_r), div(sums.sse_v, n_v), div(sums.ce_f, n_f)];
    let loss = total_loss(terms, s, cfg);
    if let Some(g) = grads.as_mut() {
        if store.get(sid).trainable {
            let gs = total_loss_grad_s(terms, s, cfg);
            for (dst, v) in g.get_mut(sid).iter_mut().zip(gs) {
                *dst = T::c(v);
            }
        }
    }
    let scale = denormalize_fhr(1.0) - denormalize_fhr(0.0);
    Ok(ObjectiveOutput {
        loss,
        terms,
        grads,
        fhr_rmse_bpm: div(sums.fhr_sse, sums.fhr_n).sqrt() * scale,
    })
}
