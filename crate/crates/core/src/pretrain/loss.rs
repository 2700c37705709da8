//! Reference (non-differentiable) forms of the pretext losses. The training
//! objective builds the same quantities on the tape; these are the plain
//! definitions used for reporting and for cross-checking.

use crate::config::ModelConfig;
use crate::model::active_terms;
use crate::{Error, Result};

/// MSE over the valid samples of masked patches. Masked patches without valid
/// samples contribute nothing; if nothing contributes the loss is 0.
pub fn reconstruction_loss(pred: &[Vec<f64>], target: &[Vec<f64>], valid: &[Vec<bool>], masked: &[usize]) -> Result<f64> {
    if masked.is_empty() {
        return Err(Error::InvalidInput("empty masked set".into()));
    }
    let mut sse = 0.0;
    let mut count = 0usize;
    for &i in masked {
        for ((p, t), &v) in pred[i].iter().zip(&target[i]).zip(&valid[i]) {
            if v {
                sse += (p - t) * (p - t);
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sse / count as f64 })
}

/// Mean over dimensions and batch of the squared error.
pub fn metadata_loss(pred: &[[f64; 3]], target: &[[f64; 3]]) -> f64 {
    let n = pred.len().max(1) as f64 * 3.0;
    pred.iter()
        .zip(target)
        .flat_map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)))
        .sum::<f64>()
        / n
}

fn log_softmax_at(row: &[f64], k: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    row[k] - lse
}

/// Mean cross-entropy over rows.
pub fn feature_loss(logits: &[Vec<f64>], targets: &[usize]) -> f64 {
    let n = logits.len().max(1) as f64;
    -logits.iter().zip(targets).map(|(r, &k)| log_softmax_at(r, k)).sum::<f64>() / n
}

/// Per-term multipliers `dL/dL_i` for losses `(r, v, f)`.
pub fn term_weights(s: [f64; 3], cfg: &ModelConfig) -> [f64; 3] {
    let active = active_terms(cfg);
    let mut w = [0.0; 3];
    for &i in &active {
        w[i] = if active.len() > 1 && cfg.use_uncertainty_weighting {
            (-s[i]).exp()
        } else {
            1.0
        };
    }
    w
}

/// `sum_i exp(-s_i) L_i + s_i` over the active terms; the plain sum without
/// uncertainty weighting; the single term when only one is active.
pub fn total_loss(l: [f64; 3], s: [f64; 3], cfg: &ModelConfig) -> f64 {
    let active = active_terms(cfg);
    let w = term_weights(s, cfg);
    let weighted = active.len() > 1 && cfg.use_uncertainty_weighting;
    active
        .iter()
        .map(|&i| w[i] * l[i] + if weighted { s[i] } else { 0.0 })
        .sum()
}

/// `dL/ds_i = 1 - exp(-s_i) L_i` for weighted active terms, else 0.
pub fn total_loss_grad_s(l: [f64; 3], s: [f64; 3], cfg: &ModelConfig) -> [f64; 3] {
    let active = active_terms(cfg);
    let mut g = [0.0; 3];
    if active.len() > 1 && cfg.use_uncertainty_weighting {
        for &i in &active {
            g[i] = 1.0 - (-s[i]).exp() * l[i];
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recon_ignores_visible_and_invalid() {
        let target = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let pred = vec![vec![100.0, -5.0], vec![3.5, 99.0]];
        let valid = vec![vec![true, true], vec![true, false]];
        assert_eq!(reconstruction_loss(&pred, &target, &valid, &[1]).unwrap(), 0.25);
        assert!(reconstruction_loss(&pred, &target, &valid, &[]).is_err());
    }

    #[test]
    fn analytic_values() {
        assert_eq!(metadata_loss(&[[1.0, 1.0, 1.0]], &[[0.0; 3]]), 1.0);
        let uniform = vec![vec![0.3; 64]];
        assert!((feature_loss(&uniform, &[5]) - 64f64.ln()).abs() < 1e-12);
        let cfg = ModelConfig::default();
        assert_eq!(total_loss([1.0, 2.0, 3.0], [0.0; 3], &cfg), 6.0);
        let g = total_loss_grad_s([1.0, 100.0, 1.0], [0.0, 100f64.ln(), 0.0], &cfg);
        assert!(g.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn ablation_forms() {
        let l = [1.0, 2.0, 3.0];
        let s = [0.5, 0.5, 0.5];
        let no_mv = ModelConfig {
            use_multiview: false,
            ..ModelConfig::default()
        };
        assert_eq!(total_loss(l, s, &no_mv), 1.0);
        let no_uw = ModelConfig {
            use_uncertainty_weighting: false,
            ..ModelConfig::default()
        };
        assert_eq!(total_loss(l, s, &no_uw), 6.0);
        let no_mae = ModelConfig {
            use_bestrq_mae: false,
            ..ModelConfig::default()
        };
        let want = (-0.5f64).exp() * 5.0 + 1.0;
        assert!((total_loss(l, s, &no_mae) - want).abs() < 1e-12);
    }
}
