//! Two-class softmax linear probe trained full-batch with Adam.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeHyper {
    pub lr: f64,
    pub epochs: usize,
    /// L2 penalty on the weights (not the biases), added to the gradient.
    pub weight_decay: f64,
    pub init_std: f64,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        ProbeHyper {
            lr: 1e-2,
            epochs: 200,
            weight_decay: 1e-4,
            init_std: 0.01,
        }
    }
}

/// Standardizer plus a `dim x 2` linear map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Row-major `[dim][2]`.
    pub w: Vec<f64>,
    pub b: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFit {
    pub probe: LinearProbe,
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl LinearProbe {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn logits(&self, x: &[f64]) -> [f64; 2] {
        let mut z = self.b;
        for (j, &v) in x.iter().enumerate() {
            let s = (v - self.mean[j]) * self.scale[j];
            z[0] += s * self.w[2 * j];
            z[1] += s * self.w[2 * j + 1];
        }
        z
    }

    /// Logit margin of class 1; monotone in its probability.
    pub fn score(&self, x: &[f64]) -> f64 {
        let z = self.logits(x);
        z[1] - z[0]
    }

    pub fn prob(&self, x: &[f64]) -> f64 {
        1.0 / (1.0 + (-self.score(x)).exp())
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Fits a probe on `x` (rows) with binary labels `y`.
pub fn train_linear_probe(x: &[Vec<f64>], y: &[u8], hyper: &ProbeHyper, seed: u64) -> Result<ProbeFit> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidInput("probe needs matching, non-empty x and y".into()));
    }
    if y.iter().any(|&l| l > 1) {
        return Err(Error::InvalidInput("probe labels must be 0 or 1".into()));
    }
    let n_pos = y.iter().filter(|&&l| l == 1).count();
    if n_pos == 0 || n_pos == y.len() {
        return Err(Error::DegenerateTask);
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("probe rows must be finite and equally long".into()));
    }
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    for r in x {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for r in x {
        for j in 0..d {
            var[j] += (r[j] - mean[j]).powi(2) / n;
        }
    }
    let scale: Vec<f64> = var.iter().map(|v| if v.sqrt() > 1e-8 { 1.0 / v.sqrt() } else { 0.0 }).collect();
    let xs: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().enumerate().map(|(j, v)| (v - mean[j]) * scale[j]).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, hyper.init_std).map_err(|e| Error::InvalidInput(e.to_string()))?;
    // parameters: w (2d) then b (2)
    let mut p: Vec<f64> = (0..2 * d).map(|_| normal.sample(&mut rng)).chain([0.0, 0.0]).collect();
    let mut m = vec![0.0; p.len()];
    let mut v = vec![0.0; p.len()];
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);

    // loss is the mean of softplus(-(2y-1) * margin) over samples
    let loss_and_grad = |p: &[f64], grad: Option<&mut Vec<f64>>| -> f64 {
        let mut loss = 0.0;
        let mut g = grad;
        if let Some(g) = g.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        for (r, &label) in xs.iter().zip(y) {
            let mut z0 = p[2 * d];
            let mut z1 = p[2 * d + 1];
            for (j, &s) in r.iter().enumerate() {
                z0 += s * p[2 * j];
                z1 += s * p[2 * j + 1];
            }
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let margin = z1 - z0;
            loss += softplus(-sign * margin) / n;
            if let Some(g) = g.as_deref_mut() {
                // d/dmargin softplus(-s m) = -s * sigmoid(-s m)
                let dm = -sign / (1.0 + (sign * margin).exp()) / n;
                for (j, &s) in r.iter().enumerate() {
                    g[2 * j] -= dm * s;
                    g[2 * j + 1] += dm * s;
                }
                g[2 * d] -= dm;
                g[2 * d + 1] += dm;
            }
        }
        loss
    };

    let initial_loss = loss_and_grad(&p, None);
    let mut g = vec![0.0; p.len()];
    for t in 1..=hyper.epochs {
        loss_and_grad(&p, Some(&mut g));
        for k in 0..2 * d {
            g[k] += hyper.weight_decay * p[k];
        }
        let (c1, c2) = (1.0 - b1.powi(t as i32), 1.0 - b2.powi(t as i32));
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            p[k] -= hyper.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
        }
    }
    let final_loss = loss_and_grad(&p, None);
    if !final_loss.is_finite() {
        return Err(Error::InvalidInput("probe training diverged".into()));
    }
    Ok(ProbeFit {
        probe: LinearProbe {
            mean,
            scale,
            w: p[..2 * d].to_vec(),
            b: [p[2 * d], p[2 * d + 1]],
        },
        initial_loss,
        final_loss,
    })
}
