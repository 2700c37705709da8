use crate::config::TrainConfig;
use crate::nn::{Grads, ParamStore, Real};

/// Cosine decay from `lr` to `lr_min` over `steps`.
pub fn cosine_lr(step: usize, tc: &TrainConfig) -> f64 {
    let t = (step as f64 / tc.steps.max(1) as f64).min(1.0);
    tc.lr_min + 0.5 * (tc.lr - tc.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Adam with decoupled weight decay on parameters flagged `decay`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl AdamW {
    pub fn new<T: Real>(store: &ParamStore<T>) -> Self {
        AdamW {
            m: store.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: store.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>, lr: f64, tc: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - tc.beta1.powi(self.t as i32);
        let bc2 = 1.0 - tc.beta2.powi(self.t as i32);
        for (i, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let g = grads.get(crate::nn::ParamId(i));
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let wd = if p.decay { tc.weight_decay } else { 0.0 };
            for j in 0..p.value.len() {
                let gj = g[j].f64();
                let mj = tc.beta1 * m[j] as f64 + (1.0 - tc.beta1) * gj;
                let vj = tc.beta2 * v[j] as f64 + (1.0 - tc.beta2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let x = p.value[j].f64();
                let upd = (mj / bc1) / ((vj / bc2).sqrt() + tc.adam_eps);
                p.value[j] = T::c(x - lr * (upd + wd * x));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let tc = TrainConfig::default();
        assert!((cosine_lr(0, &tc) - 1e-3).abs() < 1e-15);
        assert!((cosine_lr(tc.steps, &tc) - 1e-5).abs() < 1e-15);
        assert!(cosine_lr(1000, &tc) < 1e-3 && cosine_lr(1000, &tc) > 1e-5);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add_const("x", &[2], 3.0);
        let tc = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = AdamW::new(&store);
        for _ in 0..3000 {
            let mut g = Grads::zeros_like(&store);
            for (gj, xj) in g.get_mut(id).iter_mut().zip(&store.get(id).value) {
                *gj = 2.0 * xj;
            }
            opt.step(&mut store, &g, 1e-2, &tc);
        }
        assert!(store.get(id).value.iter().all(|x| x.abs() < 1e-2));
    }
}
