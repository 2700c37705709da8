//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Grads, ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub trainable: bool,
    /// Largest |analytic gradient| over the whole group.
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub max_rel_error: f64,
    /// True when every frozen parameter received an exactly-zero gradient.
    pub frozen_grads_zero: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient from `grad` against central differences of
/// `loss` on a random `fraction` of the entries of each trainable parameter
/// (at least one per parameter).
pub fn check_gradients<L, G>(store: &ParamStore<f64>, loss: L, grad: G, epsilon: f64, fraction: f64, seed: u64) -> GradCheckReport
where
    L: Fn(&ParamStore<f64>) -> f64,
    G: Fn(&ParamStore<f64>) -> Grads<f64>,
{
    let analytic = grad(store);
    let mut work = store.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::new();
    let mut frozen_grads_zero = true;

    for (i, p) in store.iter().enumerate() {
        let id = ParamId(i);
        let grad = analytic.get(id);
        let max_abs_grad = grad.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if !p.trainable {
            frozen_grads_zero &= grad.iter().all(|&x| x == 0.0);
            groups.push(GroupReport {
                name: p.name.clone(),
                checked: 0,
                max_rel_error: 0.0,
                trainable: false,
                max_abs_grad,
            });
            continue;
        }
        let n = p.numel();
        let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
        let mut worst = 0.0f64;
        for j in sample(&mut rng, n, k).into_iter() {
            let orig = p.value[j];
            work.get_mut(id).value[j] = orig + epsilon;
            let lp = loss(&work);
            work.get_mut(id).value[j] = orig - epsilon;
            let lm = loss(&work);
            work.get_mut(id).value[j] = orig;
            let numeric = (lp - lm) / (2.0 * epsilon);
            worst = worst.max(relative_error(grad[j], numeric));
        }
        groups.push(GroupReport {
            name: p.name.clone(),
            checked: k,
            max_rel_error: worst,
            trainable: true,
            max_abs_grad,
        });
    }
    let max_rel_error = groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    GradCheckReport {
        groups,
        max_rel_error,
        frozen_grads_zero,
    }
}
