//! Parameterized building blocks on top of the tape.

use std::sync::Arc;

use rand::Rng;

use super::graph::{AttnMask, Graph, Var};
use super::params::{ParamId, ParamStore};
use super::Real;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    /// Xavier-normal weights (`in x out`), zero bias.
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, din: usize, dout: usize, rng: &mut R) -> Self {
        let std = (2.0 / (din + dout) as f64).sqrt();
        Linear {
            w: store.add_normal(&format!("{name}.w"), &[din, dout], std, true, rng),
            b: Some(store.add_zeros(&format!("{name}.b"), &[dout])),
        }
    }

    /// Weights only. Used for attention keys, whose bias cannot change the
    /// softmax and would only carry rounding noise.
    pub fn without_bias<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, din: usize, dout: usize, rng: &mut R) -> Self {
        let std = (2.0 / (din + dout) as f64).sqrt();
        Linear {
            w: store.add_normal(&format!("{name}.w"), &[din, dout], std, true, rng),
            b: None,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        let y = g.matmul(x, w);
        match b {
            Some(b) => g.add_row(y, b),
            None => y,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add_const(&format!("{name}.g"), &[dim], T::one()),
            beta: store.add_zeros(&format!("{name}.b"), &[dim]),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let gm = g.param(self.gamma);
        let bt = g.param(self.beta);
        g.layer_norm(x, gm, bt)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, rng: &mut R) -> Self {
        MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::without_bias(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
        }
    }

    /// Queries from `xq`, keys and values from `xkv`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, xq: Var, xkv: Var, mask: Arc<AttnMask>) -> Var {
        let q = self.q.forward(g, xq);
        let k = self.k.forward(g, xkv);
        let v = self.v.forward(g, xkv);
        let a = g.attention(q, k, v, self.heads, mask);
        self.o.forward(g, a)
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `h + mlp(ln(h))`.
#[derive(Debug, Clone, Copy)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut R,
    ) -> Self {
        TransformerBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            fc1: Linear::new(store, &format!("{name}.mlp1"), dim, dim * mlp_ratio, rng),
            fc2: Linear::new(store, &format!("{name}.mlp2"), dim * mlp_ratio, dim, rng),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, mask: Arc<AttnMask>) -> Var {
        let n = self.ln1.forward(g, x);
        let a = self.attn.forward(g, n, n, mask);
        let h = g.add(x, a);
        let n2 = self.ln2.forward(g, h);
        let f = self.fc1.forward(g, n2);
        let f = g.gelu(f);
        let f = self.fc2.forward(g, f);
        g.add(h, f)
    }
}

/// `y = proj(x) + conv2(gelu(norm(conv1(x))))` with stride 1 and zero
/// "same" padding, applied independently to each `seq_len` run of rows.
/// `proj` is the identity when channel counts agree, else a 1x1 convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvResidualBlock {
    pub conv1: Linear,
    pub norm: LayerNorm,
    pub conv2: Linear,
    pub proj: Option<Linear>,
    pub kernel: usize,
}

impl ConvResidualBlock {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        ConvResidualBlock {
            conv1: Linear::new(store, &format!("{name}.conv1"), kernel * cin, cout, rng),
            norm: LayerNorm::new(store, &format!("{name}.norm"), cout),
            conv2: Linear::new(store, &format!("{name}.conv2"), kernel * cout, cout, rng),
            proj: (cin != cout).then(|| Linear::new(store, &format!("{name}.proj"), cin, cout, rng)),
            kernel,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, seq_len: usize) -> Var {
        let cols = g.im2col(x, seq_len, self.kernel);
        let h = self.conv1.forward(g, cols);
        let h = self.norm.forward(g, h);
        let h = g.gelu(h);
        let cols = g.im2col(h, seq_len, self.kernel);
        let h = self.conv2.forward(g, cols);
        let skip = match &self.proj {
            Some(p) => p.forward(g, x),
            None => x,
        };
        g.add(skip, h)
    }
}

/// Fixed sinusoidal positional table, `n x dim`.
pub fn sinusoidal_table(n: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * dim];
    for pos in 0..n {
        for i in 0..dim / 2 {
            let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / dim as f64);
            out[pos * dim + 2 * i] = (pos as f64 * freq).sin();
            out[pos * dim + 2 * i + 1] = (pos as f64 * freq).cos();
        }
    }
    out
}
