//! Reverse-mode differentiation tape over row-major matrices.
//!
//! Ops are coarse (matmul, fused multi-head attention, layer norm, im2col) so
//! that per-node bookkeeping is negligible next to the arithmetic. A graph
//! borrows its [`ParamStore`]; parameter leaves read values in place and
//! [`Graph::backward`] accumulates into a [`Grads`] aligned with that store.

use std::sync::Arc;

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::{gemm, MatRef, Real};
use crate::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Boolean attention mask: `allows(i, j)` means query `i` may attend to key `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnMask {
    nq: usize,
    nk: usize,
    allow: Vec<bool>,
}

impl AttnMask {
    pub fn new(nq: usize, nk: usize, allow: Vec<bool>) -> Result<Self> {
        if allow.len() != nq * nk {
            return Err(Error::InvalidInput(format!(
                "mask has {} entries, expected {}",
                allow.len(),
                nq * nk
            )));
        }
        if let Some(row) = (0..nq).find(|&i| !allow[i * nk..(i + 1) * nk].iter().any(|&b| b)) {
            return Err(Error::EmptyMaskRow(row));
        }
        Ok(AttnMask { nq, nk, allow })
    }

    pub fn full(nq: usize, nk: usize) -> Self {
        AttnMask {
            nq,
            nk,
            allow: vec![true; nq * nk],
        }
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.nk + j]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nq, self.nk)
    }

    pub fn count_allowed(&self) -> usize {
        self.allow.iter().filter(|&&b| b).count()
    }

    pub fn is_symmetric(&self) -> bool {
        self.nq == self.nk && (0..self.nq).all(|i| (0..self.nk).all(|j| self.allows(i, j) == self.allows(j, i)))
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Gelu {
        a: Var,
        /// sigmoid(2u) per element, reused by the backward pass.
        sig: Vec<T>,
    },
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: Arc<AttnMask>,
        probs: Vec<T>,
    },
    Im2Col {
        x: Var,
        seq_len: usize,
        kernel: usize,
    },
    Reshape(Var),
    Gather(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Var, Var),
    SqErr {
        pred: Var,
        target: Vec<T>,
        weight: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b) | Op::AddRow(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Sigmoid(a) | Op::Reshape(a) | Op::Gather(a, _) => vec![*a],
            Op::Gelu { a, .. } => vec![*a],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::Im2Col { x, .. } => vec![*x],
            Op::ConcatRows(parts) => parts.clone(),
            Op::SqErr { pred, .. } => vec![*pred],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node<T> {
    rows: usize,
    cols: usize,
    /// Empty for parameter leaves, which read from the store.
    value: Vec<T>,
    op: Op<T>,
    /// Depends on at least one trainable parameter.
    needs_grad: bool,
}

pub struct Graph<'p, T: Real> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.044_715;

// tanh-approximation GELU written as x * sigmoid(2u): same function, one exp
// instead of a tanh.
fn gelu_sig<T: Real>(x: T) -> T {
    let s = T::c((2.0 / std::f64::consts::PI).sqrt());
    let u = s * (x + T::c(GELU_C) * x * x * x);
    T::one() / (T::one() + (-(u + u)).exp())
}

fn gelu_grad<T: Real>(x: T, sg: T) -> T {
    let s = T::c((2.0 / std::f64::consts::PI).sqrt());
    let du = s * (T::one() + T::c(3.0 * GELU_C) * x * x);
    sg + x * sg * (T::one() - sg) * (du + du)
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param(id) => self.store.get(*id).trainable,
            op => op.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[T] {
        let n = &self.nodes[v.0];
        match n.op {
            Op::Param(id) => &self.store.get(id).value,
            _ => &n.value,
        }
    }

    fn mat(&self, v: Var) -> MatRef<'_, T> {
        let (r, c) = self.shape(v);
        MatRef::new(self.value(v), r, c)
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> T {
        assert_eq!(self.shape(v), (1, 1));
        self.value(v)[0]
    }

    pub fn input(&mut self, value: Vec<T>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols);
        self.push(rows, cols, value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let (r, c) = self.store.get(id).matrix_dims();
        self.push(r, c, Vec::new(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (kb, n) = self.shape(b);
        assert_eq!(k, kb, "matmul inner dims {k} vs {kb}");
        let mut out = vec![T::zero(); m * n];
        gemm(self.mat(a), false, self.mat(b), false, &mut out, false);
        self.push(m, n, out, Op::MatMul(a, b))
    }

    /// Adds a 1 x cols row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row shape");
        let bias = self.value(row);
        let mut out = self.value(a).to_vec();
        for chunk in out.chunks_exact_mut(c) {
            for (x, b) in chunk.iter_mut().zip(bias) {
                *x += *b;
            }
        }
        self.push(r, c, out, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape");
        let (r, c) = self.shape(a);
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| *x + *y)
            .collect();
        self.push(r, c, out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape");
        let (r, c) = self.shape(a);
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| *x * *y)
            .collect();
        self.push(r, c, out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| *x * s).collect();
        self.push(r, c, out, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let sig: Vec<T> = self.value(a).iter().map(|&x| gelu_sig(x)).collect();
        let out = self.value(a).iter().zip(&sig).map(|(&x, &s)| x * s).collect();
        self.push(r, c, out, Op::Gelu { a, sig })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(r, c, out, Op::Sigmoid(a))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (1 x cols).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gamma), (1, c));
        assert_eq!(self.shape(beta), (1, c));
        let xs = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let n = T::c(c as f64);
        let mut xhat = vec![T::zero(); r * c];
        let mut rstd = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + T::c(LN_EPS)).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Multi-head scaled dot-product attention. Disallowed keys are excluded
    /// from the softmax entirely.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: Arc<AttnMask>) -> Var {
        let (nq, d) = self.shape(q);
        let (nk, dk) = self.shape(k);
        assert_eq!(d, dk, "attention q/k width");
        assert_eq!(self.shape(v), (nk, d), "attention v shape");
        assert_eq!(mask.dims(), (nq, nk), "attention mask dims");
        assert!(heads > 0 && d % heads == 0, "width not divisible by heads");
        let dh = d / heads;
        let scale = T::c(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![T::zero(); heads * nq * nk];
        let mut out = vec![T::zero(); nq * d];
        let mut scores = vec![T::zero(); nk];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..nq {
                let qi = &qv[i * d + off..i * d + off + dh];
                let mut max = T::neg_infinity();
                for j in 0..nk {
                    if mask.allows(i, j) {
                        let kj = &kv[j * d + off..j * d + off + dh];
                        let s = qi.iter().zip(kj).map(|(a, b)| *a * *b).sum::<T>() * scale;
                        scores[j] = s;
                        if s > max {
                            max = s;
                        }
                    }
                }
                let p = &mut probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                let mut total = T::zero();
                for j in 0..nk {
                    if mask.allows(i, j) {
                        let e = (scores[j] - max).exp();
                        p[j] = e;
                        total += e;
                    }
                }
                for j in 0..nk {
                    if mask.allows(i, j) {
                        p[j] = p[j] / total;
                    }
                }
                let oi = &mut out[i * d + off..i * d + off + dh];
                for j in 0..nk {
                    if mask.allows(i, j) {
                        let vj = &vv[j * d + off..j * d + off + dh];
                        for (o, x) in oi.iter_mut().zip(vj) {
                            *o += p[j] * *x;
                        }
                    }
                }
            }
        }
        self.push(
            nq,
            d,
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                mask,
                probs,
            },
        )
    }

    /// Attention probabilities of an attention node, laid out `[head][query][key]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Unfolds `x` ((n * seq_len) x cin, `n` independent sequences) into
    /// (n * seq_len) x (kernel * cin) windows with zero "same" padding inside
    /// each sequence. Column `k * cin + c` holds `x[t + k - kernel / 2][c]`.
    pub fn im2col(&mut self, x: Var, seq_len: usize, kernel: usize) -> Var {
        let (rows, cin) = self.shape(x);
        assert!(seq_len > 0 && rows % seq_len == 0, "im2col rows not a multiple of seq_len");
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let pad = kernel / 2;
        let xs = self.value(x);
        let width = kernel * cin;
        let mut out = vec![T::zero(); rows * width];
        for s in 0..rows / seq_len {
            let base = s * seq_len;
            for t in 0..seq_len {
                let orow = &mut out[(base + t) * width..(base + t + 1) * width];
                for k in 0..kernel {
                    let src = t as isize + k as isize - pad as isize;
                    if src < 0 || src >= seq_len as isize {
                        continue;
                    }
                    let src = base + src as usize;
                    orow[k * cin..(k + 1) * cin].copy_from_slice(&xs[src * cin..(src + 1) * cin]);
                }
            }
        }
        self.push(rows, width, out, Op::Im2Col { x, seq_len, kernel })
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(r * c, rows * cols, "reshape size");
        let out = self.value(a).to_vec();
        self.push(rows, cols, out, Op::Reshape(a))
    }

    /// Row gather; indices may repeat (gradients accumulate).
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Var {
        let (r, c) = self.shape(a);
        let src = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            assert!(i < r, "gather index {i} out of range {r}");
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        self.push(idx.len(), c, out, Op::Gather(a, idx.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.shape(parts[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = self.shape(p);
            assert_eq!(pc, c, "concat_rows widths");
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        self.push(rows, c, out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (r, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!(r, rb, "concat_cols rows");
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            out.extend_from_slice(&av[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&bv[i * cb..(i + 1) * cb]);
        }
        self.push(r, ca + cb, out, Op::ConcatCols(a, b))
    }

    /// `sum(weight * (pred - target)^2)` as a 1x1 node.
    pub fn sq_err(&mut self, pred: Var, target: Vec<T>, weight: Vec<T>) -> Var {
        let p = self.value(pred);
        assert_eq!(p.len(), target.len());
        assert_eq!(p.len(), weight.len());
        let s = p
            .iter()
            .zip(&target)
            .zip(&weight)
            .map(|((a, b), w)| *w * (*a - *b) * (*a - *b))
            .sum();
        self.push(1, 1, vec![s], Op::SqErr { pred, target, weight })
    }

    /// Summed softmax cross-entropy over rows as a 1x1 node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let (r, c) = self.shape(logits);
        assert_eq!(targets.len(), r);
        let l = self.value(logits);
        let mut probs = vec![T::zero(); r * c];
        let mut total = T::zero();
        for i in 0..r {
            let row = &l[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &x) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (x - max).exp();
                z += *p;
            }
            for p in &mut probs[i * c..(i + 1) * c] {
                *p = *p / z;
            }
            assert!(targets[i] < c, "target out of range");
            total += max + z.ln() - row[targets[i]];
        }
        self.push(
            1,
            1,
            vec![total],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Back-propagates from the 1x1 node `root`, accumulating parameter
    /// gradients into `grads`. Frozen parameters receive nothing.
    pub fn backward(&self, root: Var, grads: &mut Grads<T>) {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let mut g: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        g[root.0] = Some(vec![T::one()]);

        fn slot<'a, T: Real>(g: &'a mut [Option<Vec<T>>], v: Var, len: usize) -> &'a mut Vec<T> {
            g[v.0].get_or_insert_with(|| vec![T::zero(); len])
        }

        for idx in (0..=root.0).rev() {
            let Some(dout) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            let (rows, cols) = (node.rows, node.cols);
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    if self.store.get(*id).trainable {
                        for (a, b) in grads.get_mut(*id).iter_mut().zip(&dout) {
                            *a += *b;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let dmat = MatRef::new(&dout, rows, cols);
                    let (ar, ac) = self.shape(*a);
                    let (br, bc) = self.shape(*b);
                    if self.nodes[a.0].needs_grad {
                        let da = slot(&mut g, *a, ar * ac);
                        gemm(dmat, false, self.mat(*b), true, da, true);
                    }
                    if self.nodes[b.0].needs_grad {
                        let db = slot(&mut g, *b, br * bc);
                        gemm(self.mat(*a), true, dmat, false, db, true);
                    }
                }
                Op::AddRow(a, row) => {
                    let da = slot(&mut g, *a, rows * cols);
                    for (x, y) in da.iter_mut().zip(&dout) {
                        *x += *y;
                    }
                    let dr = slot(&mut g, *row, cols);
                    for chunk in dout.chunks_exact(cols) {
                        for (x, y) in dr.iter_mut().zip(chunk) {
                            *x += *y;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        let d = slot(&mut g, *v, rows * cols);
                        for (x, y) in d.iter_mut().zip(&dout) {
                            *x += *y;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = slot(&mut g, *a, rows * cols);
                    for ((x, y), w) in da.iter_mut().zip(&dout).zip(bv) {
                        *x += *y * *w;
                    }
                    let db = slot(&mut g, *b, rows * cols);
                    for ((x, y), w) in db.iter_mut().zip(&dout).zip(av) {
                        *x += *y * *w;
                    }
                }
                Op::Scale(a, s) => {
                    let da = slot(&mut g, *a, rows * cols);
                    for (x, y) in da.iter_mut().zip(&dout) {
                        *x += *y * *s;
                    }
                }
                Op::Gelu { a, sig } => {
                    let av = self.value(*a);
                    let da = slot(&mut g, *a, rows * cols);
                    for (((x, y), v), sg) in da.iter_mut().zip(&dout).zip(av).zip(sig) {
                        *x += *y * gelu_grad(*v, *sg);
                    }
                }
                Op::Sigmoid(a) => {
                    let yv = &node.value;
                    let da = slot(&mut g, *a, rows * cols);
                    for ((x, d), y) in da.iter_mut().zip(&dout).zip(yv) {
                        *x += *d * *y * (T::one() - *y);
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gamma);
                    let n = T::c(cols as f64);
                    {
                        let dg = slot(&mut g, *gamma, cols);
                        for i in 0..rows {
                            for j in 0..cols {
                                dg[j] += dout[i * cols + j] * xhat[i * cols + j];
                            }
                        }
                    }
                    {
                        let db = slot(&mut g, *beta, cols);
                        for i in 0..rows {
                            for j in 0..cols {
                                db[j] += dout[i * cols + j];
                            }
                        }
                    }
                    let dx = slot(&mut g, *x, rows * cols);
                    let mut dxhat = vec![T::zero(); cols];
                    for i in 0..rows {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..cols {
                            dxhat[j] = dout[i * cols + j] * gv[j];
                            m1 += dxhat[j];
                            m2 += dxhat[j] * xhat[i * cols + j];
                        }
                        m1 = m1 / n;
                        m2 = m2 / n;
                        for j in 0..cols {
                            dx[i * cols + j] += rstd[i] * (dxhat[j] - m1 - xhat[i * cols + j] * m2);
                        }
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    mask,
                    probs,
                } => {
                    let (nq, d) = (rows, cols);
                    let nk = self.shape(*k).0;
                    let dh = d / heads;
                    let scale = T::c(1.0 / (dh as f64).sqrt());
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let mut dq = vec![T::zero(); nq * d];
                    let mut dk = vec![T::zero(); nk * d];
                    let mut dv = vec![T::zero(); nk * d];
                    let mut dp = vec![T::zero(); nk];
                    for h in 0..*heads {
                        let off = h * dh;
                        for i in 0..nq {
                            let p = &probs[(h * nq + i) * nk..(h * nq + i + 1) * nk];
                            let doi = &dout[i * d + off..i * d + off + dh];
                            let mut dot = T::zero();
                            for j in 0..nk {
                                if !mask.allows(i, j) {
                                    continue;
                                }
                                let vj = &vv[j * d + off..j * d + off + dh];
                                dp[j] = doi.iter().zip(vj).map(|(a, b)| *a * *b).sum();
                                dot += p[j] * dp[j];
                                for (x, y) in dv[j * d + off..j * d + off + dh].iter_mut().zip(doi) {
                                    *x += p[j] * *y;
                                }
                            }
                            for j in 0..nk {
                                if !mask.allows(i, j) {
                                    continue;
                                }
                                let ds = p[j] * (dp[j] - dot) * scale;
                                for t in 0..dh {
                                    dq[i * d + off + t] += ds * kv[j * d + off + t];
                                    dk[j * d + off + t] += ds * qv[i * d + off + t];
                                }
                            }
                        }
                    }
                    for (var, delta, len) in [(q, dq, nq * d), (k, dk, nk * d), (v, dv, nk * d)] {
                        let s = slot(&mut g, *var, len);
                        for (x, y) in s.iter_mut().zip(&delta) {
                            *x += *y;
                        }
                    }
                }
                Op::Im2Col { x, seq_len, kernel } => {
                    if !self.nodes[x.0].needs_grad {
                        continue;
                    }
                    let cin = self.shape(*x).1;
                    let pad = kernel / 2;
                    let dx = slot(&mut g, *x, rows * cin);
                    for s in 0..rows / seq_len {
                        let base = s * seq_len;
                        for t in 0..*seq_len {
                            let drow = &dout[(base + t) * cols..(base + t + 1) * cols];
                            for k in 0..*kernel {
                                let src = t as isize + k as isize - pad as isize;
                                if src < 0 || src >= *seq_len as isize {
                                    continue;
                                }
                                let src = base + src as usize;
                                let d = &mut dx[src * cin..(src + 1) * cin];
                                for (a, b) in d.iter_mut().zip(&drow[k * cin..(k + 1) * cin]) {
                                    *a += *b;
                                }
                            }
                        }
                    }
                }
                Op::Reshape(a) => {
                    let da = slot(&mut g, *a, rows * cols);
                    for (x, y) in da.iter_mut().zip(&dout) {
                        *x += *y;
                    }
                }
                Op::Gather(a, idx) => {
                    let (ar, ac) = self.shape(*a);
                    let da = slot(&mut g, *a, ar * ac);
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..ac {
                            da[i * ac + c] += dout[r * ac + c];
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.shape(*p).0 * cols;
                        let dp = slot(&mut g, *p, len);
                        for (x, y) in dp.iter_mut().zip(&dout[off..off + len]) {
                            *x += *y;
                        }
                        off += len;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.shape(*a).1;
                    let cb = cols - ca;
                    {
                        let da = slot(&mut g, *a, rows * ca);
                        for i in 0..rows {
                            for j in 0..ca {
                                da[i * ca + j] += dout[i * cols + j];
                            }
                        }
                    }
                    let db = slot(&mut g, *b, rows * cb);
                    for i in 0..rows {
                        for j in 0..cb {
                            db[i * cb + j] += dout[i * cols + ca + j];
                        }
                    }
                }
                Op::SqErr { pred, target, weight } => {
                    let pv = self.value(*pred);
                    let s = dout[0];
                    let len = pv.len();
                    let dp = slot(&mut g, *pred, len);
                    for i in 0..len {
                        dp[i] += s * T::c(2.0) * weight[i] * (pv[i] - target[i]);
                    }
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let (r, c) = self.shape(*logits);
                    let s = dout[0];
                    let dl = slot(&mut g, *logits, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            let onehot = if targets[i] == j { T::one() } else { T::zero() };
                            dl[i * c + j] += s * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;

    #[test]
    fn mask_rejects_empty_rows() {
        assert!(matches!(
            AttnMask::new(2, 2, vec![true, false, false, false]),
            Err(Error::EmptyMaskRow(1))
        ));
    }

    #[test]
    fn self_only_mask_returns_own_value_row() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let n = 4;
        let d = 6;
        let data: Vec<f64> = (0..n * d).map(|i| (i as f64 * 0.37).sin()).collect();
        let q = g.input(data.clone(), n, d);
        let v = g.input(data.iter().map(|x| x * 3.0 + 1.0).collect(), n, d);
        let allow = (0..n * n).map(|i| i / n == i % n).collect();
        let mask = Arc::new(AttnMask::new(n, n, allow).unwrap());
        let out = g.attention(q, q, v, 2, mask);
        assert_eq!(g.value(out), g.value(v));
    }

    #[test]
    fn equal_keys_give_mean_of_values() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let q = g.input(vec![0.3, -1.0, 2.0, 0.5], 2, 2);
        let k = g.input(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0], 3, 2);
        let v = g.input(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, 2);
        let out = g.attention(q, k, v, 1, Arc::new(AttnMask::full(2, 3)));
        for row in g.value(out).chunks(2) {
            assert!((row[0] - 3.0).abs() < 1e-12);
            assert!((row[1] - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_distributions_over_allowed_keys() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let n = 5;
        let x: Vec<f64> = (0..n * 4).map(|i| (i as f64 * 1.3).cos()).collect();
        let q = g.input(x, n, 4);
        let allow: Vec<bool> = (0..n * n).map(|i| (i * 7) % 3 != 0 || i / n == i % n).collect();
        let mask = Arc::new(AttnMask::new(n, n, allow).unwrap());
        let out = g.attention(q, q, q, 2, mask.clone());
        let probs = g.attention_probs(out).unwrap();
        for h in 0..2 {
            for i in 0..n {
                let row = &probs[(h * n + i) * n..(h * n + i + 1) * n];
                let total: f64 = row.iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
                for j in 0..n {
                    if !mask.allows(i, j) {
                        assert_eq!(row[j], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn uniform_cross_entropy_is_ln_classes() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let logits = g.input(vec![0.7; 64], 1, 64);
        let ce = g.cross_entropy(logits, &[5]);
        assert!((g.scalar(ce) - 64f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn im2col_same_padding_keeps_length() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.input((0..8).map(|v| v as f64).collect(), 8, 1);
        let cols = g.im2col(x, 4, 3);
        assert_eq!(g.shape(cols), (8, 3));
        // sequence boundaries are zero padded independently
        assert_eq!(&g.value(cols)[9..12], &[2.0, 3.0, 0.0]);
        assert_eq!(&g.value(cols)[12..15], &[0.0, 4.0, 5.0]);
    }
}
