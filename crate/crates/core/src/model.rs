//! The multi-view encoder-decoder.
//!
//! Patch tokens are built per patch (CNN over the minute of signal, then a
//! kernel=stride=P convolution and a linear projection), fused with a label
//! embedding of the frozen signal tokenizer's pseudo-label and a sinusoidal
//! position. Task tokens are prepended and the encoder runs under the
//! isolation mask. A per-task cross-attention layer lets the task tokens
//! exchange information afterwards. The decoder restores the full sequence,
//! gates in the label embeddings, lets every position query the enriched
//! reconstruction token and predicts raw patches.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::nn::layers::sinusoidal_table;
use crate::nn::{AttnMask, ConvResidualBlock, Graph, LayerNorm, Linear, MultiHeadAttention, ParamId, ParamStore, Real, TransformerBlock, Var};
use crate::quantizer::{Quantizer, QuantizerSpec};
use crate::signal::CHANNELS;
use crate::{Error, Result};

pub const TASKS: [&str; 3] = ["r", "v", "f"];
const TOKEN_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
struct Decoder {
    embed: Linear,
    mask_token: ParamId,
    gate: Option<Linear>,
    xattn_ln: LayerNorm,
    xattn: MultiHeadAttention,
    blocks: Vec<TransformerBlock>,
    ln: LayerNorm,
    head: Linear,
}

#[derive(Debug, Clone)]
struct Layout {
    cnn: Vec<ConvResidualBlock>,
    patch_conv: Linear,
    patch_proj: Linear,
    label_embed: Option<ParamId>,
    pos: ParamId,
    cls: Vec<ParamId>,
    enc: Vec<TransformerBlock>,
    enc_ln: LayerNorm,
    xattn: Vec<(MultiHeadAttention, LayerNorm)>,
    dec: Option<Decoder>,
    meta_head: Option<(Linear, Linear)>,
    feat_head: Option<Linear>,
    loss_s: ParamId,
}

/// Parameters, frozen quantizers and layout. The quantizer matrices are also
/// stored as frozen parameters (`sig_q.*`, `feat_q.*`) so checkpoints carry them.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
    pub sig_q: Quantizer,
    pub feat_q: Quantizer,
    layout: Layout,
}

/// One normalized segment as the model sees it.
#[derive(Debug, Clone, Copy)]
pub struct SampleInput<'a> {
    /// `L x 2`, normalized.
    pub values: &'a [[f64; CHANNELS]],
    /// One signal pseudo-label per patch, from the full unmasked signal.
    pub signal_labels: &'a [usize],
}

/// Encoder outputs before task-wise cross-attention.
#[derive(Debug, Clone)]
pub struct EncodeVars {
    /// `1 x D` each; order r, v, f (only r without multiview).
    pub cls: Vec<Var>,
    /// `n_vis x D`.
    pub patches: Var,
    pub visible: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PretrainVars {
    pub enc: EncodeVars,
    pub cls_x: Vec<Var>,
    /// `N x (P*C)`.
    pub recon: Option<Var>,
    /// `1 x 3`.
    pub meta: Option<Var>,
    /// `n_vis x V_feat`.
    pub feat_logits: Option<Var>,
}

fn quantizer_specs(cfg: &ModelConfig) -> (QuantizerSpec, QuantizerSpec) {
    (
        QuantizerSpec {
            d_in: cfg.patch_len * CHANNELS,
            d_lat: cfg.sig_latent,
            codebook_size: cfg.sig_codebook,
            seed: cfg.sig_q_seed,
        },
        QuantizerSpec {
            d_in: crate::features::N_FEATURES,
            d_lat: cfg.feat_latent,
            codebook_size: cfg.feat_codebook,
            seed: cfg.feat_q_seed,
        },
    )
}

/// `(n_cls + n_vis)^2` mask: a task token sees itself and every patch; a
/// patch sees every patch and no task token.
pub fn isolation_mask(n_cls: usize, n_vis: usize) -> Result<AttnMask> {
    if n_vis == 0 {
        return Err(Error::InvalidInput("isolation mask needs at least one visible patch".into()));
    }
    let n = n_cls + n_vis;
    let mut allow = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            allow[i * n + j] = if i < n_cls { j == i || j >= n_cls } else { j >= n_cls };
        }
    }
    AttnMask::new(n, n, allow)
}

fn build_layout<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>, sig_q: &Quantizer, feat_q: &Quantizer) -> Layout {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let d = cfg.d_model;
    let p = cfg.patch_len;

    let mut cnn = Vec::new();
    let mut c_feat = CHANNELS;
    if cfg.use_cnn {
        for i in 0..cfg.cnn_blocks {
            cnn.push(ConvResidualBlock::new(store, &format!("cnn.{i}"), c_feat, cfg.cnn_channels, cfg.kernel_size, &mut rng));
            c_feat = cfg.cnn_channels;
        }
    }
    let patch_conv = Linear::new(store, "patch.conv", p * c_feat, d, &mut rng);
    let patch_proj = Linear::new(store, "patch.proj", d, d, &mut rng);
    let label_embed = cfg
        .use_label_embed
        .then(|| store.add_normal("label_embed", &[cfg.sig_codebook, d], TOKEN_INIT_STD, true, &mut rng));
    let table: Vec<T> = sinusoidal_table(cfg.n_patches, d).into_iter().map(T::c).collect();
    let pos = store.add_frozen("pos_table", &[cfg.n_patches, d], table);
    let cls = TASKS[..cfg.n_cls()]
        .iter()
        .map(|t| store.add_normal(&format!("cls.{t}"), &[1, d], TOKEN_INIT_STD, false, &mut rng))
        .collect();
    let enc = (0..cfg.enc_layers)
        .map(|i| TransformerBlock::new(store, &format!("enc.{i}"), d, cfg.heads, cfg.mlp_ratio, &mut rng))
        .collect();
    let enc_ln = LayerNorm::new(store, "enc.ln", d);
    let xattn = if cfg.use_multiview {
        TASKS
            .iter()
            .map(|t| {
                (
                    MultiHeadAttention::new(store, &format!("xattn.{t}.attn"), d, cfg.heads, &mut rng),
                    LayerNorm::new(store, &format!("xattn.{t}.ln"), d),
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    let dec = cfg.use_bestrq_mae.then(|| Decoder {
        embed: Linear::new(store, "dec.embed", d, d, &mut rng),
        mask_token: store.add_normal("dec.mask_token", &[1, d], TOKEN_INIT_STD, false, &mut rng),
        gate: cfg.use_label_embed.then(|| Linear::new(store, "dec.gate", 2 * d, d, &mut rng)),
        xattn_ln: LayerNorm::new(store, "dec.xattn_ln", d),
        xattn: MultiHeadAttention::new(store, "dec.xattn", d, cfg.heads, &mut rng),
        blocks: (0..cfg.dec_layers)
            .map(|i| TransformerBlock::new(store, &format!("dec.{i}"), d, cfg.heads, cfg.mlp_ratio, &mut rng))
            .collect(),
        ln: LayerNorm::new(store, "dec.ln", d),
        head: Linear::new(store, "dec.head", d, p * CHANNELS, &mut rng),
    });
    let meta_head = cfg.use_multiview.then(|| {
        (
            Linear::new(store, "head.meta.fc1", d, d, &mut rng),
            Linear::new(store, "head.meta.fc2", d, cfg.d_meta, &mut rng),
        )
    });
    let feat_head = cfg
        .use_multiview
        .then(|| Linear::new(store, "head.feat", d, cfg.feat_codebook, &mut rng));

    let loss_s = store.add_zeros("loss.s", &[3]);
    {
        let s = store.get_mut(loss_s);
        s.trainable = cfg.use_uncertainty_weighting && active_terms(cfg).len() > 1;
        s.decay = false;
    }
    for (name, q) in [("sig_q", sig_q), ("feat_q", feat_q)] {
        let spec = q.spec;
        let cast = |v: &[f32]| v.iter().map(|&x| T::c(x as f64)).collect::<Vec<T>>();
        store.add_frozen(&format!("{name}.projection"), &[spec.d_in, spec.d_lat], cast(&q.projection));
        store.add_frozen(&format!("{name}.codebook"), &[spec.codebook_size, spec.d_lat], cast(&q.codebook));
    }
    Layout {
        cnn,
        patch_conv,
        patch_proj,
        label_embed,
        pos,
        cls,
        enc,
        enc_ln,
        xattn,
        dec,
        meta_head,
        feat_head,
        loss_s,
    }
}

/// Indices (0 = r, 1 = v, 2 = f) of the loss terms a configuration optimizes.
pub fn active_terms(cfg: &ModelConfig) -> Vec<usize> {
    let mut t = Vec::new();
    if cfg.use_bestrq_mae {
        t.push(0);
    }
    if cfg.use_multiview {
        t.extend([1, 2]);
    }
    t
}

impl<T: Real> Model<T> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (ss, fs) = quantizer_specs(&cfg);
        let sig_q = Quantizer::build(ss)?;
        let feat_q = Quantizer::build(fs)?;
        let mut params = ParamStore::new();
        let layout = build_layout(&cfg, &mut params, &sig_q, &feat_q);
        Ok(Model {
            cfg,
            params,
            sig_q,
            feat_q,
            layout,
        })
    }

    /// Rebuilds a model around an existing parameter store (checkpoint load).
    /// Every name and shape must match the configuration's layout exactly.
    pub fn from_store(cfg: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let mut m = Model::<T>::new(cfg)?;
        if m.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                m.params.len(),
                params.len()
            )));
        }
        for (a, b) in m.params.iter().zip(params.iter()) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: expected {} {:?}, found {} {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        m.params = params;
        m.sync_quantizers()?;
        Ok(m)
    }

    fn sync_quantizers(&mut self) -> Result<()> {
        let take = |name: &str| -> Vec<f32> {
            self.params
                .by_name(name)
                .map(|p| p.value.iter().map(|x| x.f64() as f32).collect())
                .unwrap_or_default()
        };
        self.sig_q = Quantizer::from_parts(self.sig_q.spec, take("sig_q.projection"), take("sig_q.codebook"))?;
        self.feat_q = Quantizer::from_parts(self.feat_q.spec, take("feat_q.projection"), take("feat_q.codebook"))?;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            sig_q: self.sig_q.clone(),
            feat_q: self.feat_q.clone(),
            layout: self.layout.clone(),
        }
    }

    pub fn loss_s_id(&self) -> ParamId {
        self.layout.loss_s
    }

    pub fn cls_ids(&self) -> &[ParamId] {
        &self.layout.cls
    }

    pub fn label_embed_id(&self) -> Option<ParamId> {
        self.layout.label_embed
    }

    pub fn gate_bias_id(&self) -> Option<ParamId> {
        self.layout.dec.as_ref().and_then(|d| d.gate.and_then(|g| g.b))
    }

    fn check_input(&self, x: &SampleInput<'_>) -> Result<()> {
        let c = &self.cfg;
        if x.values.len() != c.n_patches * c.patch_len {
            return Err(Error::InvalidInput(format!(
                "segment length {} != {}",
                x.values.len(),
                c.n_patches * c.patch_len
            )));
        }
        if x.signal_labels.len() != c.n_patches {
            return Err(Error::InvalidInput("one signal label per patch required".into()));
        }
        if let Some(&l) = x.signal_labels.iter().find(|&&l| l >= c.sig_codebook) {
            return Err(Error::InvalidInput(format!("label {l} out of range")));
        }
        if x.values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite segment value".into()));
        }
        Ok(())
    }

    /// Patch tokens `h` for the listed patches, `len x D`. Each patch is
    /// processed on its own so masked content never reaches visible tokens.
    pub fn embed_patches(&self, g: &mut Graph<'_, T>, values: &[[f64; CHANNELS]], patches: &[usize]) -> Var {
        let p = self.cfg.patch_len;
        let mut raw = Vec::with_capacity(patches.len() * p * CHANNELS);
        for &i in patches {
            for v in &values[i * p..(i + 1) * p] {
                raw.extend(v.iter().map(|&x| T::c(x)));
            }
        }
        let mut x = g.input(raw, patches.len() * p, CHANNELS);
        for block in &self.layout.cnn {
            x = block.forward(g, x, p);
        }
        let (_, c) = g.shape(x);
        let flat = g.reshape(x, patches.len(), p * c);
        let h = self.layout.patch_conv.forward(g, flat);
        self.layout.patch_proj.forward(g, h)
    }

    /// `z_i = h_i + E[l_i] + pos_i` for the listed patches.
    pub fn fuse_tokens(&self, g: &mut Graph<'_, T>, h: Var, labels: &[usize], patches: &[usize]) -> Var {
        let mut z = h;
        if let Some(e) = self.layout.label_embed {
            let table = g.param(e);
            let l: Vec<usize> = patches.iter().map(|&i| labels[i]).collect();
            let emb = g.gather(table, &l);
            z = g.add(z, emb);
        }
        let pos = g.param(self.layout.pos);
        let p = g.gather(pos, patches);
        g.add(z, p)
    }

    pub fn encode(&self, g: &mut Graph<'_, T>, x: &SampleInput<'_>, visible: &[usize]) -> Result<EncodeVars> {
        let mask = Arc::new(isolation_mask(self.cfg.n_cls(), visible.len())?);
        self.encode_with_mask(g, x, visible, mask)
    }

    /// Encoder with an explicit attention mask over `[cls..., patches...]`.
    pub fn encode_with_mask(
        &self,
        g: &mut Graph<'_, T>,
        x: &SampleInput<'_>,
        visible: &[usize],
        mask: Arc<AttnMask>,
    ) -> Result<EncodeVars> {
        self.check_input(x)?;
        if visible.is_empty() || visible.iter().any(|&i| i >= self.cfg.n_patches) {
            return Err(Error::InvalidInput("visible set empty or out of range".into()));
        }
        let n_cls = self.cfg.n_cls();
        let h = self.embed_patches(g, x.values, visible);
        let z = self.fuse_tokens(g, h, x.signal_labels, visible);
        let mut parts: Vec<Var> = self.layout.cls.iter().map(|&c| g.param(c)).collect();
        parts.push(z);
        let mut s = g.concat_rows(&parts);
        for block in &self.layout.enc {
            s = block.forward(g, s, mask.clone());
        }
        let s = self.layout.enc_ln.forward(g, s);
        let cls = (0..n_cls).map(|i| g.gather(s, &[i])).collect();
        let idx: Vec<usize> = (n_cls..n_cls + visible.len()).collect();
        let patches = g.gather(s, &idx);
        Ok(EncodeVars {
            cls,
            patches,
            visible: visible.to_vec(),
        })
    }

    /// `cls_t' = LN_t(cls_t + MHA_t(cls_t, [cls_r; cls_v; cls_f]))`; identity without multiview.
    pub fn cls_cross_attention(&self, g: &mut Graph<'_, T>, cls: &[Var]) -> Vec<Var> {
        if self.layout.xattn.is_empty() {
            return cls.to_vec();
        }
        let stack = g.concat_rows(cls);
        let mask = Arc::new(AttnMask::full(1, cls.len()));
        cls.iter()
            .zip(&self.layout.xattn)
            .map(|(&c, (attn, ln))| {
                let a = attn.forward(g, c, stack, mask.clone());
                let r = g.add(c, a);
                ln.forward(g, r)
            })
            .collect()
    }

    /// Raw-patch reconstruction for every position, `N x (P*C)`.
    pub fn decode_reconstruct(&self, g: &mut Graph<'_, T>, enc: &EncodeVars, cls_r: Var, labels: &[usize]) -> Option<Var> {
        let dec = self.layout.dec.as_ref()?;
        let n = self.cfg.n_patches;
        let n_vis = enc.visible.len();
        let emb = dec.embed.forward(g, enc.patches);
        let tok = g.param(dec.mask_token);
        let pool = g.concat_rows(&[emb, tok]);
        let mut slot = vec![n_vis; n];
        for (k, &i) in enc.visible.iter().enumerate() {
            slot[i] = k;
        }
        let x = g.gather(pool, &slot);
        let pos = g.param(self.layout.pos);
        let all: Vec<usize> = (0..n).collect();
        let p = g.gather(pos, &all);
        let mut x = g.add(x, p);
        if let (Some(gate), Some(table)) = (dec.gate, self.layout.label_embed) {
            let t = g.param(table);
            let e = g.gather(t, labels);
            let cat = g.concat_cols(x, e);
            let gl = gate.forward(g, cat);
            let gs = g.sigmoid(gl);
            let ge = g.mul(gs, e);
            x = g.add(x, ge);
        }
        let q = dec.xattn_ln.forward(g, x);
        let a = dec.xattn.forward(g, q, cls_r, Arc::new(AttnMask::full(n, 1)));
        x = g.add(x, a);
        let full = Arc::new(AttnMask::full(n, n));
        for block in &dec.blocks {
            x = block.forward(g, x, full.clone());
        }
        let x = dec.ln.forward(g, x);
        Some(dec.head.forward(g, x))
    }

    pub fn head_metadata(&self, g: &mut Graph<'_, T>, cls_v: Var) -> Option<Var> {
        let (fc1, fc2) = self.layout.meta_head?;
        let h = fc1.forward(g, cls_v);
        let h = g.gelu(h);
        Some(fc2.forward(g, h))
    }

    /// Logits for each visible patch from `H_i + cls_f'`.
    pub fn head_features(&self, g: &mut Graph<'_, T>, patches: Var, cls_f: Var) -> Option<Var> {
        let head = self.layout.feat_head?;
        let x = g.add_row(patches, cls_f);
        Some(head.forward(g, x))
    }

    pub fn forward_pretrain(&self, g: &mut Graph<'_, T>, x: &SampleInput<'_>, visible: &[usize]) -> Result<PretrainVars> {
        let enc = self.encode(g, x, visible)?;
        let cls_x = self.cls_cross_attention(g, &enc.cls);
        let recon = self.decode_reconstruct(g, &enc, cls_x[0], x.signal_labels);
        let (meta, feat_logits) = if cls_x.len() == 3 {
            (
                self.head_metadata(g, cls_x[1]),
                self.head_features(g, enc.patches, cls_x[2]),
            )
        } else {
            (None, None)
        };
        Ok(PretrainVars {
            enc,
            cls_x,
            recon,
            meta,
            feat_logits,
        })
    }

    /// Frozen representation: concatenated enriched task tokens, all patches visible.
    pub fn forward_probe(&self, x: &SampleInput<'_>) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let all: Vec<usize> = (0..self.cfg.n_patches).collect();
        let enc = self.encode(&mut g, x, &all)?;
        let cls = self.cls_cross_attention(&mut g, &enc.cls);
        Ok(cls.iter().flat_map(|&c| g.value(c).iter().map(|v| v.f64()).collect::<Vec<_>>()).collect())
    }
}
