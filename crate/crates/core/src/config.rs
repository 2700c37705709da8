//! Model and training configuration, plus the plain-text `key = value` format.
//!
//! Keys are the field names of [`ModelConfig`] and [`TrainConfig`]; the two
//! sets are disjoint so a flat file is unambiguous.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::signal::{PATCH_LEN, WINDOW_LEN};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub n_patches: usize,
    pub patch_len: usize,
    pub mask_ratio: f64,
    pub sig_codebook: usize,
    pub sig_latent: usize,
    pub feat_codebook: usize,
    pub feat_latent: usize,
    pub d_meta: usize,
    pub cnn_channels: usize,
    pub cnn_blocks: usize,
    pub kernel_size: usize,
    pub sig_q_seed: u64,
    pub feat_q_seed: u64,
    pub init_seed: u64,
    pub use_cnn: bool,
    pub use_label_embed: bool,
    pub use_multiview: bool,
    pub use_bestrq_mae: bool,
    pub use_uncertainty_weighting: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            enc_layers: 4,
            dec_layers: 2,
            heads: 4,
            mlp_ratio: 2,
            n_patches: WINDOW_LEN / PATCH_LEN,
            patch_len: PATCH_LEN,
            mask_ratio: 0.5,
            sig_codebook: 256,
            sig_latent: 16,
            feat_codebook: 64,
            feat_latent: 8,
            d_meta: 3,
            cnn_channels: 32,
            cnn_blocks: 3,
            kernel_size: 5,
            sig_q_seed: 1,
            feat_q_seed: 2,
            init_seed: 0,
            use_cnn: true,
            use_label_embed: true,
            use_multiview: true,
            use_bestrq_mae: true,
            use_uncertainty_weighting: true,
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(bad(format!("d_model {} not divisible by heads {}", self.d_model, self.heads)));
        }
        if self.n_patches < 2 || self.patch_len == 0 || self.n_patches * self.patch_len != WINDOW_LEN {
            return Err(bad(format!("n_patches * patch_len must equal {WINDOW_LEN}")));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(bad("mask_ratio must lie in (0, 1)"));
        }
        if self.d_meta != 3 {
            return Err(bad("d_meta must be 3"));
        }
        if self.enc_layers == 0 || self.mlp_ratio == 0 {
            return Err(bad("enc_layers and mlp_ratio must be >= 1"));
        }
        if self.use_bestrq_mae && self.dec_layers == 0 {
            return Err(bad("dec_layers must be >= 1"));
        }
        if self.use_cnn && (self.cnn_blocks == 0 || self.cnn_channels == 0 || self.kernel_size % 2 == 0) {
            return Err(bad("cnn needs >= 1 block, >= 1 channel and an odd kernel"));
        }
        if [self.sig_codebook, self.sig_latent, self.feat_codebook, self.feat_latent].contains(&0) {
            return Err(bad("quantizer sizes must be >= 1"));
        }
        if !self.use_multiview && !self.use_bestrq_mae {
            return Err(bad("use_multiview=false and use_bestrq_mae=false leave no objective"));
        }
        Ok(())
    }

    /// Number of task tokens.
    pub fn n_cls(&self) -> usize {
        if self.use_multiview {
            3
        } else {
            1
        }
    }

    pub fn n_masked(&self) -> usize {
        masked_count(self.n_patches, self.mask_ratio)
    }

    pub fn repr_dim(&self) -> usize {
        self.n_cls() * self.d_model
    }
}

/// `round(n * ratio)` clamped to `[1, n - 1]`.
pub fn masked_count(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Checkpoint every this many steps; 0 keeps only the final one.
    pub snapshot_interval: usize,
    /// Segments per gradient-reduction chunk. Part of the numerics: the sum
    /// order depends on it, the thread count does not.
    pub chunk_size: usize,
    /// Window stride in seconds.
    pub stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            steps: 2000,
            lr: 1e-3,
            lr_min: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            grad_clip: 1.0,
            seed: 0,
            snapshot_interval: 500,
            chunk_size: 8,
            stride: WINDOW_LEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps == 0 || self.chunk_size == 0 || self.stride == 0 {
            return Err(bad("batch_size, steps, chunk_size and stride must be >= 1"));
        }
        let pos = [self.lr, self.adam_eps, self.grad_clip];
        if pos.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(bad("lr, adam_eps and grad_clip must be positive"));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return Err(bad("lr_min must lie in [0, lr]"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(bad("betas must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(bad("weight_decay must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse_value(key: &str, raw: &str, like: &Value) -> Result<Value> {
    let err = || bad(format!("bad value `{raw}` for `{key}`"));
    Ok(match like {
        Value::Bool(_) => Value::Bool(match raw {
            "true" | "1" => true,
            "false" | "0" => false,
            _ => return Err(err()),
        }),
        Value::Number(n) if n.is_f64() => {
            let x: f64 = raw.parse().map_err(|_| err())?;
            Value::from(x)
        }
        Value::Number(_) => Value::from(raw.parse::<u64>().map_err(|_| err())?),
        _ => return Err(err()),
    })
}

impl PipelineConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let defaults = PipelineConfig::default();
        let mut model = match serde_json::to_value(&defaults.model)? {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        let mut train: Map<String, Value> = match serde_json::to_value(&defaults.train)? {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let target = if model.contains_key(k) {
                &mut model
            } else if train.contains_key(k) {
                &mut train
            } else {
                return Err(Error::UnknownConfigKey(k.to_string()));
            };
            let parsed = parse_value(k, v, &target[k])?;
            target.insert(k.to_string(), parsed);
        }
        let cfg = PipelineConfig {
            model: serde_json::from_value(Value::Object(model)).map_err(|e| bad(e.to_string()))?,
            train: serde_json::from_value(Value::Object(train)).map_err(|e| bad(e.to_string()))?,
        };
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Renders every key, in field order; `parse(render())` is the identity.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for v in [serde_json::to_value(&self.model), serde_json::to_value(&self.train)] {
            if let Ok(Value::Object(m)) = v {
                for (k, v) in m {
                    out.push_str(&format!("{k} = {v}\n"));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn overrides_and_comments() {
        let c = PipelineConfig::parse("# hi\nmask_ratio = 0.25\nsteps=10 # short\nuse_cnn = false\n").unwrap();
        assert_eq!(c.model.mask_ratio, 0.25);
        assert_eq!(c.train.steps, 10);
        assert!(!c.model.use_cnn);
    }

    #[test]
    fn unknown_key_is_named() {
        match PipelineConfig::parse("mask_rato = 0.5") {
            Err(Error::UnknownConfigKey(k)) => assert_eq!(k, "mask_rato"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values() {
        assert!(PipelineConfig::parse("heads = 5").is_err());
        assert!(PipelineConfig::parse("mask_ratio = 1.0").is_err());
        assert!(PipelineConfig::parse("steps = -3").is_err());
        assert!(PipelineConfig::parse("use_multiview = false\nuse_bestrq_mae = false").is_err());
    }

    #[test]
    fn mask_count_clamps() {
        assert_eq!(masked_count(20, 0.5), 10);
        assert_eq!(masked_count(2, 0.9), 1);
        assert_eq!(masked_count(20, 0.01), 1);
    }
}
