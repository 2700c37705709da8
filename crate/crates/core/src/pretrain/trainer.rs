//! The optimization loop.
//!
//! Step `t` draws its batch and masks from a ChaCha stream keyed by
//! `(seed, t)`, so a resumed run needs only the parameters, the optimizer
//! moments and the step counter to continue bit-exactly.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::model::Model;
use crate::pretrain::checkpoint::Checkpoint;
use crate::pretrain::data::{PreparedCorpus, PreparedSegment};
use crate::pretrain::mask::{sample_mask, PatchMask};
use crate::pretrain::objective::batch_objective;
use crate::pretrain::optim::{cosine_lr, AdamW};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub loss_r: f64,
    pub loss_v: f64,
    pub loss_f: f64,
    pub s_r: f64,
    pub s_v: f64,
    pub s_f: f64,
    /// Before clipping.
    pub grad_norm: f64,
    pub lr: f64,
    pub fhr_rmse_bpm: f64,
}

pub struct Trainer {
    pub model: Model<f32>,
    pub opt: AdamW,
    pub train: TrainConfig,
    /// Completed steps.
    pub step: usize,
    pub corpus: PreparedCorpus,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, train: TrainConfig, corpus: PreparedCorpus) -> Result<Self> {
        train.validate()?;
        let model = Model::<f32>::new(model_cfg)?;
        Self::check_corpus(&model, &corpus)?;
        let opt = AdamW::new(&model.params);
        Ok(Trainer {
            model,
            opt,
            train,
            step: 0,
            corpus,
        })
    }

    /// Continues from a checkpoint. The corpus must have been prepared with
    /// the checkpoint's statistics.
    pub fn resume(ck: Checkpoint, corpus: PreparedCorpus) -> Result<Self> {
        if ck.feature_stats != corpus.feature_stats || ck.meta_stats != corpus.meta_stats {
            return Err(Error::Checkpoint("corpus statistics differ from the checkpoint".into()));
        }
        let opt = ck
            .optimizer
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
        Self::check_corpus(&ck.model, &corpus)?;
        Ok(Trainer {
            model: ck.model,
            opt,
            train: ck.train,
            step: ck.step,
            corpus,
        })
    }

    fn check_corpus(model: &Model<f32>, corpus: &PreparedCorpus) -> Result<()> {
        if corpus.segments.is_empty() {
            return Err(Error::InvalidInput("pretraining corpus is empty".into()));
        }
        if model.cfg.use_multiview && corpus.segments.iter().any(|s| s.feature_labels.is_empty()) {
            return Err(Error::InvalidInput("corpus lacks feature labels".into()));
        }
        Ok(())
    }

    /// Batch indices and per-segment masks for step `t`.
    pub fn batch_for_step(&self, t: usize) -> Result<(Vec<usize>, Vec<PatchMask>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.train.seed);
        rng.set_stream(t as u64);
        let n = self.corpus.segments.len();
        let idx: Vec<usize> = sample(&mut rng, n, self.train.batch_size.min(n)).into_vec();
        let masks = idx
            .iter()
            .map(|_| sample_mask(self.model.cfg.n_patches, self.model.cfg.mask_ratio, &mut rng))
            .collect::<Result<_>>()?;
        Ok((idx, masks))
    }

    pub fn step(&mut self) -> Result<StepMetrics> {
        let t = self.step;
        let (idx, masks) = self.batch_for_step(t)?;
        let batch: Vec<&PreparedSegment> = idx.iter().map(|&i| &self.corpus.segments[i]).collect();
        let out = batch_objective(&self.model, &self.model.params, &batch, &masks, self.train.chunk_size, true)?;
        let mut grads = out.grads.expect("gradients requested");
        if !out.loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: t,
                batch: batch.iter().map(|s| s.id.clone()).collect(),
            });
        }
        let grad_norm = grads.global_norm();
        if grad_norm > self.train.grad_clip {
            grads.scale((self.train.grad_clip / grad_norm) as f32);
        }
        let lr = cosine_lr(t, &self.train);
        let s = self.model.params.get(self.model.loss_s_id()).value.clone();
        self.opt.step(&mut self.model.params, &grads, lr, &self.train);
        self.step += 1;
        Ok(StepMetrics {
            step: t,
            loss: out.loss,
            loss_r: out.terms[0],
            loss_v: out.terms[1],
            loss_f: out.terms[2],
            s_r: s[0] as f64,
            s_v: s[1] as f64,
            s_f: s[2] as f64,
            grad_norm,
            lr,
            fhr_rmse_bpm: out.fhr_rmse_bpm,
        })
    }

    /// Steps until `self.step == until`, calling `hook` after each step.
    pub fn run_until<F>(&mut self, until: usize, mut hook: F) -> Result<()>
    where
        F: FnMut(&Trainer, &StepMetrics) -> Result<()>,
    {
        while self.step < until {
            let m = self.step()?;
            hook(self, &m)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train: self.train.clone(),
            step: self.step,
            feature_stats: self.corpus.feature_stats.clone(),
            meta_stats: self.corpus.meta_stats.clone(),
            optimizer: Some(self.opt.clone()),
        }
    }
}
