//! Multi-view self-supervised pretraining for cardiotocography (CTG).
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`signal`]: CTG records, 4 Hz to 1 Hz downsampling, 20-minute windows,
//!   gap filling, normalization and patching.
//! - [`synth`]: a seeded synthetic CTG generator with ground-truth labels.
//! - [`features`]: 17 handcrafted per-patch clinical features.
//! - [`quantizer`]: frozen random-projection quantizers producing pseudo-labels.
//! - [`nn`]: a small reverse-mode differentiation tape with the primitives the
//!   model needs, plus a finite-difference gradient checker.
//! - [`model`]: CNN patch embedding, label embeddings, three isolated task
//!   tokens, task-wise cross-attention, and the gated reconstruction decoder.
//! - [`pretrain`]: masking, pretext losses, uncertainty weighting, AdamW and
//!   checkpoints.
//! - [`probe`]: frozen-encoder linear probing, AUC, and the experiment harness.
//! - [`cli`]: the subcommands behind the `ctg-ssl` binary.

pub mod cli;
pub mod config;
pub mod error;
pub mod features;
pub mod io;
pub mod model;
pub mod nn;
pub mod pretrain;
pub mod probe;
pub mod quantizer;
pub mod selfcheck;
pub mod signal;
pub mod study;
pub mod synth;

pub use error::{Error, Result};
