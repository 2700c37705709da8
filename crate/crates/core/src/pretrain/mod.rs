//! Masking, pretext losses, uncertainty weighting, optimization and checkpoints.

pub mod checkpoint;
pub mod data;
pub mod loss;
pub mod mask;
pub mod objective;
pub mod optim;
pub mod trainer;

pub use checkpoint::{checkpoint_digest, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use data::{prepare_pretraining, prepare_segment, segments_from_records, MetaStats, PreparedCorpus, PreparedSegment};
pub use loss::{feature_loss, metadata_loss, reconstruction_loss, total_loss, total_loss_grad_s};
pub use mask::{sample_mask, PatchMask};
pub use objective::{batch_objective, ObjectiveOutput};
pub use optim::{cosine_lr, AdamW};
pub use trainer::{StepMetrics, Trainer};
