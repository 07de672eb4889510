//! Training loop, optimiser, checkpoints and inference.

mod adam;
mod checkpoint;
mod config;
mod inference;
mod state;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_generator, read_checkpoint, CheckpointManifest, CHECKPOINT_FORMAT};
pub use config::{lr_at, lr_for_epoch, Precision, Preset, TrainConfig};
pub use inference::{receptive_radius, super_resolve, Normalization};
pub use state::{Batch, Trainer};
