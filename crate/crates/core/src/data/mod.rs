//! Dataset ingestion, bicubic LR synthesis and patch sampling.

mod dihedral;
mod index;
mod resize;
mod sampler;

pub use dihedral::Augmentation;
pub use index::{ingest_dataset, is_lossless_image, DatasetIndex, IndexEntry, Split};
pub use resize::{contributions, cubic, downscale_bicubic, resize_bicubic, resize_by, upscale_bicubic, Contributions};
pub use sampler::{center, uncenter, PatchPair, PatchSampler, SamplerConfig};
