//! Generator and discriminator networks.

mod discriminator;
mod generator;
pub mod layers;
pub mod params;
mod pixel_shuffle;

pub use discriminator::{
    ConvBlock, Discriminator, DiscriminatorConfig, DiscriminatorOutput, FeatureTaps, TapPosition,
    NUM_CONV_BLOCKS,
};
pub use generator::{Generator, GeneratorConfig, ResidualBlock};
pub use params::{init_weights, ParamKind, ParamStore, WeightInit};
pub use pixel_shuffle::{pixel_shuffle, pixel_unshuffle};
