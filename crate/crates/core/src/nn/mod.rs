//! Network modules: the layout generator and the domain discriminators.

pub mod discriminator;
pub mod generator;
pub mod layers;
pub mod params;
pub mod resize;

pub use discriminator::{Discriminator, DiscriminatorConfig, DiscriminatorKind, FeatureLevel};
pub use generator::{
    decode_layout, input_tensor, FeaturePyramid, Generator, GeneratorConfig, LayoutPrediction, PredictionTensors, NUM_CLASSES,
};
pub use params::{ParamPath, ParamStore};
