//! Image-aware graphic layout generation with pixel-level adversarial
//! domain adaptation.
//!
//! A DETR-style set-prediction generator is trained on inpainted poster
//! images (source domain) while a small fully convolutional discriminator,
//! attached to the generator's shallow feature map, tries to locate the
//! inpainted pixels. The generator is rewarded for hiding them, which aligns
//! source features with those of clean product images (target domain).

pub mod data;
pub mod error;
pub mod harness;
pub mod layout;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod raster;
pub mod training;

pub use error::{Error, Result};
