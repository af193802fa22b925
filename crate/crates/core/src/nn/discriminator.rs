//! Domain discriminators over generator features.
//!
//! The pixel variant upsamples a feature map ×8 with three stride-2
//! transposed convolutions, resizes bilinearly to the input-image dims and
//! squashes each pixel onto `[0, 1]`. The patch variant shares that head but
//! resizes to a coarser grid; the global variant pools to one probability.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::generator::FeaturePyramid;
use super::layers::{sigmoid, Linear, UpConv};
use super::params::ParamPath;
use super::resize::resize_bilinear;
use crate::error::{config_err, shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorKind {
    Pixel,
    Global,
    Patch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLevel {
    /// First residual block (stride 4).
    Shallow,
    /// Fourth residual block.
    Deep,
    /// Fused multi-scale map.
    Fusion,
}

impl FeatureLevel {
    pub fn select<'a>(&self, pyramid: &'a FeaturePyramid) -> &'a Tensor {
        match self {
            FeatureLevel::Shallow => pyramid.shallow(),
            FeatureLevel::Deep => pyramid.deep(),
            FeatureLevel::Fusion => &pyramid.fused,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub kind: DiscriminatorKind,
    /// Output grid `(h, w)` for the patch variant.
    #[serde(default)]
    pub patch_dims: Option<(usize, usize)>,
    pub feature_level: FeatureLevel,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            kind: DiscriminatorKind::Pixel,
            patch_dims: None,
            feature_level: FeatureLevel::Shallow,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.patch_dims) {
            (DiscriminatorKind::Patch, None) => config_err("patch discriminator needs disc.patch_dims"),
            (DiscriminatorKind::Patch, Some((0, _)) | Some((_, 0))) => config_err("patch dims must be positive"),
            (DiscriminatorKind::Pixel | DiscriminatorKind::Global, Some(_)) => {
                config_err("disc.patch_dims only applies to the patch discriminator")
            }
            _ => Ok(()),
        }
    }

    /// Spatial dims of the map compared against the white-patch target.
    pub fn output_dims(&self, image_dims: (usize, usize)) -> (usize, usize) {
        match self.kind {
            DiscriminatorKind::Pixel => image_dims,
            DiscriminatorKind::Patch => self.patch_dims.unwrap_or(image_dims),
            DiscriminatorKind::Global => (1, 1),
        }
    }
}

const GLOBAL_HIDDEN: usize = 64;

#[derive(Clone, Debug)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    up: [UpConv; 3],
    global: Option<(Linear, Linear)>,
}

impl Discriminator {
    /// `channels` is the channel count of the feature map the variant reads.
    pub fn new(cfg: DiscriminatorConfig, channels: usize, root: &ParamPath) -> Result<Self> {
        cfg.validate()?;
        if channels < 4 {
            return config_err(format!("discriminator needs at least 4 input channels, got {channels}"));
        }
        let (c1, c2) = (channels / 2, channels / 4);
        let up = [
            UpConv::new(&root.pp("up1"), channels, c1)?,
            UpConv::new(&root.pp("up2"), c1, c2)?,
            UpConv::new(&root.pp("up3"), c2, 1)?,
        ];
        let global = match cfg.kind {
            DiscriminatorKind::Global => Some((
                Linear::new(&root.pp("global").pp("hidden"), channels, GLOBAL_HIDDEN)?,
                Linear::new(&root.pp("global").pp("out"), GLOBAL_HIDDEN, 1)?,
            )),
            _ => None,
        };
        Ok(Self { cfg, up, global })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    /// Copy whose weights are cut from the autograd graph.
    pub fn detached(&self) -> Self {
        Self {
            cfg: self.cfg,
            up: [self.up[0].detached(), self.up[1].detached(), self.up[2].detached()],
            global: self.global.as_ref().map(|(a, b)| (a.detached(), b.detached())),
        }
    }

    fn upsample_logits(&self, features: &Tensor) -> Result<Tensor> {
        let x = self.up[0].forward(features)?.relu()?;
        let x = self.up[1].forward(&x)?.relu()?;
        self.up[2].forward(&x)
    }

    /// Per-pixel map `(B, 1, H, W)` with `(H, W) = target_dims`.
    pub fn discriminate_pixels(&self, features: &Tensor, target_dims: (usize, usize)) -> Result<Tensor> {
        let logits = resize_bilinear(&self.upsample_logits(features)?, target_dims.0, target_dims.1)?;
        let (_, _, h, w) = logits.dims4()?;
        if (h, w) != target_dims {
            return Err(Error::Shape(format!("resized map is {h}x{w}, expected {target_dims:?}")));
        }
        sigmoid(&logits)
    }

    /// Patch-level map `(B, 1, h, w)` with `(h, w) = patch_dims`.
    pub fn discriminate_patches(&self, features: &Tensor, patch_dims: (usize, usize)) -> Result<Tensor> {
        self.discriminate_pixels(features, patch_dims)
    }

    /// One probability per image, shaped `(B, 1, 1, 1)`.
    pub fn discriminate_global(&self, features: &Tensor) -> Result<Tensor> {
        let Some((hidden, out)) = &self.global else {
            return config_err("global head not built for this discriminator");
        };
        let (b, _, _, _) = features.dims4()?;
        let pooled = features.mean(3)?.mean(2)?;
        let logit = out.forward(&hidden.forward(&pooled)?.relu()?)?;
        sigmoid(&logit.reshape((b, 1, 1, 1))?)
    }

    /// Runs the configured variant on the configured feature level.
    pub fn forward(&self, pyramid: &FeaturePyramid, image_dims: (usize, usize)) -> Result<Tensor> {
        self.forward_features(self.cfg.feature_level.select(pyramid), image_dims)
    }

    /// Runs the configured variant on an already selected feature map.
    pub fn forward_features(&self, features: &Tensor, image_dims: (usize, usize)) -> Result<Tensor> {
        match self.cfg.kind {
            DiscriminatorKind::Pixel => self.discriminate_pixels(features, image_dims),
            DiscriminatorKind::Patch => match self.cfg.patch_dims {
                Some(p) => self.discriminate_patches(features, p),
                None => shape_err("patch dims missing"),
            },
            DiscriminatorKind::Global => self.discriminate_global(features),
        }
    }
}
