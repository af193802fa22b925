//! Two-domain corpus: inpainted source posters with ground-truth layouts and
//! clean target product images, plus white-patch maps and epoch sampling.

mod inpaint;
mod io;
mod sampler;
mod synth;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::raster::{Grid, RgbImage};

pub use inpaint::{simulate_inpainting, NOISE_AMPLITUDE};
pub use io::{load_corpus, load_gray, load_rgb, save_corpus, save_gray, save_rgb};
pub use sampler::{sample_epoch, EpochSampler};
pub use synth::{generate_synthetic_corpus, MIN_IMAGE_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

/// Binary per-pixel map marking inpainted pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Grid", into = "Grid")]
pub struct WhitePatchMap(Grid);

impl WhitePatchMap {
    pub fn new(values: Grid) -> Result<Self> {
        if !values.is_binary() {
            return Err(Error::InvalidInput("white-patch map must be binary".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Grid::zeros(height, width))
    }

    pub fn values(&self) -> &Grid {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    /// `N_p`, the number of map pixels.
    pub fn pixel_count(&self) -> usize {
        self.0.len()
    }

    pub fn ones(&self) -> usize {
        self.0.data.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn is_zero(&self) -> bool {
        self.0.data.iter().all(|&v| v == 0.0)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.0.get(r, c) == 1.0
    }
}

impl TryFrom<Grid> for WhitePatchMap {
    type Error = Error;
    fn try_from(g: Grid) -> Result<Self> {
        Self::new(g)
    }
}

impl From<WhitePatchMap> for Grid {
    fn from(m: WhitePatchMap) -> Grid {
        m.0
    }
}

/// Rasterizes the union of the layout's element boxes.
pub fn compose_white_patch_map(layout: &Layout, image_dims: (usize, usize)) -> WhitePatchMap {
    let (h, w) = image_dims;
    let mut g = Grid::zeros(h, w);
    for e in &layout.elements {
        let rect = e.bbox.to_pixel_rect(h, w);
        for r in rect.r0..rect.r1 {
            for c in rect.c0..rect.c1 {
                g.set(r, c, 1.0);
            }
        }
    }
    WhitePatchMap(g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSample {
    pub id: String,
    pub domain: Domain,
    pub image: RgbImage,
    pub saliency: Grid,
    pub product_mask: Grid,
    pub white_patch: WhitePatchMap,
    pub gt_layout: Option<Layout>,
}

impl DomainSample {
    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    /// Checks the per-domain invariants.
    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        if self.saliency.dims() != dims || self.product_mask.dims() != dims || self.white_patch.dims() != dims {
            return Err(Error::Shape(format!("sample {}: map dims disagree with image", self.id)));
        }
        match (self.domain, &self.gt_layout) {
            (Domain::Source, None) => Err(Error::InvalidInput(format!("source sample {} has no layout", self.id))),
            (Domain::Target, Some(_)) => Err(Error::InvalidInput(format!("target sample {} carries a layout", self.id))),
            (Domain::Target, None) if !self.white_patch.is_zero() => Err(Error::InvalidInput(format!(
                "target sample {} has a nonzero white-patch map",
                self.id
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub source_ids: Vec<String>,
    pub target_ids: Vec<String>,
    /// `(H, W)`.
    pub image_dims: (usize, usize),
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise_amplitude: f32,
}

fn default_noise() -> f32 {
    NOISE_AMPLITUDE
}

impl CorpusManifest {
    pub fn validate(&self) -> Result<()> {
        let set: std::collections::HashSet<&String> = self.source_ids.iter().collect();
        if let Some(dup) = self.target_ids.iter().find(|id| set.contains(id)) {
            return Err(Error::Config(format!("id {dup} appears in both domains")));
        }
        Ok(())
    }

    /// Moves the last `holdout_per_domain` ids of each domain into a
    /// held-out manifest. Returns `(train, held_out)`.
    pub fn split_holdout(&self, holdout_per_domain: usize) -> Result<(CorpusManifest, CorpusManifest)> {
        if holdout_per_domain >= self.source_ids.len() || holdout_per_domain >= self.target_ids.len() {
            return Err(Error::Config(format!(
                "cannot hold out {holdout_per_domain} per domain from {}+{} samples",
                self.source_ids.len(),
                self.target_ids.len()
            )));
        }
        let cut = |ids: &[String]| {
            let k = ids.len() - holdout_per_domain;
            (ids[..k].to_vec(), ids[k..].to_vec())
        };
        let (s_train, s_hold) = cut(&self.source_ids);
        let (t_train, t_hold) = cut(&self.target_ids);
        let mk = |s, t| CorpusManifest {
            source_ids: s,
            target_ids: t,
            image_dims: self.image_dims,
            seed: self.seed,
            noise_amplitude: self.noise_amplitude,
        };
        Ok((mk(s_train, t_train), mk(s_hold, t_hold)))
    }
}

/// In-memory corpus: manifest plus every sample it names.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    samples: Vec<DomainSample>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(manifest: CorpusManifest, samples: Vec<DomainSample>) -> Result<Self> {
        manifest.validate()?;
        let index: HashMap<String, usize> = samples.iter().enumerate().map(|(i, s)| (s.id.clone(), i)).collect();
        for id in manifest.source_ids.iter().chain(&manifest.target_ids) {
            if !index.contains_key(id) {
                return Err(Error::Config(format!("manifest names missing sample {id}")));
            }
        }
        for s in &samples {
            if s.dims() != manifest.image_dims {
                return Err(Error::Shape(format!(
                    "sample {} is {:?}, manifest says {:?}",
                    s.id,
                    s.dims(),
                    manifest.image_dims
                )));
            }
            s.validate()?;
        }
        Ok(Self { manifest, samples, index })
    }

    pub fn samples(&self) -> &[DomainSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DomainSample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    pub fn require(&self, id: &str) -> Result<&DomainSample> {
        self.get(id).ok_or_else(|| Error::InvalidInput(format!("unknown sample id {id}")))
    }

    pub fn select<'a>(&'a self, ids: &[String]) -> Result<Vec<&'a DomainSample>> {
        ids.iter().map(|id| self.require(id)).collect()
    }
}
