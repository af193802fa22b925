//! On-disk corpus layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/samples/<id>/image.png          8-bit RGB
//! <dir>/samples/<id>/saliency.png       8-bit gray
//! <dir>/samples/<id>/product_mask.png   8-bit gray
//! <dir>/samples/<id>/white_patch.png    8-bit gray, 0 or 255
//! <dir>/samples/<id>/sample.json        domain + optional layout
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusManifest, Domain, DomainSample, WhitePatchMap};
use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::raster::{to_u8, Grid, RgbImage};

#[derive(Serialize, Deserialize)]
struct SampleMeta {
    domain: Domain,
    layout: Option<Layout>,
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("samples"))?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&corpus.manifest)?)?;
    for s in corpus.samples() {
        let sd = dir.join("samples").join(&s.id);
        fs::create_dir_all(&sd)?;
        save_rgb(&s.image, &sd.join("image.png"))?;
        save_gray(&s.saliency, &sd.join("saliency.png"))?;
        save_gray(&s.product_mask, &sd.join("product_mask.png"))?;
        save_gray(s.white_patch.values(), &sd.join("white_patch.png"))?;
        let meta = SampleMeta {
            domain: s.domain,
            layout: s.gt_layout.clone(),
        };
        fs::write(sd.join("sample.json"), serde_json::to_string_pretty(&meta)?)?;
    }
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest: CorpusManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut samples = Vec::with_capacity(manifest.source_ids.len() + manifest.target_ids.len());
    for id in manifest.source_ids.iter().chain(&manifest.target_ids) {
        let sd = dir.join("samples").join(id);
        let meta: SampleMeta = serde_json::from_str(&fs::read_to_string(sd.join("sample.json"))?)?;
        samples.push(DomainSample {
            id: id.clone(),
            domain: meta.domain,
            image: load_rgb(&sd.join("image.png"))?,
            saliency: load_gray(&sd.join("saliency.png"))?,
            product_mask: load_gray(&sd.join("product_mask.png"))?,
            white_patch: WhitePatchMap::new(load_gray(&sd.join("white_patch.png"))?)?,
            gt_layout: meta.layout,
        });
    }
    Corpus::new(manifest, samples)
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .ok_or_else(|| Error::Shape("rgb buffer size".into()))?;
    buf.save(path)?;
    Ok(())
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    RgbImage::new(h as usize, w as usize, img.into_raw().into_iter().map(|b| b as f32 / 255.0).collect())
}

pub fn save_gray(g: &Grid, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = g.data.iter().map(|&v| to_u8(v)).collect();
    let buf = image::GrayImage::from_raw(g.width as u32, g.height as u32, bytes)
        .ok_or_else(|| Error::Shape("gray buffer size".into()))?;
    buf.save(path)?;
    Ok(())
}

pub fn load_gray(path: &Path) -> Result<Grid> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Grid::new(h as usize, w as usize, img.into_raw().into_iter().map(|b| b as f32 / 255.0).collect())
}
