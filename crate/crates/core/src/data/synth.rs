//! Procedural poster scenes: a soft background, one product shape, and a
//! rule-based layout placed in the free band above or below the product.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{compose_white_patch_map, simulate_inpainting, Corpus, CorpusManifest, Domain, DomainSample, WhitePatchMap, NOISE_AMPLITUDE};
use crate::error::{config_err, Result};
use crate::layout::{BBox, Category, Layout, LayoutElement};
use crate::raster::{quantize_u8, Grid, RgbImage};

pub const MIN_IMAGE_DIM: usize = 32;

const SOURCE_STREAM: u64 = 1 << 32;
const TARGET_STREAM: u64 = 2 << 32;
const INPAINT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn source_id(i: usize) -> String {
    format!("src-{i:05}")
}

pub fn target_id(i: usize) -> String {
    format!("tgt-{i:05}")
}

/// Builds a deterministic two-domain corpus. Each sample draws from its own
/// RNG stream, so samples are independent of generation order.
pub fn generate_synthetic_corpus(n_source: usize, n_target: usize, image_dims: (usize, usize), seed: u64) -> Result<Corpus> {
    let (h, w) = image_dims;
    if h < MIN_IMAGE_DIM || w < MIN_IMAGE_DIM {
        return config_err(format!("image dims {h}x{w} below the {MIN_IMAGE_DIM}px minimum"));
    }
    if n_source + n_target == 0 {
        return config_err("corpus must contain at least one sample");
    }
    let mut samples = Vec::with_capacity(n_source + n_target);
    for i in 0..n_source {
        samples.push(source_sample(i, image_dims, seed)?);
    }
    for i in 0..n_target {
        samples.push(target_sample(i, image_dims, seed));
    }
    let manifest = CorpusManifest {
        source_ids: (0..n_source).map(source_id).collect(),
        target_ids: (0..n_target).map(target_id).collect(),
        image_dims,
        seed,
        noise_amplitude: NOISE_AMPLITUDE,
    };
    Corpus::new(manifest, samples)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn source_sample(i: usize, dims: (usize, usize), seed: u64) -> Result<DomainSample> {
    let mut rng = stream_rng(seed, SOURCE_STREAM + i as u64);
    let scene = render_scene(&mut rng, dims);
    let id = source_id(i);
    let layout = sample_layout(&mut rng, &scene, &id);
    let white_patch = compose_white_patch_map(&layout, dims);
    let inpaint_seed = seed ^ INPAINT_SALT ^ (i as u64).wrapping_mul(0x100_0000_01b3);
    let image = simulate_inpainting(&scene.image, &white_patch, inpaint_seed)?;
    Ok(DomainSample {
        id,
        domain: Domain::Source,
        image,
        saliency: scene.saliency,
        product_mask: scene.product_mask,
        white_patch,
        gt_layout: Some(layout),
    })
}

fn target_sample(i: usize, dims: (usize, usize), seed: u64) -> DomainSample {
    let mut rng = stream_rng(seed, TARGET_STREAM + i as u64);
    let scene = render_scene(&mut rng, dims);
    DomainSample {
        id: target_id(i),
        domain: Domain::Target,
        image: scene.image,
        saliency: scene.saliency,
        product_mask: scene.product_mask,
        white_patch: WhitePatchMap::zeros(dims.0, dims.1),
        gt_layout: None,
    }
}

struct Scene {
    image: RgbImage,
    saliency: Grid,
    product_mask: Grid,
    /// Vertical extent `(y0, y1)` of the band free for graphic elements.
    band: (f64, f64),
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn render_scene(rng: &mut ChaCha8Rng, (h, w): (usize, usize)) -> Scene {
    let top: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.55f32..0.95));
    let bottom: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.55f32..0.95));

    struct Blob {
        cx: f64,
        cy: f64,
        inv_two_sigma2: f64,
        tint: [f32; 3],
    }
    let n_blobs = rng.random_range(1..=2);
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| {
            let sigma = uniform(rng, 0.15, 0.3);
            Blob {
                cx: uniform(rng, 0.0, 1.0),
                cy: uniform(rng, 0.0, 1.0),
                inv_two_sigma2: 1.0 / (2.0 * sigma * sigma),
                tint: std::array::from_fn(|_| rng.random_range(-0.08f32..0.08)),
            }
        })
        .collect();
    let stripes = rng.random_bool(0.35).then(|| {
        let y0 = uniform(rng, 0.0, 0.8);
        let period = uniform(rng, 6.0, 12.0);
        (y0, y0 + uniform(rng, 0.1, 0.2), period)
    });

    // product: superellipse, either low (text goes on top) or high
    let low = rng.random_bool(0.5);
    let pcy = if low { uniform(rng, 0.62, 0.70) } else { uniform(rng, 0.30, 0.38) };
    let pcx = uniform(rng, 0.35, 0.65);
    let semi_x = uniform(rng, 0.15, 0.25);
    let semi_y = uniform(rng, 0.15, 0.20);
    let exponent = if rng.random_bool(0.5) { 2.0 } else { 4.0 };
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.1f32..0.6));
    let band = if low {
        (0.02, pcy - semi_y - 0.02)
    } else {
        (pcy + semi_y + 0.02, 0.98)
    };

    let mut image = RgbImage::filled(h, w, [0.0; 3]);
    let mut mask = Grid::zeros(h, w);
    for r in 0..h {
        let y = (r as f64 + 0.5) / h as f64;
        for c in 0..w {
            let x = (c as f64 + 0.5) / w as f64;
            let t = y as f32;
            let mut px: [f32; 3] = std::array::from_fn(|k| top[k] * (1.0 - t) + bottom[k] * t);
            for b in &blobs {
                let d2 = (x - b.cx).powi(2) + (y - b.cy).powi(2);
                let g = (-d2 * b.inv_two_sigma2).exp() as f32;
                for k in 0..3 {
                    px[k] += b.tint[k] * g;
                }
            }
            if let Some((s0, s1, period)) = stripes {
                if y >= s0 && y < s1 {
                    let s = (std::f64::consts::TAU * c as f64 / period).sin() as f32 * 0.06;
                    for v in &mut px {
                        *v += s;
                    }
                }
            }
            let (dx, dy) = ((x - pcx) / semi_x, (y - pcy) / semi_y);
            if dx.abs().powf(exponent) + dy.abs().powf(exponent) <= 1.0 {
                mask.set(r, c, 1.0);
                let shade = 0.85 + 0.15 * (1.0 - (dy as f32 + 1.0) * 0.5);
                px = std::array::from_fn(|k| base[k] * shade);
            }
            image.set_pixel(r, c, px.map(quantize_u8));
        }
    }
    let saliency = blur(&mask, (h.min(w) / 32).max(1)).map(quantize_u8);
    Scene {
        image,
        saliency,
        product_mask: mask,
        band,
    }
}

fn blur(g: &Grid, radius: usize) -> Grid {
    let (h, w) = g.dims();
    let mut out = Grid::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let (r0, r1) = (r.saturating_sub(radius), (r + radius + 1).min(h));
            let (c0, c1) = (c.saturating_sub(radius), (c + radius + 1).min(w));
            let mut acc = 0f32;
            for rr in r0..r1 {
                for cc in c0..c1 {
                    acc += g.get(rr, cc);
                }
            }
            out.set(r, c, acc / ((r1 - r0) * (c1 - c0)) as f32);
        }
    }
    out
}

fn corners(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
    BBox::from_corners(x0, y0, x1, y1)
}

fn sample_layout(rng: &mut ChaCha8Rng, scene: &Scene, id: &str) -> Layout {
    let (band_y0, band_y1) = scene.band;
    let mut elements = Vec::with_capacity(5);
    let push = |elements: &mut Vec<LayoutElement>, cat, b: BBox| {
        if let Some(e) = LayoutElement::clamped(cat, b) {
            elements.push(e);
        }
    };

    let row_y0 = band_y0 + uniform(rng, 0.0, 0.02);
    let (lw, lh) = (uniform(rng, 0.10, 0.16), uniform(rng, 0.06, 0.09));
    let lx0 = uniform(rng, 0.03, 0.08);
    push(&mut elements, Category::Logo, corners(lx0, row_y0, lx0 + lw, row_y0 + lh));
    let mut row_y1 = row_y0 + lh;
    if rng.random_bool(0.3) {
        let (ew, eh) = (uniform(rng, 0.06, 0.10), uniform(rng, 0.06, 0.10));
        let ex1 = 1.0 - uniform(rng, 0.03, 0.08);
        push(&mut elements, Category::Embellishment, corners(ex1 - ew, row_y0, ex1, row_y0 + eh));
        row_y1 = row_y1.max(row_y0 + eh);
    }

    let (tw, th) = (uniform(rng, 0.45, 0.75), uniform(rng, 0.08, 0.12));
    let tcx = uniform(rng, 0.45, 0.55);
    let ty0 = row_y1 + uniform(rng, 0.02, 0.04);
    let title = corners(tcx - tw / 2.0, ty0, tcx + tw / 2.0, ty0 + th);
    push(&mut elements, Category::Text, title);

    let mut subtitle = None;
    if rng.random_bool(0.7) {
        let (sw, sh) = (uniform(rng, 0.3, 0.5).min(tw), uniform(rng, 0.05, 0.08));
        let sy0 = ty0 + th + uniform(rng, 0.015, 0.03);
        if sy0 + sh <= band_y1 {
            let b = corners(tcx - sw / 2.0, sy0, tcx + sw / 2.0, sy0 + sh);
            push(&mut elements, Category::Text, b);
            subtitle = Some(b);
        }
    }

    let under = match subtitle {
        Some(s) if rng.random_bool(0.4) => s,
        _ => title,
    };
    let (mx, my) = (uniform(rng, 0.015, 0.03), uniform(rng, 0.01, 0.02));
    let c = under.corners();
    push(&mut elements, Category::Underlay, corners(c.x0 - mx, c.y0 - my, c.x1 + mx, c.y1 + my));

    Layout::new(id, elements)
}
