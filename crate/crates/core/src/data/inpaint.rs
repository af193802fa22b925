use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::WhitePatchMap;
use crate::error::{shape_err, Result};
use crate::raster::{quantize_u8, RgbImage};

/// Peak amplitude of the artifact noise added to inpainted pixels.
pub const NOISE_AMPLITUDE: f32 = 0.05;

const SMOOTH_RADIUS: usize = 2;
const NOISE_BLOCK: usize = 2;

/// Replaces every masked pixel with a local box-filtered value plus blocky
/// noise of amplitude [`NOISE_AMPLITUDE`]. Unmasked pixels are copied
/// through untouched and every masked channel is guaranteed to differ from
/// its input after 8-bit quantization.
pub fn simulate_inpainting(image: &RgbImage, map: &WhitePatchMap, seed: u64) -> Result<RgbImage> {
    let (h, w) = image.dims();
    if map.dims() != (h, w) {
        return shape_err(format!("image is {h}x{w}, white-patch map is {:?}", map.dims()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (bh, bw) = (h.div_ceil(NOISE_BLOCK), w.div_ceil(NOISE_BLOCK));
    // drawn for every block so the noise field does not depend on the mask
    let noise: Vec<f32> = (0..bh * bw)
        .map(|_| {
            let mag = rng.random_range(0.5f32..=1.0) * NOISE_AMPLITUDE;
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();

    let mut out = image.clone();
    for r in 0..h {
        for c in 0..w {
            if !map.get(r, c) {
                continue;
            }
            let smooth = box_mean(image, r, c, SMOOTH_RADIUS);
            let n = noise[(r / NOISE_BLOCK) * bw + c / NOISE_BLOCK];
            let orig = image.pixel(r, c);
            let mut px = [0f32; 3];
            for ch in 0..3 {
                let mut v = quantize_u8(smooth[ch] + n);
                if v == orig[ch] {
                    v = quantize_u8(smooth[ch] - n);
                }
                px[ch] = v;
            }
            out.set_pixel(r, c, px);
        }
    }
    Ok(out)
}

fn box_mean(image: &RgbImage, r: usize, c: usize, radius: usize) -> [f32; 3] {
    let (h, w) = image.dims();
    let (r0, r1) = (r.saturating_sub(radius), (r + radius + 1).min(h));
    let (c0, c1) = (c.saturating_sub(radius), (c + radius + 1).min(w));
    let mut acc = [0f32; 3];
    for rr in r0..r1 {
        for cc in c0..c1 {
            let p = image.pixel(rr, cc);
            for ch in 0..3 {
                acc[ch] += p[ch];
            }
        }
    }
    let n = ((r1 - r0) * (c1 - c0)) as f32;
    acc.map(|v| v / n)
}
