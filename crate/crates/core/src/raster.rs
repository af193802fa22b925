//! Dense single-channel grids and RGB images, plus the separable
//! resampling matrices used both here and by the network modules.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

/// Row-major `height × width` grid of `f32`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return shape_err(format!("grid {height}x{width} given {} values", data.len()));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.width + c] = v;
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Bilinear resize, align-corners off.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Grid {
        let rh = bilinear_matrix(height, self.height);
        let rw = bilinear_matrix(width, self.width);
        self.apply_separable(&rh, height, &rw, width)
    }

    /// Fractional area-average resampling. Each output cell is the exact
    /// area-weighted mean of the input cells it overlaps.
    pub fn resize_area(&self, height: usize, width: usize) -> Grid {
        let rh = area_matrix(height, self.height);
        let rw = area_matrix(width, self.width);
        self.apply_separable(&rh, height, &rw, width)
    }

    fn apply_separable(&self, rh: &[f64], out_h: usize, rw: &[f64], out_w: usize) -> Grid {
        let (h, w) = (self.height, self.width);
        // columns first: tmp[r][j] = sum_c x[r][c] * rw[j][c]
        let mut tmp = vec![0f64; h * out_w];
        for r in 0..h {
            for j in 0..out_w {
                let row = &rw[j * w..(j + 1) * w];
                let mut acc = 0f64;
                for (c, &k) in row.iter().enumerate() {
                    if k != 0.0 {
                        acc += k * self.data[r * w + c] as f64;
                    }
                }
                tmp[r * out_w + j] = acc;
            }
        }
        let mut out = vec![0f32; out_h * out_w];
        for i in 0..out_h {
            let row = &rh[i * h..(i + 1) * h];
            for j in 0..out_w {
                let mut acc = 0f64;
                for (r, &k) in row.iter().enumerate() {
                    if k != 0.0 {
                        acc += k * tmp[r * out_w + j];
                    }
                }
                out[i * out_w + j] = acc as f32;
            }
        }
        Grid {
            height: out_h,
            width: out_w,
            data: out,
        }
    }
}

/// Interleaved `height × width × 3` RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return shape_err(format!("image {height}x{width}x3 given {} values", data.len()));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self { height, width, data }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn pixel(&self, r: usize, c: usize) -> [f32; 3] {
        let i = (r * self.width + c) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, r: usize, c: usize, rgb: [f32; 3]) {
        let i = (r * self.width + c) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// ITU-R 601 luma.
    pub fn grayscale(&self) -> Grid {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Grid {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = quantize_u8(*v);
        }
    }
}

#[inline]
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
pub fn quantize_u8(v: f32) -> f32 {
    to_u8(v) as f32 / 255.0
}

/// Row-major `out × inp` bilinear interpolation matrix, align-corners off,
/// matching the half-pixel-center convention (no antialiasing).
pub fn bilinear_matrix(out: usize, inp: usize) -> Vec<f64> {
    let mut m = vec![0f64; out * inp];
    if inp == 0 || out == 0 {
        return m;
    }
    let scale = inp as f64 / out as f64;
    for i in 0..out {
        let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(inp - 1);
        let i1 = (i0 + 1).min(inp - 1);
        let frac = src - i0 as f64;
        m[i * inp + i0] += 1.0 - frac;
        m[i * inp + i1] += frac;
    }
    m
}

/// Row-major `out × inp` area-averaging matrix. Rows sum to one.
pub fn area_matrix(out: usize, inp: usize) -> Vec<f64> {
    let mut m = vec![0f64; out * inp];
    if inp == 0 || out == 0 {
        return m;
    }
    let scale = inp as f64 / out as f64;
    for i in 0..out {
        let lo = i as f64 * scale;
        let hi = (i + 1) as f64 * scale;
        let first = lo.floor() as usize;
        let last = (hi.ceil() as usize).min(inp);
        for j in first..last {
            let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
            m[i * inp + j] = overlap / scale;
        }
    }
    m
}
