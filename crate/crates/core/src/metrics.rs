//! Layout quality metrics.
//!
//! Composition metrics measure how much of a value map the layout covers:
//! background gradient under text and underlays (`r_com`), saliency under
//! any element (`r_shm`) and product-mask coverage (`r_sub`). They are means
//! over the union of rasterized boxes, scaled by 100. Graphic metrics are
//! raw fractions: pairwise overlap (`r_ove`), valid underlays (`r_und`) and
//! mean axis misalignment (`r_ali`). `r_occ` is the non-empty fraction.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::DomainSample;
use crate::error::{Error, Result};
use crate::layout::{Category, Layout, LayoutElement};
use crate::raster::{Grid, RgbImage};

/// Fraction of a non-underlay box an underlay must cover to count as backing it.
pub const UNDERLAY_CONTAINMENT: f64 = 0.9;

const SOBEL_MAX: f32 = 4.0 * std::f32::consts::SQRT_2;

/// Sobel gradient magnitude of the grayscale image, divided by its largest
/// attainable value so it lies in `[0, 1]`. Borders replicate edge pixels.
pub fn gradient_map(image: &RgbImage) -> Grid {
    let g = image.grayscale();
    let (h, w) = g.dims();
    let at = |r: isize, c: isize| g.get(r.clamp(0, h as isize - 1) as usize, c.clamp(0, w as isize - 1) as usize);
    let mut out = Grid::zeros(h, w);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1)
                - at(r - 1, c - 1)
                - 2.0 * at(r, c - 1)
                - at(r + 1, c - 1);
            let gy = at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1)
                - at(r - 1, c - 1)
                - 2.0 * at(r - 1, c)
                - at(r - 1, c + 1);
            out.set(r as usize, c as usize, ((gx * gx + gy * gy).sqrt() / SOBEL_MAX).min(1.0));
        }
    }
    out
}

/// 100 × mean of `value_map` over the union of the rasterized boxes of
/// elements whose category is in `categories`. Empty union gives 0.
pub fn compute_occlusion(layout: &Layout, value_map: &Grid, categories: &[Category]) -> f64 {
    let (h, w) = value_map.dims();
    let mut covered = vec![false; h * w];
    for e in layout.elements.iter().filter(|e| categories.contains(&e.category)) {
        let rect = e.bbox.to_pixel_rect(h, w);
        for r in rect.r0..rect.r1 {
            covered[r * w + rect.c0..r * w + rect.c1].fill(true);
        }
    }
    let (sum, n) = covered
        .iter()
        .zip(&value_map.data)
        .filter(|(c, _)| **c)
        .fold((0.0f64, 0usize), |(s, n), (_, v)| (s + f64::from(*v), n + 1));
    if n == 0 {
        0.0
    } else {
        100.0 * sum / n as f64
    }
}

pub const COMPLEXITY_CATEGORIES: [Category; 2] = [Category::Text, Category::Underlay];

pub fn r_com(layout: &Layout, image: &RgbImage) -> f64 {
    compute_occlusion(layout, &gradient_map(image), &COMPLEXITY_CATEGORIES)
}

pub fn r_shm(layout: &Layout, saliency: &Grid) -> f64 {
    compute_occlusion(layout, saliency, &Category::ALL)
}

pub fn r_sub(layout: &Layout, product_mask: &Grid) -> f64 {
    compute_occlusion(layout, product_mask, &Category::ALL)
}

fn non_underlay(layout: &Layout) -> impl Iterator<Item = &LayoutElement> {
    layout.elements.iter().filter(|e| e.category != Category::Underlay)
}

/// Mean over unordered non-underlay pairs of intersection / smaller area.
pub fn compute_overlap(layout: &Layout) -> f64 {
    let boxes: Vec<_> = non_underlay(layout).map(|e| e.bbox).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            let smaller = boxes[i].area().min(boxes[j].area());
            if smaller > 0.0 {
                total += boxes[i].intersection(&boxes[j]) / smaller;
            }
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Fraction of underlays that cover at least 90% of some non-underlay
/// element. `None` when the layout has no underlay.
pub fn compute_underlay(layout: &Layout) -> Option<f64> {
    let underlays: Vec<_> = layout.elements.iter().filter(|e| e.category == Category::Underlay).collect();
    if underlays.is_empty() {
        return None;
    }
    let valid = underlays
        .iter()
        .filter(|u| {
            non_underlay(layout).any(|e| {
                let a = e.bbox.area();
                a > 0.0 && u.bbox.intersection(&e.bbox) / a >= UNDERLAY_CONTAINMENT
            })
        })
        .count();
    Some(valid as f64 / underlays.len() as f64)
}

fn axes(e: &LayoutElement) -> [f64; 6] {
    let c = e.bbox.corners();
    [c.x0, e.bbox.cx, c.x1, c.y0, e.bbox.cy, c.y1]
}

/// Mean over elements of the smallest distance, on any of the six edge and
/// center axes, to another element's same axis. Fewer than two elements
/// gives 0.
pub fn compute_alignment(layout: &Layout) -> f64 {
    let n = layout.len();
    if n < 2 {
        return 0.0;
    }
    let ax: Vec<[f64; 6]> = layout.elements.iter().map(axes).collect();
    let ax = &ax;
    let total: f64 = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .flat_map(|j| (0..6).map(move |k| (ax[i][k] - ax[j][k]).abs()))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / n as f64
}

pub fn compute_nonempty_ratio(layouts: &[Layout]) -> Result<f64> {
    if layouts.is_empty() {
        return Err(Error::InvalidInput("no layouts to evaluate".into()));
    }
    Ok(layouts.iter().filter(|l| !l.is_empty()).count() as f64 / layouts.len() as f64)
}

/// Corpus means. Every metric but `r_occ` averages over non-empty layouts
/// only and is `None` when there are none; `r_und` further averages only
/// over layouts that contain an underlay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r_com: Option<f64>,
    pub r_shm: Option<f64>,
    pub r_sub: Option<f64>,
    pub r_ove: Option<f64>,
    pub r_und: Option<f64>,
    pub r_ali: Option<f64>,
    pub r_occ: f64,
    pub n_layouts: usize,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn evaluate_corpus(layouts: &[Layout], samples: &[&DomainSample]) -> Result<MetricsReport> {
    if layouts.len() != samples.len() {
        return Err(Error::InvalidInput(format!(
            "{} layouts for {} samples",
            layouts.len(),
            samples.len()
        )));
    }
    let r_occ = compute_nonempty_ratio(layouts)?;
    let mut cols: [Vec<f64>; 6] = Default::default();
    for (layout, s) in layouts.iter().zip(samples) {
        if layout.is_empty() {
            continue;
        }
        cols[0].push(r_com(layout, &s.image));
        cols[1].push(r_shm(layout, &s.saliency));
        cols[2].push(r_sub(layout, &s.product_mask));
        cols[3].push(compute_overlap(layout));
        if let Some(u) = compute_underlay(layout) {
            cols[4].push(u);
        }
        cols[5].push(compute_alignment(layout));
    }
    Ok(MetricsReport {
        r_com: mean(&cols[0]),
        r_shm: mean(&cols[1]),
        r_sub: mean(&cols[2]),
        r_ove: mean(&cols[3]),
        r_und: mean(&cols[4]),
        r_ali: mean(&cols[5]),
        r_occ,
        n_layouts: layouts.len(),
    })
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        writeln!(
            f,
            "{:>9} {:>9} {:>9} | {:>9} {:>9} {:>9} | {:>9}",
            "R_com", "R_shm", "R_sub", "R_ove", "R_und", "R_ali", "R_occ"
        )?;
        write!(
            f,
            "{:>9} {:>9} {:>9} | {:>9} {:>9} {:>9} | {:>9}",
            cell(self.r_com),
            cell(self.r_shm),
            cell(self.r_sub),
            cell(self.r_ove),
            cell(self.r_und),
            cell(self.r_ali),
            format!("{:.4}", self.r_occ)
        )
    }
}
