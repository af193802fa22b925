//! Category-colored box outlines drawn over an image.

use serde::{Deserialize, Serialize};

use crate::layout::{Category, Layout};
use crate::raster::RgbImage;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    /// Outline color per category, indexed by `Category::index`.
    pub palette: [[u8; 3]; 4],
    pub thickness: usize,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            palette: [[230, 25, 75], [0, 130, 200], [60, 180, 75], [245, 130, 48]],
            thickness: 1,
        }
    }
}

impl RenderStyle {
    pub fn color(&self, c: Category) -> [f32; 3] {
        self.palette[c.index()].map(|v| f32::from(v) / 255.0)
    }
}

/// Copy of `image` with every element outlined. Underlays are drawn first
/// so other outlines stay visible where they cross.
pub fn render_layout(image: &RgbImage, layout: &Layout, style: &RenderStyle) -> RgbImage {
    let mut out = image.clone();
    let (h, w) = image.dims();
    let order = layout
        .elements
        .iter()
        .filter(|e| e.category == Category::Underlay)
        .chain(layout.elements.iter().filter(|e| e.category != Category::Underlay));
    for e in order {
        let r = e.bbox.to_pixel_rect(h, w);
        if r.is_empty() {
            continue;
        }
        let color = style.color(e.category);
        let t = style.thickness.max(1);
        for row in r.r0..r.r1 {
            for col in r.c0..r.c1 {
                let edge = row < r.r0 + t || row + t >= r.r1 || col < r.c0 + t || col + t >= r.c1;
                if edge {
                    out.set_pixel(row, col, color);
                }
            }
        }
    }
    out
}
