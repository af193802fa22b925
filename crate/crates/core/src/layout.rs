//! Layout elements, boxes and the rectangle arithmetic shared by the
//! corpus generator, the matcher and the metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Graphic element category. The discriminant doubles as the class index
/// used by the generator heads; the "no-object" class is `Category::COUNT`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Logo,
    Text,
    Underlay,
    Embellishment,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Logo,
        Category::Text,
        Category::Underlay,
        Category::Embellishment,
    ];
    pub const COUNT: usize = 4;
    /// Class index of the "no-object" slot in a prediction row.
    pub const NO_OBJECT: usize = Self::COUNT;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<Self> {
        Self::ALL.get(idx).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Logo => "logo",
            Category::Text => "text",
            Category::Underlay => "underlay",
            Category::Embellishment => "embellishment",
        }
    }
}

/// Axis-aligned box in center form, every coordinate a fraction of the
/// image dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Corner form `(x0, y0, x1, y1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corners {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Corners {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn intersection(&self, other: &Corners) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        w * h
    }

    pub fn to_bbox(&self) -> BBox {
        BBox {
            cx: 0.5 * (self.x0 + self.x1),
            cy: 0.5 * (self.y0 + self.y1),
            w: self.x1 - self.x0,
            h: self.y1 - self.y0,
        }
    }
}

/// Guard used by the generalized-IoU computations.
pub const GIOU_EPS: f64 = 1e-7;

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Corners { x0, y0, x1, y1 }.to_bbox()
    }

    pub fn corners(&self) -> Corners {
        Corners {
            x0: self.cx - 0.5 * self.w,
            y0: self.cy - 0.5 * self.h,
            x1: self.cx + 0.5 * self.w,
            y1: self.cy + 0.5 * self.h,
        }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        self.corners().intersection(&other.corners())
    }

    /// Clamps the corners into the unit square.
    pub fn clamped(&self) -> BBox {
        let c = self.corners();
        BBox::from_corners(
            c.x0.clamp(0.0, 1.0),
            c.y0.clamp(0.0, 1.0),
            c.x1.clamp(0.0, 1.0),
            c.y1.clamp(0.0, 1.0),
        )
    }

    /// Whether the box satisfies the stored-element invariants.
    pub fn is_valid(&self) -> bool {
        let c = self.corners();
        let finite = [self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite());
        finite
            && self.w > 0.0
            && self.h > 0.0
            && self.w <= 1.0
            && self.h <= 1.0
            && c.x0 >= -1e-12
            && c.y0 >= -1e-12
            && c.x1 <= 1.0 + 1e-12
            && c.y1 <= 1.0 + 1e-12
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn l1(&self, other: &BBox) -> f64 {
        (self.cx - other.cx).abs()
            + (self.cy - other.cy).abs()
            + (self.w - other.w).abs()
            + (self.h - other.h).abs()
    }

    /// Generalized IoU. Zero-area unions give an IoU term of 0.
    pub fn giou(&self, other: &BBox) -> f64 {
        let a = self.corners();
        let b = other.corners();
        let inter = a.intersection(&b);
        let union = a.area() + b.area() - inter;
        let iou = inter / union.max(GIOU_EPS);
        let enclose = Corners {
            x0: a.x0.min(b.x0),
            y0: a.y0.min(b.y0),
            x1: a.x1.max(b.x1),
            y1: a.y1.max(b.y1),
        }
        .area();
        iou - (enclose - union) / enclose.max(GIOU_EPS)
    }

    /// Pixel rectangle covered by this box on an `height × width` grid.
    /// Corners are scaled and rounded half away from zero; the result is
    /// half-open and clipped to the grid.
    pub fn to_pixel_rect(&self, height: usize, width: usize) -> PixelRect {
        let c = self.corners();
        let round = |v: f64, n: usize| -> usize { (v * n as f64).round().clamp(0.0, n as f64) as usize };
        PixelRect {
            r0: round(c.y0, height),
            r1: round(c.y1, height),
            c0: round(c.x0, width),
            c1: round(c.x1, width),
        }
    }
}

/// Half-open pixel rectangle `[r0, r1) × [c0, c1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub r0: usize,
    pub r1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl PixelRect {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.r0 && r < self.r1 && c >= self.c0 && c < self.c1
    }

    pub fn is_empty(&self) -> bool {
        self.r0 >= self.r1 || self.c0 >= self.c1
    }

    pub fn pixel_count(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.r1 - self.r0) * (self.c1 - self.c0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutElement {
    pub category: Category,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl LayoutElement {
    /// Builds an element, rejecting boxes that violate the unit-square
    /// invariants.
    pub fn new(category: Category, bbox: BBox) -> Result<Self> {
        if !bbox.is_valid() {
            return Err(Error::InvalidInput(format!("box {bbox:?} outside the unit square")));
        }
        Ok(Self { category, bbox })
    }

    /// Builds an element after clamping the box into the unit square.
    /// Returns `None` when nothing of positive area is left.
    pub fn clamped(category: Category, bbox: BBox) -> Option<Self> {
        let b = bbox.clamped();
        (b.w > 0.0 && b.h > 0.0 && b.is_valid()).then_some(Self { category, bbox: b })
    }
}

/// One poster layout. Treated as a set: element order carries no meaning.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub image_id: String,
    pub elements: Vec<LayoutElement>,
}

impl Layout {
    pub fn new(image_id: impl Into<String>, elements: Vec<LayoutElement>) -> Self {
        Self {
            image_id: image_id.into(),
            elements,
        }
    }

    pub fn empty(image_id: impl Into<String>) -> Self {
        Self::new(image_id, Vec::new())
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    /// Canonical element order: by category, then `cy`, then `cx`.
    pub fn normalize(&mut self) {
        self.elements.sort_by(|a, b| {
            a.category
                .cmp(&b.category)
                .then(a.bbox.cy.total_cmp(&b.bbox.cy))
                .then(a.bbox.cx.total_cmp(&b.bbox.cx))
        });
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.elements {
            if !e.bbox.is_valid() {
                return Err(Error::InvalidInput(format!(
                    "layout {}: box {:?} outside the unit square",
                    self.image_id, e.bbox
                )));
            }
        }
        Ok(())
    }
}
