//! Boxes, anchor grids and the anchor-relative box parameterization.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// Axis-aligned box with corners `(x0, y0)` and `(x1, y1)`, `x1 > x0`, `y1 > y0`.
///
/// A pixel `(x, y)` lies inside when its center `(x + 0.5, y + 0.5)` does.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_proper(&self) -> bool {
        self.width() > 0.0
            && self.height() > 0.0
            && [self.x0, self.y0, self.x1, self.y1]
                .iter()
                .all(|v| v.is_finite())
    }

    /// Intersection with the image rectangle `[0, w) × [0, h)`.
    pub fn clip(&self, w: usize, h: usize) -> Self {
        Self::new(
            self.x0.clamp(0.0, w as f64),
            self.y0.clamp(0.0, h as f64),
            self.x1.clamp(0.0, w as f64),
            self.y1.clamp(0.0, h as f64),
        )
    }

    /// Column and row ranges of the pixels whose centers fall inside, clipped to `w × h`.
    pub fn pixel_span(
        &self,
        w: usize,
        h: usize,
    ) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let lo = |v: f64, n: usize| ((v - 0.5).ceil().max(0.0) as usize).min(n);
        (
            lo(self.x0, w)..lo(self.x1, w),
            lo(self.y0, h)..lo(self.y1, h),
        )
    }

    pub fn intersection(&self, other: &Self) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        w.max(0.0) * h.max(0.0)
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Reference box in center form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Anchor {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn bbox(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.w, self.h)
    }
}

/// Dense anchor grid over a `width × height` image.
///
/// Order: cells row-major, then scales, then ratios. A scale is the square root
/// of the anchor area; a ratio is height / width.
pub fn generate_anchors(
    stride: usize,
    scales: &[f64],
    ratios: &[f64],
    width: usize,
    height: usize,
) -> Result<Vec<Anchor>> {
    if stride == 0 || !width.is_multiple_of(stride) || !height.is_multiple_of(stride) {
        return Err(config_err!(
            "stride {stride} does not divide {width}x{height}"
        ));
    }
    if scales
        .iter()
        .chain(ratios)
        .any(|&v| !(v > 0.0) || !v.is_finite())
    {
        return Err(config_err!("anchor scales and ratios must be positive"));
    }
    let (gw, gh) = (width / stride, height / stride);
    let mut out = Vec::with_capacity(gw * gh * scales.len() * ratios.len());
    for gy in 0..gh {
        for gx in 0..gw {
            let cx = (gx as f64 + 0.5) * stride as f64;
            let cy = (gy as f64 + 0.5) * stride as f64;
            for &s in scales {
                for &r in ratios {
                    out.push(Anchor::new(cx, cy, s / r.sqrt(), s * r.sqrt()));
                }
            }
        }
    }
    Ok(out)
}

/// `(Δx / w_a, Δy / h_a, ln(w / w_a), ln(h / h_a))`.
pub fn encode_box(anchor: &Anchor, b: &BBox) -> Result<[f64; 4]> {
    if !(anchor.w > 0.0 && anchor.h > 0.0) {
        return Err(Error::Domain(format!(
            "anchor extent {}x{} is not positive",
            anchor.w, anchor.h
        )));
    }
    if !b.is_proper() {
        return Err(Error::Domain(format!("box {b:?} has non-positive extent")));
    }
    let (cx, cy) = b.center();
    Ok([
        (cx - anchor.cx) / anchor.w,
        (cy - anchor.cy) / anchor.h,
        (b.width() / anchor.w).ln(),
        (b.height() / anchor.h).ln(),
    ])
}

/// Inverse of [`encode_box`].
pub fn decode_box(anchor: &Anchor, t: &[f64; 4]) -> BBox {
    BBox::from_center(
        anchor.cx + t[0] * anchor.w,
        anchor.cy + t[1] * anchor.h,
        anchor.w * t[2].exp(),
        anchor.h * t[3].exp(),
    )
}
