//! Axis-aligned boxes in center-size form, their set operations, and
//! Focal-Box scaling.
//!
//! Corner form is always derived from `(cx, cy, w, h)`, never stored. The
//! y axis grows downward, so `top <= bottom`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle parameterized by center and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Builds a box, checking that every field is finite and the size is non-negative.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box from `(left, top, right, bottom)` corners.
    pub fn from_corners(left: f64, top: f64, right: f64, bottom: f64) -> Result<Self> {
        if right < left || bottom < top {
            return Err(Error::InvalidBox(format!(
                "corners ({left}, {top}, {right}, {bottom}) are not ordered"
            )));
        }
        BBox::new(
            (left + right) / 2.0,
            (top + bottom) / 2.0,
            right - left,
            bottom - top,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.cx, self.cy, self.w, self.h];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite field in {self:?}")));
        }
        if self.w < 0.0 || self.h < 0.0 {
            return Err(Error::InvalidBox(format!(
                "negative size w = {}, h = {}",
                self.w, self.h
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    #[inline]
    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    /// `(left, top, right, bottom)`.
    pub fn corners(&self) -> [f64; 4] {
        [self.left(), self.top(), self.right(), self.bottom()]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_degenerate(&self) -> bool {
        self.w == 0.0 || self.h == 0.0
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    /// Scales the box about an arbitrary origin: both the center and the
    /// size are multiplied by `factor`.
    pub fn scaled_about(&self, origin: (f64, f64), factor: f64) -> BBox {
        BBox {
            cx: origin.0 + (self.cx - origin.0) * factor,
            cy: origin.1 + (self.cy - origin.1) * factor,
            w: self.w * factor,
            h: self.h * factor,
        }
    }
}

/// Distances from a reference pixel to the four borders of a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeDistances {
    pub xt: f64,
    pub xb: f64,
    pub xl: f64,
    pub xr: f64,
}

impl EdgeDistances {
    pub fn as_array(&self) -> [f64; 4] {
        [self.xt, self.xb, self.xl, self.xr]
    }
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

fn overlap_1d(a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> f64 {
    (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0)
}

pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    // Capping at the smaller side keeps a contained box's intersection equal
    // to its own area despite corner rounding.
    let iw = overlap_1d(a.left(), a.right(), b.left(), b.right()).min(a.w.min(b.w));
    let ih = overlap_1d(a.top(), a.bottom(), b.top(), b.bottom()).min(a.h.min(b.h));
    iw * ih
}

pub fn union_area(a: &BBox, b: &BBox) -> f64 {
    a.area() + b.area() - intersection_area(a, b)
}

/// Smallest axis-aligned box containing both inputs.
pub fn enclosing_box(a: &BBox, b: &BBox) -> BBox {
    let left = a.left().min(b.left());
    let top = a.top().min(b.top());
    let right = a.right().max(b.right());
    let bottom = a.bottom().max(b.bottom());
    BBox {
        cx: (left + right) / 2.0,
        cy: (top + bottom) / 2.0,
        w: right - left,
        h: bottom - top,
    }
}

/// Intersection over union. A zero union yields 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Focal-Box scaling: keeps the center, multiplies width and height by `ratio`.
pub fn scale_box(b: &BBox, ratio: f64) -> Result<BBox> {
    if !ratio.is_finite() || ratio <= 0.0 {
        return Err(Error::InvalidRatio(ratio));
    }
    Ok(BBox {
        w: b.w * ratio,
        h: b.h * ratio,
        ..*b
    })
}

/// Distances from `pixel` to the top, bottom, left and right borders of `b`.
pub fn edge_distances(pixel: (f64, f64), b: &BBox) -> Result<EdgeDistances> {
    let (x, y) = pixel;
    let [l, t, r, bt] = b.corners();
    if !(l..=r).contains(&x) || !(t..=bt).contains(&y) {
        return Err(Error::OutsideBox { x, y });
    }
    Ok(EdgeDistances {
        xt: y - t,
        xb: bt - y,
        xl: x - l,
        xr: r - x,
    })
}
