//! Geometric box-regression losses: the four-vector ℓ2 loss, IoU, and the
//! IoU-family baselines (GIoU, DIoU, CIoU, EIoU, SIoU, WIoU v1) with the
//! α-power extension.
//!
//! Every IoU-family loss decomposes as
//!
//! ```text
//! loss = m · (1 − IoU^α) + P
//! ```
//!
//! where `m` is a multiplicative factor (1 except for WIoU) and `P` the
//! additive penalty. [`LossTerms`] carries this decomposition so callers can
//! reweight the IoU term alone.

use std::f64::consts::{FRAC_PI_4, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, BBox, EdgeDistances};

/// Shape-cost exponent θ of SIoU.
pub const SIOU_THETA: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[serde(rename = "l2")]
    L2Vector,
    #[serde(rename = "iou")]
    IoU,
    #[serde(rename = "giou")]
    GIoU,
    #[serde(rename = "diou")]
    DIoU,
    #[serde(rename = "ciou")]
    CIoU,
    #[serde(rename = "eiou")]
    EIoU,
    #[serde(rename = "siou")]
    SIoU,
    #[serde(rename = "wiou", alias = "wiouv1")]
    WIoUv1,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::L2Vector,
        Variant::IoU,
        Variant::GIoU,
        Variant::DIoU,
        Variant::CIoU,
        Variant::EIoU,
        Variant::SIoU,
        Variant::WIoUv1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::L2Vector => "l2",
            Variant::IoU => "iou",
            Variant::GIoU => "giou",
            Variant::DIoU => "diou",
            Variant::CIoU => "ciou",
            Variant::EIoU => "eiou",
            Variant::SIoU => "siou",
            Variant::WIoUv1 => "wiou",
        }
    }

    /// Variants that accept `alpha > 1`.
    pub fn supports_alpha(self) -> bool {
        matches!(
            self,
            Variant::IoU | Variant::GIoU | Variant::DIoU | Variant::CIoU
        )
    }

    /// Whether the loss contains an IoU term (everything except ℓ2).
    pub fn has_iou_term(self) -> bool {
        self != Variant::L2Vector
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = match s.to_ascii_lowercase().as_str() {
            "l2" | "l2vector" => Variant::L2Vector,
            "iou" => Variant::IoU,
            "giou" => Variant::GIoU,
            "diou" => Variant::DIoU,
            "ciou" => Variant::CIoU,
            "eiou" => Variant::EIoU,
            "siou" => Variant::SIoU,
            "wiou" | "wiouv1" => Variant::WIoUv1,
            other => {
                return Err(Error::InvalidArgument {
                    arg: "loss",
                    reason: format!(
                        "unknown loss `{other}` (expected one of l2, iou, giou, diou, ciou, eiou, siou, wiou)"
                    ),
                })
            }
        };
        Ok(v)
    }
}

/// A loss variant with its power parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossKind {
    pub variant: Variant,
    /// Power exponent; `alpha > 1` selects the α-IoU family.
    pub alpha: f64,
    /// When true the α power is applied to the penalty terms as well as the
    /// IoU term (the canonical α-IoU rule). Ignored at `alpha == 1`.
    pub power_penalties: bool,
}

impl LossKind {
    pub fn new(variant: Variant) -> Self {
        LossKind {
            variant,
            alpha: 1.0,
            power_penalties: true,
        }
    }

    pub fn with_alpha(variant: Variant, alpha: f64) -> Result<Self> {
        let kind = LossKind {
            alpha,
            ..LossKind::new(variant)
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 1.0 {
            return Err(Error::UnsupportedCombination(format!(
                "alpha must be finite and >= 1, got {}",
                self.alpha
            )));
        }
        if self.alpha != 1.0 && !self.variant.supports_alpha() {
            return Err(Error::UnsupportedCombination(format!(
                "alpha = {} is only defined for iou, giou, diou and ciou, not {}",
                self.alpha, self.variant
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        if self.alpha == 1.0 {
            self.variant.name().to_string()
        } else {
            format!("{}(alpha={})", self.variant, self.alpha)
        }
    }

    fn penalty_power(&self) -> f64 {
        if self.power_penalties {
            self.alpha
        } else {
            1.0
        }
    }
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::new(Variant::CIoU)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub loss: f64,
    pub iou: f64,
    /// The additive non-IoU part of the loss (0 for plain IoU).
    pub penalty: f64,
}

/// Factors that the original formulations exclude from differentiation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetachedFactors {
    /// CIoU trade-off coefficient `v / ((1 − IoU) + v)`.
    pub ciou_tradeoff: f64,
    /// WIoU v1 distance attention `exp(ρ² / c²)`.
    pub wiou_factor: f64,
}

/// Decomposition `loss = multiplier · (1 − iou_term) + penalty`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub variant: Variant,
    pub iou: f64,
    /// `IoU^α` (0 for ℓ2, which has no IoU term).
    pub iou_term: f64,
    pub multiplier: f64,
    pub penalty: f64,
}

impl LossTerms {
    /// Loss with the IoU term scaled by `iou_weight` (1 gives the plain loss).
    pub fn loss_with_iou_weight(&self, iou_weight: f64) -> f64 {
        self.multiplier * (1.0 - iou_weight * self.iou_term) + self.penalty
    }

    pub fn loss(&self) -> f64 {
        self.loss_with_iou_weight(1.0)
    }

    pub fn value(&self) -> LossValue {
        let loss = self.loss();
        let penalty = if self.variant.has_iou_term() {
            loss - (1.0 - self.iou_term)
        } else {
            loss
        };
        LossValue {
            loss,
            iou: self.iou,
            penalty,
        }
    }
}

/// Pairwise quantities shared by the penalty terms.
struct PairGeometry {
    iou: f64,
    union: f64,
    /// Enclosing box width and height.
    cw: f64,
    ch: f64,
    /// Center offset, prediction minus ground truth.
    dx: f64,
    dy: f64,
}

impl PairGeometry {
    fn new(pred: &BBox, gt: &BBox) -> Self {
        let enc = geometry::enclosing_box(pred, gt);
        PairGeometry {
            iou: geometry::iou(pred, gt),
            union: geometry::union_area(pred, gt),
            cw: enc.w,
            ch: enc.h,
            dx: pred.cx - gt.cx,
            dy: pred.cy - gt.cy,
        }
    }

    fn enclosure_diag_sq(&self) -> f64 {
        self.cw * self.cw + self.ch * self.ch
    }

    fn center_dist_sq(&self) -> f64 {
        self.dx * self.dx + self.dy * self.dy
    }

    /// ρ² / c², 0 when the enclosure collapses to a point.
    fn normalized_center_dist(&self) -> f64 {
        safe_div(self.center_dist_sq(), self.enclosure_diag_sq())
    }

    /// (C − U) / C.
    fn giou_penalty(&self) -> f64 {
        let c = self.cw * self.ch;
        if c > 0.0 {
            ((c - self.union) / c).max(0.0)
        } else {
            0.0
        }
    }
}

#[inline]
pub(crate) fn safe_div(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Aspect-ratio consistency term `v` of CIoU.
pub(crate) fn ciou_v(pred: &BBox, gt: &BBox) -> f64 {
    let diff = gt.w.atan2(gt.h) - pred.w.atan2(pred.h);
    4.0 / (PI * PI) * diff * diff
}

pub fn detached_factors(pred: &BBox, gt: &BBox) -> DetachedFactors {
    let g = PairGeometry::new(pred, gt);
    let v = ciou_v(pred, gt);
    DetachedFactors {
        ciou_tradeoff: safe_div(v, (1.0 - g.iou) + v),
        wiou_factor: g.normalized_center_dist().exp(),
    }
}

/// SIoU angle cost Λ = 1 − 2·sin²(arcsin(x) − π/4), where x is the sine of
/// the smaller angle between the center line and an axis.
fn siou_angle_cost(dx: f64, dy: f64) -> f64 {
    let sigma = (dx * dx + dy * dy).sqrt();
    let x = if sigma > 0.0 {
        let sin_a = dx.abs() / sigma;
        let s = if sin_a > std::f64::consts::FRAC_1_SQRT_2 {
            dy.abs() / sigma
        } else {
            sin_a
        };
        s.clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let t = (x.asin() - FRAC_PI_4).sin();
    1.0 - 2.0 * t * t
}

fn siou_penalty(pred: &BBox, gt: &BBox, g: &PairGeometry) -> f64 {
    let angle = siou_angle_cost(g.dx, g.dy);
    let gamma = 2.0 - angle;
    let rho_x = safe_div(g.dx * g.dx, g.cw * g.cw);
    let rho_y = safe_div(g.dy * g.dy, g.ch * g.ch);
    let distance = 2.0 - (-gamma * rho_x).exp() - (-gamma * rho_y).exp();
    let omega_w = safe_div((pred.w - gt.w).abs(), pred.w.max(gt.w));
    let omega_h = safe_div((pred.h - gt.h).abs(), pred.h.max(gt.h));
    let shape =
        (1.0 - (-omega_w).exp()).powf(SIOU_THETA) + (1.0 - (-omega_h).exp()).powf(SIOU_THETA);
    (distance + shape) / 2.0
}

/// Squared difference of the four border positions. Equals the ℓ2 loss on
/// edge-distance vectors for any reference pixel, since the pixel cancels.
fn edge_l2(pred: &BBox, gt: &BBox) -> f64 {
    pred.corners()
        .iter()
        .zip(gt.corners().iter())
        .map(|(p, g)| (p - g) * (p - g))
        .sum()
}

/// Squared Euclidean distance between two edge-distance vectors.
pub fn l2_vector_loss(a: &EdgeDistances, b: &EdgeDistances) -> f64 {
    a.as_array()
        .iter()
        .zip(b.as_array().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

pub fn iou(pred: &BBox, gt: &BBox) -> f64 {
    geometry::iou(pred, gt)
}

/// Term decomposition of a loss. `frozen` replaces the detached factors
/// (CIoU trade-off, WIoU attention) with fixed values; `None` computes them
/// from the pair.
pub fn loss_terms(
    kind: &LossKind,
    pred: &BBox,
    gt: &BBox,
    frozen: Option<&DetachedFactors>,
) -> Result<LossTerms> {
    kind.validate()?;
    pred.validate()?;
    gt.validate()?;

    let g = PairGeometry::new(pred, gt);
    let alpha = kind.alpha;
    let pp = kind.penalty_power();
    let mut terms = LossTerms {
        variant: kind.variant,
        iou: g.iou,
        iou_term: g.iou.powf(alpha),
        multiplier: 1.0,
        penalty: 0.0,
    };

    match kind.variant {
        Variant::L2Vector => {
            terms.iou_term = 0.0;
            terms.multiplier = 0.0;
            terms.penalty = edge_l2(pred, gt);
        }
        Variant::IoU => {}
        Variant::GIoU => terms.penalty = g.giou_penalty().powf(pp),
        Variant::DIoU => terms.penalty = g.normalized_center_dist().powf(pp),
        Variant::CIoU => {
            let v = ciou_v(pred, gt);
            let beta = match frozen {
                Some(f) => f.ciou_tradeoff,
                None => safe_div(v, (1.0 - g.iou) + v),
            };
            terms.penalty = g.normalized_center_dist().powf(pp) + (beta * v).powf(pp);
        }
        Variant::EIoU => {
            let dw = pred.w - gt.w;
            let dh = pred.h - gt.h;
            terms.penalty = g.normalized_center_dist()
                + safe_div(dw * dw, g.cw * g.cw)
                + safe_div(dh * dh, g.ch * g.ch);
        }
        Variant::SIoU => terms.penalty = siou_penalty(pred, gt, &g),
        Variant::WIoUv1 => {
            terms.multiplier = match frozen {
                Some(f) => f.wiou_factor,
                None => g.normalized_center_dist().exp(),
            };
        }
    }
    Ok(terms)
}

pub fn geometric_loss(kind: &LossKind, pred: &BBox, gt: &BBox) -> Result<LossValue> {
    Ok(loss_terms(kind, pred, gt, None)?.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn b(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox::new(cx, cy, w, h).unwrap()
    }

    fn offset_pair() -> (BBox, BBox) {
        (b(0.0, 0.0, 10.0, 10.0), b(5.0, 5.0, 10.0, 10.0))
    }

    fn loss(variant: Variant, p: &BBox, g: &BBox) -> LossValue {
        geometric_loss(&LossKind::new(variant), p, g).unwrap()
    }

    #[test]
    fn iou_worked_example() {
        let (p, g) = offset_pair();
        assert_abs_diff_eq!(iou(&p, &g), 25.0 / 175.0, epsilon = 1e-15);
        let sp = geometry::scale_box(&p, 0.5).unwrap();
        let sg = geometry::scale_box(&g, 0.5).unwrap();
        assert_eq!(iou(&sp, &sg), 0.0);
        let ep = geometry::scale_box(&p, 2.0).unwrap();
        let eg = geometry::scale_box(&g, 2.0).unwrap();
        assert_abs_diff_eq!(iou(&ep, &eg), 225.0 / 575.0, epsilon = 1e-15);
    }

    #[test]
    fn iou_loss_is_one_minus_iou() {
        let (p, g) = offset_pair();
        let v = loss(Variant::IoU, &p, &g);
        assert_eq!(v.loss, 1.0 - v.iou);
        assert_eq!(v.penalty, 0.0);
    }

    #[test]
    fn giou_example() {
        // enclosure 15x15 = 225, union 175
        let (p, g) = offset_pair();
        let v = loss(Variant::GIoU, &p, &g);
        let expected = 1.0 - (1.0 / 7.0 - 50.0 / 225.0);
        assert_abs_diff_eq!(v.loss, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(v.loss, 1.079365, epsilon = 1e-6);
    }

    #[test]
    fn ciou_example() {
        // rho^2 = 50, c^2 = 15^2 + 15^2 = 450, v = 0 for equal aspect ratios
        let (p, g) = offset_pair();
        let v = loss(Variant::CIoU, &p, &g);
        assert_abs_diff_eq!(v.loss, 1.0 - 1.0 / 7.0 + 50.0 / 450.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.loss, 0.968254, epsilon = 1e-6);
    }

    #[test]
    fn alpha_iou_example() {
        let (p, g) = offset_pair();
        let kind = LossKind::with_alpha(Variant::IoU, 3.0).unwrap();
        let v = geometric_loss(&kind, &p, &g).unwrap();
        assert_abs_diff_eq!(v.loss, 1.0 - (1.0f64 / 7.0).powi(3), epsilon = 1e-12);
        assert_abs_diff_eq!(v.loss, 0.997085, epsilon = 1e-6);
    }

    #[test]
    fn alpha_unsupported_variants() {
        for v in [
            Variant::EIoU,
            Variant::SIoU,
            Variant::WIoUv1,
            Variant::L2Vector,
        ] {
            assert!(matches!(
                LossKind::with_alpha(v, 3.0),
                Err(Error::UnsupportedCombination(_))
            ));
        }
        assert!(LossKind::with_alpha(Variant::IoU, 0.5).is_err());
        assert!(LossKind::with_alpha(Variant::CIoU, f64::NAN).is_err());
    }

    #[test]
    fn identical_boxes_zero_loss() {
        let p = b(3.0, -1.0, 7.0, 2.0);
        for v in Variant::ALL {
            assert_abs_diff_eq!(loss(v, &p, &p).loss, 0.0, epsilon = 1e-12);
        }
        let kind = LossKind::with_alpha(Variant::CIoU, 3.0).unwrap();
        assert_abs_diff_eq!(
            geometric_loss(&kind, &p, &p).unwrap().loss,
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ciou_blind_to_scale_with_same_aspect() {
        let p = b(0.0, 0.0, 4.0, 2.0);
        let g = b(0.0, 0.0, 12.0, 6.0);
        assert_eq!(ciou_v(&p, &g), 0.0);
        let ciou = loss(Variant::CIoU, &p, &g);
        let diou = loss(Variant::DIoU, &p, &g);
        assert_eq!(ciou.loss, diou.loss);
        // EIoU still sees the size mismatch
        assert!(loss(Variant::EIoU, &p, &g).penalty > 0.0);
    }

    #[test]
    fn eiou_penalty_components() {
        let p = b(1.0, 2.0, 4.0, 6.0);
        let g = b(0.0, 0.0, 6.0, 4.0);
        let enc = geometry::enclosing_box(&p, &g);
        let expected = (1.0 + 4.0) / (enc.w * enc.w + enc.h * enc.h)
            + 4.0 / (enc.w * enc.w)
            + 4.0 / (enc.h * enc.h);
        assert_abs_diff_eq!(
            loss(Variant::EIoU, &p, &g).penalty,
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn siou_angle_cost_closed_form() {
        // 1 − 2 sin²(arcsin x − π/4) reduces to 2|dx||dy| / (dx² + dy²)
        for (dx, dy) in [(1.0, 0.0), (1.0, 1.0), (3.0, -4.0), (-0.2, 5.0), (0.0, 0.0)] {
            let s: f64 = dx * dx + dy * dy;
            let expected = if s > 0.0 {
                2.0 * (dx * dy).abs() / s
            } else {
                0.0
            };
            assert_abs_diff_eq!(siou_angle_cost(dx, dy), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn siou_aligned_centers_no_nan() {
        let p = b(0.0, 0.0, 4.0, 3.0);
        let g = b(0.0, 0.0, 5.0, 5.0);
        let v = loss(Variant::SIoU, &p, &g);
        assert!(v.loss.is_finite());
        // no distance cost at equal centers; only shape cost
        let ow: f64 = 1.0 - (-0.2f64).exp();
        let oh: f64 = 1.0 - (-0.4f64).exp();
        assert_abs_diff_eq!(v.penalty, (ow.powi(4) + oh.powi(4)) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn wiou_is_attention_times_iou_loss() {
        let (p, g) = offset_pair();
        let v = loss(Variant::WIoUv1, &p, &g);
        let r = (50.0f64 / 450.0).exp();
        assert_abs_diff_eq!(v.loss, r * (1.0 - 1.0 / 7.0), epsilon = 1e-12);
    }

    #[test]
    fn l2_vector_examples() {
        let e = |a: f64, b: f64, c: f64, d: f64| EdgeDistances {
            xt: a,
            xb: b,
            xl: c,
            xr: d,
        };
        assert_eq!(
            l2_vector_loss(&e(5.0, 5.0, 5.0, 5.0), &e(5.0, 5.0, 5.0, 5.0)),
            0.0
        );
        assert_eq!(
            l2_vector_loss(&e(1.0, 0.0, 0.0, 0.0), &e(0.0, 0.0, 0.0, 0.0)),
            1.0
        );
        assert_eq!(
            l2_vector_loss(&e(3.0, 1.0, 2.0, 0.0), &e(1.0, 1.0, 0.0, 2.0)),
            12.0
        );
    }

    #[test]
    fn l2_variant_matches_edge_distance_form() {
        let p = b(1.0, 0.5, 6.0, 4.0);
        let g = b(0.0, 0.0, 5.0, 5.0);
        // any pixel inside both boxes gives the same value
        for px in [(0.0, 0.0), (1.0, 1.0), (-1.5, -1.0)] {
            let ep = geometry::edge_distances(px, &p).unwrap();
            let eg = geometry::edge_distances(px, &g).unwrap();
            let v = loss(Variant::L2Vector, &p, &g);
            assert_abs_diff_eq!(v.loss, l2_vector_loss(&ep, &eg), epsilon = 1e-12);
            assert_eq!(v.penalty, v.loss);
        }
    }

    #[test]
    fn unpowered_penalties_flag() {
        let (p, g) = offset_pair();
        let mut kind = LossKind::with_alpha(Variant::DIoU, 3.0).unwrap();
        let powered = geometric_loss(&kind, &p, &g).unwrap();
        kind.power_penalties = false;
        let plain = geometric_loss(&kind, &p, &g).unwrap();
        assert_abs_diff_eq!(powered.penalty, (50.0f64 / 450.0).powi(3), epsilon = 1e-12);
        assert_abs_diff_eq!(plain.penalty, 50.0 / 450.0, epsilon = 1e-12);
    }

    #[test]
    fn frozen_factors_reproduce_unfrozen_value() {
        let p = b(1.0, 2.0, 3.0, 7.0);
        let g = b(0.0, 0.0, 6.0, 4.0);
        let frozen = detached_factors(&p, &g);
        for v in [Variant::CIoU, Variant::WIoUv1] {
            let kind = LossKind::new(v);
            let a = loss_terms(&kind, &p, &g, None).unwrap().loss();
            let f = loss_terms(&kind, &p, &g, Some(&frozen)).unwrap().loss();
            assert_eq!(a, f);
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert!("foo".parse::<Variant>().is_err());
    }
}
