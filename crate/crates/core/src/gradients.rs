//! Analytic gradients of the unified loss with respect to the unscaled
//! prediction `(cx, cy, w, h)`, a central finite-difference oracle, and a
//! seeded gradient check.
//!
//! Gradients are accumulated as 4-vectors over the scaled prediction and
//! mapped back through the Focal-Box scaling (`∂w'/∂w = ratio`). The CIoU
//! trade-off coefficient, the WIoU attention factor and the confidence
//! weight are constants under differentiation. At kinks (coincident edges,
//! the boundary of zero overlap, `|Δx| = 0` in SIoU) the derivative of the
//! non-smooth piece is taken as 0.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, BBox};
use crate::losses::{self, safe_div, DetachedFactors, LossKind, LossTerms, Variant, SIOU_THETA};
use crate::unified::{self, confidence_weight, LossSpec, Prediction, UnifiedValue, WeightTarget};

type Vec4 = [f64; 4];

const ZERO: Vec4 = [0.0; 4];
const E_CX: Vec4 = [1.0, 0.0, 0.0, 0.0];
const E_CY: Vec4 = [0.0, 1.0, 0.0, 0.0];
const E_W: Vec4 = [0.0, 0.0, 1.0, 0.0];
const E_H: Vec4 = [0.0, 0.0, 0.0, 1.0];
const D_LEFT: Vec4 = [1.0, 0.0, -0.5, 0.0];
const D_RIGHT: Vec4 = [1.0, 0.0, 0.5, 0.0];
const D_TOP: Vec4 = [0.0, 1.0, 0.0, -0.5];
const D_BOTTOM: Vec4 = [0.0, 1.0, 0.0, 0.5];

#[inline]
fn axpy(a: f64, x: Vec4, y: Vec4) -> Vec4 {
    [
        a * x[0] + y[0],
        a * x[1] + y[1],
        a * x[2] + y[2],
        a * x[3] + y[3],
    ]
}

#[inline]
fn scale(a: f64, x: Vec4) -> Vec4 {
    axpy(a, x, ZERO)
}

#[inline]
fn sub(x: Vec4, y: Vec4) -> Vec4 {
    axpy(-1.0, y, x)
}

/// Derivative of `x^p` given the derivative of `x`.
fn pow_grad(x: f64, dx: Vec4, p: f64) -> Vec4 {
    if p == 1.0 {
        dx
    } else if x > 0.0 {
        scale(p * x.powf(p - 1.0), dx)
    } else {
        ZERO
    }
}

/// Partial derivatives of the loss with respect to the prediction's
/// center-size parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxGrad {
    pub d_cx: f64,
    pub d_cy: f64,
    pub d_w: f64,
    pub d_h: f64,
}

impl BoxGrad {
    pub fn as_array(&self) -> [f64; 4] {
        [self.d_cx, self.d_cy, self.d_w, self.d_h]
    }

    fn from_array(a: Vec4) -> Self {
        BoxGrad {
            d_cx: a[0],
            d_cy: a[1],
            d_w: a[2],
            d_h: a[3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

pub const PARAM_NAMES: [&str; 4] = ["cx", "cy", "w", "h"];

/// Overlap, union and enclosure quantities of a pair with their gradients.
struct PairPartials {
    iou: f64,
    d_iou: Vec4,
    union: f64,
    d_union: Vec4,
    cw: f64,
    d_cw: Vec4,
    ch: f64,
    d_ch: Vec4,
    dx: f64,
    dy: f64,
}

/// Gradient of `min(p_hi, g_hi) − max(p_lo, g_lo)`, clamped at 0.
fn overlap_partial(
    p_lo: f64,
    p_hi: f64,
    g_lo: f64,
    g_hi: f64,
    d_lo: Vec4,
    d_hi: Vec4,
) -> (f64, Vec4) {
    let len = p_hi.min(g_hi) - p_lo.max(g_lo);
    if len <= 0.0 {
        return (0.0, ZERO);
    }
    let mut d = ZERO;
    if p_hi < g_hi {
        d = axpy(1.0, d_hi, d);
    }
    if p_lo > g_lo {
        d = axpy(-1.0, d_lo, d);
    }
    (len, d)
}

/// Gradient of `max(p_hi, g_hi) − min(p_lo, g_lo)`.
fn span_partial(p_lo: f64, p_hi: f64, g_lo: f64, g_hi: f64, d_lo: Vec4, d_hi: Vec4) -> (f64, Vec4) {
    let len = p_hi.max(g_hi) - p_lo.min(g_lo);
    let mut d = ZERO;
    if p_hi > g_hi {
        d = axpy(1.0, d_hi, d);
    }
    if p_lo < g_lo {
        d = axpy(-1.0, d_lo, d);
    }
    (len, d)
}

impl PairPartials {
    fn new(p: &BBox, g: &BBox) -> Self {
        let [pl, pt, pr, pb] = p.corners();
        let [gl, gt, gr, gb] = g.corners();
        let (iw, d_iw) = overlap_partial(pl, pr, gl, gr, D_LEFT, D_RIGHT);
        let (ih, d_ih) = overlap_partial(pt, pb, gt, gb, D_TOP, D_BOTTOM);
        let inter = iw * ih;
        let d_inter = axpy(ih, d_iw, scale(iw, d_ih));
        let d_area = [0.0, 0.0, p.h, p.w];
        let union = p.area() + g.area() - inter;
        let d_union = sub(d_area, d_inter);
        let (iou, d_iou) = if union > 0.0 {
            let iou = inter / union;
            (iou, scale(1.0 / union, axpy(-iou, d_union, d_inter)))
        } else {
            (0.0, ZERO)
        };
        let (cw, d_cw) = span_partial(pl, pr, gl, gr, D_LEFT, D_RIGHT);
        let (ch, d_ch) = span_partial(pt, pb, gt, gb, D_TOP, D_BOTTOM);
        PairPartials {
            iou,
            d_iou,
            union,
            d_union,
            cw,
            d_cw,
            ch,
            d_ch,
            dx: p.cx - g.cx,
            dy: p.cy - g.cy,
        }
    }

    /// ρ²/c² and its gradient.
    fn center_dist(&self) -> (f64, Vec4) {
        let c2 = self.cw * self.cw + self.ch * self.ch;
        if c2 <= 0.0 {
            return (0.0, ZERO);
        }
        let rho2 = self.dx * self.dx + self.dy * self.dy;
        let n = rho2 / c2;
        let d_rho2 = [2.0 * self.dx, 2.0 * self.dy, 0.0, 0.0];
        let d_c2 = axpy(2.0 * self.cw, self.d_cw, scale(2.0 * self.ch, self.d_ch));
        (n, scale(1.0 / c2, axpy(-n, d_c2, d_rho2)))
    }

    /// (C − U)/C and its gradient.
    fn giou_penalty(&self) -> (f64, Vec4) {
        let c = self.cw * self.ch;
        if c <= 0.0 {
            return (0.0, ZERO);
        }
        let d_c = axpy(self.ch, self.d_cw, scale(self.cw, self.d_ch));
        let g = (c - self.union) / c;
        if g <= 0.0 {
            return (0.0, ZERO);
        }
        (
            g,
            scale(
                1.0 / (c * c),
                axpy(self.union, d_c, scale(-c, self.d_union)),
            ),
        )
    }

    /// `x² / span²` for a size or offset difference along one axis.
    fn normalized_sq(x: f64, d_x: Vec4, span: f64, d_span: Vec4) -> (f64, Vec4) {
        if span <= 0.0 {
            return (0.0, ZERO);
        }
        let q = x * x / (span * span);
        let d = axpy(2.0 * x / (span * span), d_x, scale(-2.0 * q / span, d_span));
        (q, d)
    }
}

fn sign_or_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn siou_penalty_grad(p: &BBox, g: &BBox, pp: &PairPartials) -> (f64, Vec4) {
    // angle cost in closed form: Λ = 2ab / (a² + b²), a = |Δx|, b = |Δy|
    let (a, b) = (pp.dx.abs(), pp.dy.abs());
    let s = a * a + b * b;
    let (angle, d_angle) = if s > 0.0 {
        let da = 2.0 * b * (b * b - a * a) / (s * s);
        let db = 2.0 * a * (a * a - b * b) / (s * s);
        (
            2.0 * a * b / s,
            axpy(
                da * sign_or_zero(pp.dx),
                E_CX,
                scale(db * sign_or_zero(pp.dy), E_CY),
            ),
        )
    } else {
        (0.0, ZERO)
    };
    let gamma = 2.0 - angle;
    let d_gamma = scale(-1.0, d_angle);

    let (rho_x, d_rho_x) = PairPartials::normalized_sq(pp.dx, E_CX, pp.cw, pp.d_cw);
    let (rho_y, d_rho_y) = PairPartials::normalized_sq(pp.dy, E_CY, pp.ch, pp.d_ch);
    let ex = (-gamma * rho_x).exp();
    let ey = (-gamma * rho_y).exp();
    let distance = 2.0 - ex - ey;
    let d_distance = axpy(
        ex,
        axpy(rho_x, d_gamma, scale(gamma, d_rho_x)),
        scale(ey, axpy(rho_y, d_gamma, scale(gamma, d_rho_y))),
    );

    let omega = |pv: f64, gv: f64, e: Vec4| -> (f64, Vec4) {
        if pv > gv {
            ((pv - gv) / pv, scale(gv / (pv * pv), e))
        } else if pv < gv {
            ((gv - pv) / gv, scale(-1.0 / gv, e))
        } else {
            (0.0, ZERO)
        }
    };
    let shape_term = |(w, dw): (f64, Vec4)| -> (f64, Vec4) {
        let q = 1.0 - (-w).exp();
        (
            q.powf(SIOU_THETA),
            scale(SIOU_THETA * q.powf(SIOU_THETA - 1.0) * (-w).exp(), dw),
        )
    };
    let (sw, d_sw) = shape_term(omega(p.w, g.w, E_W));
    let (sh, d_sh) = shape_term(omega(p.h, g.h, E_H));

    let value = (distance + sw + sh) / 2.0;
    let grad = scale(0.5, axpy(1.0, d_distance, axpy(1.0, d_sw, d_sh)));
    (value, grad)
}

/// Loss terms of a scaled pair with the gradients of `iou_term` and `penalty`.
struct TermGrads {
    terms: LossTerms,
    d_iou_term: Vec4,
    d_penalty: Vec4,
}

fn term_grads(kind: &LossKind, p: &BBox, g: &BBox, frozen: &DetachedFactors) -> Result<TermGrads> {
    let terms = losses::loss_terms(kind, p, g, Some(frozen))?;
    let pp = PairPartials::new(p, g);
    let alpha = kind.alpha;
    let pw = if kind.power_penalties { alpha } else { 1.0 };
    let mut d_iou_term = pow_grad(pp.iou, pp.d_iou, alpha);
    let d_penalty = match kind.variant {
        Variant::L2Vector => {
            d_iou_term = ZERO;
            p.corners()
                .iter()
                .zip(g.corners())
                .zip([D_LEFT, D_TOP, D_RIGHT, D_BOTTOM])
                .fold(ZERO, |acc, ((pc, gc), d)| axpy(2.0 * (pc - gc), d, acc))
        }
        Variant::IoU | Variant::WIoUv1 => ZERO,
        Variant::GIoU => {
            let (gp, d_gp) = pp.giou_penalty();
            pow_grad(gp, d_gp, pw)
        }
        Variant::DIoU => {
            let (n, d_n) = pp.center_dist();
            pow_grad(n, d_n, pw)
        }
        Variant::CIoU => {
            let (n, d_n) = pp.center_dist();
            let beta = frozen.ciou_tradeoff;
            let tp = p.w.atan2(p.h);
            let tg = g.w.atan2(g.h);
            let r2 = p.w * p.w + p.h * p.h;
            let d_tp = [0.0, 0.0, safe_div(p.h, r2), -safe_div(p.w, r2)];
            let v = 4.0 / (PI * PI) * (tg - tp) * (tg - tp);
            let d_v = scale(-8.0 / (PI * PI) * (tg - tp), d_tp);
            axpy(
                1.0,
                pow_grad(n, d_n, pw),
                pow_grad(beta * v, scale(beta, d_v), pw),
            )
        }
        Variant::EIoU => {
            let (_, d_n) = pp.center_dist();
            let (_, d_ew) = PairPartials::normalized_sq(p.w - g.w, E_W, pp.cw, pp.d_cw);
            let (_, d_eh) = PairPartials::normalized_sq(p.h - g.h, E_H, pp.ch, pp.d_ch);
            axpy(1.0, d_n, axpy(1.0, d_ew, d_eh))
        }
        Variant::SIoU => siou_penalty_grad(p, g, &pp).1,
    };
    Ok(TermGrads {
        terms,
        d_iou_term,
        d_penalty,
    })
}

/// Loss value and analytic gradient at an explicit ratio.
pub fn value_and_grad_at_ratio(
    spec: &LossSpec,
    pred: &Prediction,
    gt: &BBox,
    ratio: f64,
) -> Result<(UnifiedValue, BoxGrad)> {
    let b = &pred.bbox;
    if !(b.w > 0.0 && b.h > 0.0) {
        return Err(Error::DegenerateBox { w: b.w, h: b.h });
    }
    let weight = confidence_weight(pred.confidence, spec.weight_mode)?;
    let sp = geometry::scale_box(b, ratio)?;
    let sg = geometry::scale_box(gt, ratio)?;
    let frozen = losses::detached_factors(&sp, &sg);
    let tg = term_grads(&spec.base, &sp, &sg, &frozen)?;
    let m = tg.terms.multiplier;

    let (loss, penalty) = unified::weighted_loss(&tg.terms, weight, spec.weight_target);
    let chain = |g: [f64; 4]| [g[0], g[1], g[2] * ratio, g[3] * ratio];
    // Weighting the loss is applied last so the weighted gradient is
    // exactly `weight` times the unweighted one.
    let grad = match spec.weight_target {
        WeightTarget::Iou if spec.base.variant.has_iou_term() => {
            chain(axpy(-m * weight, tg.d_iou_term, tg.d_penalty))
        }
        _ => scale(weight, chain(axpy(-m, tg.d_iou_term, tg.d_penalty))),
    };
    let value = UnifiedValue {
        loss,
        scaled_iou: tg.terms.iou,
        penalty,
        iou: geometry::iou(b, gt),
        ratio,
        weight,
    };
    Ok((value, BoxGrad::from_array(grad)))
}

pub fn analytic_grad(spec: &LossSpec, pred: &Prediction, gt: &BBox, epoch: u32) -> Result<BoxGrad> {
    spec.validate()?;
    let ratio = spec.schedule.ratio_at(epoch)?;
    Ok(value_and_grad_at_ratio(spec, pred, gt, ratio)?.1)
}

/// Central differences `(f(x + h) − f(x − h)) / 2h` per parameter. Detached
/// factors are frozen at their values for the unperturbed pair, so the
/// oracle differentiates the same surrogate as the analytic path.
pub fn finite_diff_grad(
    spec: &LossSpec,
    pred: &Prediction,
    gt: &BBox,
    epoch: u32,
    step: f64,
) -> Result<BoxGrad> {
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::InvalidArgument {
            arg: "step",
            reason: format!("must be finite and > 0, got {step}"),
        });
    }
    spec.validate()?;
    let ratio = spec.schedule.ratio_at(epoch)?;
    let frozen = losses::detached_factors(
        &geometry::scale_box(&pred.bbox, ratio)?,
        &geometry::scale_box(gt, ratio)?,
    );
    let f = |b: BBox| -> Result<f64> {
        let p = Prediction { bbox: b, ..*pred };
        Ok(unified::loss_at_ratio(spec, &p, gt, ratio, Some(&frozen))?.loss)
    };
    let base = pred.bbox;
    let mut out = ZERO;
    for (i, slot) in out.iter_mut().enumerate() {
        let nudge = |sign: f64| {
            let mut b = base;
            match i {
                0 => b.cx += sign * step,
                1 => b.cy += sign * step,
                2 => b.w += sign * step,
                _ => b.h += sign * step,
            }
            b
        };
        *slot = (f(nudge(1.0))? - f(nudge(-1.0))?) / (2.0 * step);
    }
    Ok(BoxGrad::from_array(out))
}

/// Floor on the denominator of the relative error, so that two near-zero
/// gradients compare by absolute difference.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub seed: u64,
    pub tol: f64,
    /// Finite-difference step as a fraction of the prediction's mean side.
    pub rel_step: f64,
    /// Maximum number of failing configurations kept in the report.
    pub max_failures: usize,
}

impl GradCheckConfig {
    pub fn new(trials: usize, seed: u64, tol: f64) -> Self {
        GradCheckConfig {
            trials,
            seed,
            tol,
            rel_step: 1e-5,
            max_failures: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradFailure {
    pub pred: BBox,
    pub gt: BBox,
    pub param: String,
    pub analytic: f64,
    pub fd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub kind: String,
    pub trials: usize,
    pub pass_rate: f64,
    pub worst_rel_err: f64,
    pub failures: Vec<GradFailure>,
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    pred: Prediction,
    gt: BBox,
    epoch: u32,
    step: f64,
}

fn sample_pair(rng: &mut ChaCha8Rng) -> (BBox, BBox) {
    let gt = BBox {
        cx: rng.gen_range(-50.0..50.0),
        cy: rng.gen_range(-50.0..50.0),
        w: rng.gen_range(4.0..40.0),
        h: rng.gen_range(4.0..40.0),
    };
    let pred = BBox {
        cx: gt.cx + rng.gen_range(-0.6..0.6) * gt.w,
        cy: gt.cy + rng.gen_range(-0.6..0.6) * gt.h,
        w: gt.w * rng.gen_range(-0.7f64..0.7).exp(),
        h: gt.h * rng.gen_range(-0.7f64..0.7).exp(),
    };
    (pred, gt)
}

/// Smallest distance (in scaled units) from the pair to any surface where
/// one of the piecewise terms switches branch.
fn kink_distance(p: &BBox, g: &BBox) -> f64 {
    let [pl, pt, pr, pb] = p.corners();
    let [gl, gt, gr, gb] = g.corners();
    [
        pl - gl,
        pr - gr,
        pt - gt,
        pb - gb,
        pr - gl,
        pl - gr,
        pb - gt,
        pt - gb,
        p.cx - g.cx,
        p.cy - g.cy,
        p.w - g.w,
        p.h - g.h,
    ]
    .iter()
    .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

fn draw_samples(spec: &LossSpec, cfg: &GradCheckConfig) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.trials);
    let max_attempts = cfg.trials.saturating_mul(100).max(1000);
    let mut attempts = 0;
    while out.len() < cfg.trials {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::GenerationFailure(format!(
                "only {} smooth configurations found in {max_attempts} draws",
                out.len()
            )));
        }
        let (bbox, gt) = sample_pair(&mut rng);
        let confidence = rng.gen_range(0.02..0.98);
        let epoch = rng.gen_range(0..=spec.schedule.total_epochs);
        let ratio = spec.schedule.ratio_at(epoch)?;
        let step = cfg.rel_step * (bbox.w + bbox.h) / 2.0;
        let sp = geometry::scale_box(&bbox, ratio)?;
        let sg = geometry::scale_box(&gt, ratio)?;
        if kink_distance(&sp, &sg) < 10.0 * step * ratio.max(1.0) {
            continue;
        }
        out.push(Sample {
            pred: Prediction { bbox, confidence },
            gt,
            epoch,
            step,
        });
    }
    Ok(out)
}

/// `(parameter index, analytic, finite difference, relative error)`.
type Component = (usize, f64, f64, f64);

/// Compares analytic and finite-difference gradients on `trials` seeded
/// smooth configurations. A trial passes when all four components agree
/// within `tol` relative error.
pub fn gradcheck_with(spec: &LossSpec, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument {
            arg: "trials",
            reason: "must be > 0".into(),
        });
    }
    if !(cfg.tol.is_finite() && cfg.tol > 0.0) {
        return Err(Error::InvalidArgument {
            arg: "tol",
            reason: format!("must be finite and > 0, got {}", cfg.tol),
        });
    }
    spec.validate()?;
    let samples = draw_samples(spec, cfg)?;

    let results: Vec<Result<Vec<Component>>> = samples
        .par_iter()
        .map(|s| {
            let a = analytic_grad(spec, &s.pred, &s.gt, s.epoch)?.as_array();
            let f = finite_diff_grad(spec, &s.pred, &s.gt, s.epoch, s.step)?.as_array();
            Ok((0..4)
                .map(|i| (i, a[i], f[i], relative_error(a[i], f[i])))
                .collect())
        })
        .collect();

    let mut passed = 0usize;
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (s, r) in samples.iter().zip(results) {
        let comps = r?;
        let mut ok = true;
        for (i, a, f, err) in comps {
            worst = worst.max(err);
            if err.is_nan() || err > cfg.tol {
                ok = false;
                if failures.len() < cfg.max_failures {
                    failures.push(GradFailure {
                        pred: s.pred.bbox,
                        gt: s.gt,
                        param: PARAM_NAMES[i].to_string(),
                        analytic: a,
                        fd: f,
                    });
                }
            }
        }
        if ok {
            passed += 1;
        }
    }

    Ok(GradCheckReport {
        kind: spec.base.label(),
        trials: cfg.trials,
        pass_rate: passed as f64 / cfg.trials as f64,
        worst_rel_err: worst,
        failures,
    })
}

pub fn gradcheck(spec: &LossSpec, trials: usize, seed: u64, tol: f64) -> Result<GradCheckReport> {
    gradcheck_with(spec, &GradCheckConfig::new(trials, seed, tol))
}
