//! Desk-scale synthetic box regression.
//!
//! A scenario is a set of ground-truth boxes, each with a population of
//! jittered anchors split into a high-quality band (IoU ≥ 0.5 by default)
//! and a low-quality band (IoU < 0.2). [`run_regression`] moves every anchor
//! by plain gradient descent on the unified loss and records IoU statistics
//! of the unscaled boxes after every step.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, BBox};
use crate::gradients::{self, BoxGrad};
use crate::unified::{LossSpec, Prediction};

/// Lower bound applied to anchor width and height after every step.
pub const MIN_SIDE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceRule {
    /// 0.5 for every anchor.
    #[default]
    ConstantHalf,
    /// `clamp(IoU, 0.01, 0.99)` of the current unscaled box, updated each iteration.
    #[serde(rename = "iou-proxy")]
    IoUProxy,
}

impl ConfidenceRule {
    fn confidence(self, iou: f64) -> f64 {
        match self {
            ConfidenceRule::ConstantHalf => 0.5,
            ConfidenceRule::IoUProxy => iou.clamp(0.01, 0.99),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_gt: usize,
    pub anchors_per_gt: usize,
    /// Fraction of anchors drawn from the high-quality band.
    pub quality_mix: f64,
    /// `(width, height)` of the synthetic scene.
    pub frame: (f64, f64),
    #[serde(default)]
    pub confidence_rule: ConfidenceRule,
    /// High-quality anchors satisfy `IoU >= high_iou_min`.
    #[serde(default = "default_high")]
    pub high_iou_min: f64,
    /// Low-quality anchors satisfy `IoU < low_iou_max`.
    #[serde(default = "default_low")]
    pub low_iou_max: f64,
    /// Ground-truth side lengths as a fraction of the frame side.
    #[serde(default = "default_gt_size")]
    pub gt_size: (f64, f64),
    /// Resampling budget per anchor before generation fails.
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

fn default_high() -> f64 {
    0.5
}
fn default_low() -> f64 {
    0.2
}
fn default_gt_size() -> (f64, f64) {
    (0.1, 0.3)
}
fn default_attempts() -> usize {
    10_000
}

fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl ScenarioConfig {
    pub fn new(seed: u64, n_gt: usize, anchors_per_gt: usize, quality_mix: f64) -> Self {
        ScenarioConfig {
            seed,
            n_gt,
            anchors_per_gt,
            quality_mix,
            frame: (100.0, 100.0),
            confidence_rule: ConfidenceRule::ConstantHalf,
            high_iou_min: default_high(),
            low_iou_max: default_low(),
            gt_size: default_gt_size(),
            max_attempts: default_attempts(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_gt == 0 {
            return Err(config_err("scenario.n_gt", "must be > 0"));
        }
        if self.anchors_per_gt == 0 {
            return Err(config_err("scenario.anchors_per_gt", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.quality_mix) {
            return Err(config_err(
                "scenario.quality_mix",
                format!("{} not in [0, 1]", self.quality_mix),
            ));
        }
        let (fw, fh) = self.frame;
        if !(fw.is_finite() && fh.is_finite() && fw > 0.0 && fh > 0.0) {
            return Err(config_err(
                "scenario.frame",
                "width and height must be finite and > 0",
            ));
        }
        let (lo, hi) = self.gt_size;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(config_err("scenario.gt_size", "need 0 < min <= max <= 1"));
        }
        if !(self.high_iou_min > 0.0 && self.high_iou_min <= 1.0) {
            return Err(config_err("scenario.high_iou_min", "must be in (0, 1]"));
        }
        if !(self.low_iou_max > 0.0 && self.low_iou_max <= 1.0) {
            return Err(config_err("scenario.low_iou_max", "must be in (0, 1]"));
        }
        if self.max_attempts == 0 {
            return Err(config_err("scenario.max_attempts", "must be > 0"));
        }
        Ok(())
    }

    pub fn total_anchors(&self) -> usize {
        self.n_gt * self.anchors_per_gt
    }

    pub fn high_quality_count(&self) -> usize {
        (self.quality_mix * self.total_anchors() as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub iterations: usize,
    /// Gradient steps per schedule epoch; the ratio at step `i` is
    /// `ratio_at(min(i / iterations_per_epoch, epochs))`.
    #[serde(alias = "epochs_mapping")]
    pub iterations_per_epoch: usize,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(config_err("optimizer.step_size", "must be finite and > 0"));
        }
        if self.iterations == 0 {
            return Err(config_err("optimizer.iterations", "must be > 0"));
        }
        if self.iterations_per_epoch == 0 {
            return Err(config_err("optimizer.iterations_per_epoch", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub gt_index: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub high_quality: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub gts: Vec<BBox>,
    pub anchors: Vec<Anchor>,
    pub confidence_rule: ConfidenceRule,
}

impl Scenario {
    pub fn anchor_iou(&self, a: &Anchor) -> f64 {
        geometry::iou(&a.bbox, &self.gts[a.gt_index])
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.anchors
            .iter()
            .map(|a| self.confidence_rule.confidence(self.anchor_iou(a)))
            .collect()
    }
}

/// Draws ground truths uniformly inside the frame and rejection-samples
/// anchors into their quality band. Anchor jitter: center offset uniform in
/// ±0.5 of the GT side, log-scale uniform in [−ln 2, ln 2] per axis.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (fw, fh) = cfg.frame;
    let (smin, smax) = cfg.gt_size;

    let gts: Vec<BBox> = (0..cfg.n_gt)
        .map(|_| {
            let w = fw * rng.gen_range(smin..=smax);
            let h = fh * rng.gen_range(smin..=smax);
            BBox {
                cx: rng.gen_range(w / 2.0..=fw - w / 2.0),
                cy: rng.gen_range(h / 2.0..=fh - h / 2.0),
                w,
                h,
            }
        })
        .collect();

    let total = cfg.total_anchors();
    let mut high = vec![false; total];
    high[..cfg.high_quality_count()].fill(true);
    high.shuffle(&mut rng);

    let ln2 = std::f64::consts::LN_2;
    let mut anchors = Vec::with_capacity(total);
    for (i, &is_high) in high.iter().enumerate() {
        let gt_index = i / cfg.anchors_per_gt;
        let gt = gts[gt_index];
        let mut accepted = None;
        for _ in 0..cfg.max_attempts {
            let cand = BBox {
                cx: gt.cx + rng.gen_range(-0.5..=0.5) * gt.w,
                cy: gt.cy + rng.gen_range(-0.5..=0.5) * gt.h,
                w: gt.w * rng.gen_range(-ln2..=ln2).exp(),
                h: gt.h * rng.gen_range(-ln2..=ln2).exp(),
            };
            let iou = geometry::iou(&cand, &gt);
            let in_band = if is_high {
                iou >= cfg.high_iou_min
            } else {
                iou < cfg.low_iou_max
            };
            if in_band {
                accepted = Some(cand);
                break;
            }
        }
        let bbox = accepted.ok_or_else(|| {
            Error::GenerationFailure(format!(
                "anchor {i} did not land in its {} band within {} attempts",
                if is_high {
                    "high-quality"
                } else {
                    "low-quality"
                },
                cfg.max_attempts
            ))
        })?;
        anchors.push(Anchor {
            gt_index,
            bbox,
            high_quality: is_high,
        });
    }

    Ok(Scenario {
        gts,
        anchors,
        confidence_rule: cfg.confidence_rule,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_iou: f64,
    pub median_iou: f64,
    pub frac_ge_50: f64,
    pub frac_ge_75: f64,
    pub frac_ge_90: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    /// One row per state, from the initial anchors to the final step.
    pub series: Vec<IterationMetrics>,
    /// Focal-Box ratio used for the loss of each row.
    pub ratios: Vec<f64>,
    pub final_ious: Vec<f64>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn metrics(iteration: usize, ious: &[f64], losses: &[f64]) -> IterationMetrics {
    let n = ious.len() as f64;
    let frac = |t: f64| ious.iter().filter(|&&v| v >= t).count() as f64 / n;
    let mut sorted = ious.to_vec();
    sorted.sort_by(f64::total_cmp);
    IterationMetrics {
        iteration,
        mean_iou: ious.iter().sum::<f64>() / n,
        median_iou: median(&sorted),
        frac_ge_50: frac(0.5),
        frac_ge_75: frac(0.75),
        frac_ge_90: frac(0.9),
        mean_loss: losses.iter().sum::<f64>() / n,
    }
}

impl RegressionReport {
    pub fn final_metrics(&self) -> &IterationMetrics {
        self.series.last().expect("report has at least one row")
    }

    /// First row at which `frac(row) >= level`.
    pub fn first_crossing(
        &self,
        frac: impl Fn(&IterationMetrics) -> f64,
        level: f64,
    ) -> Option<usize> {
        self.series
            .iter()
            .find(|m| frac(m) >= level)
            .map(|m| m.iteration)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "iteration",
            "mean_iou",
            "median_iou",
            "frac_ge_50",
            "frac_ge_75",
            "frac_ge_90",
            "mean_loss",
        ])?;
        for m in &self.series {
            w.write_record([
                m.iteration.to_string(),
                m.mean_iou.to_string(),
                m.median_iou.to_string(),
                m.frac_ge_50.to_string(),
                m.frac_ge_75.to_string(),
                m.frac_ge_90.to_string(),
                m.mean_loss.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Epoch driving the schedule at gradient step `iteration`.
pub fn epoch_for(iteration: usize, opt: &OptimizerConfig, total_epochs: u32) -> u32 {
    let e = iteration / opt.iterations_per_epoch;
    u32::try_from(e).unwrap_or(u32::MAX).min(total_epochs)
}

pub fn run_regression(
    scenario: &Scenario,
    spec: &LossSpec,
    opt: &OptimizerConfig,
) -> Result<RegressionReport> {
    spec.validate()?;
    opt.validate()?;
    if scenario.anchors.is_empty() {
        return Err(Error::Shape("scenario has no anchors".into()));
    }
    for a in &scenario.anchors {
        if a.gt_index >= scenario.gts.len() {
            return Err(Error::Shape(format!(
                "anchor refers to missing gt {}",
                a.gt_index
            )));
        }
    }

    let rule = scenario.confidence_rule;
    let total_epochs = spec.schedule.total_epochs;
    let mut boxes: Vec<BBox> = scenario.anchors.iter().map(|a| a.bbox).collect();
    let gts: Vec<BBox> = scenario
        .anchors
        .iter()
        .map(|a| scenario.gts[a.gt_index])
        .collect();

    let mut series = Vec::with_capacity(opt.iterations + 1);
    let mut ratios = Vec::with_capacity(opt.iterations + 1);

    for iteration in 0..=opt.iterations {
        let ratio = spec
            .schedule
            .ratio_at(epoch_for(iteration, opt, total_epochs))?;

        let evaluated: Vec<Result<(f64, f64, BoxGrad)>> = boxes
            .par_iter()
            .zip(gts.par_iter())
            .enumerate()
            .map(|(anchor, (b, gt))| {
                let iou = geometry::iou(b, gt);
                let pred = Prediction {
                    bbox: *b,
                    confidence: rule.confidence(iou),
                };
                let (value, grad) = gradients::value_and_grad_at_ratio(spec, &pred, gt, ratio)?;
                if !value.loss.is_finite() {
                    return Err(Error::Numerical {
                        what: "loss",
                        iteration,
                        anchor,
                    });
                }
                if !grad.is_finite() {
                    return Err(Error::Numerical {
                        what: "gradient",
                        iteration,
                        anchor,
                    });
                }
                Ok((iou, value.loss, grad))
            })
            .collect();

        let mut ious = Vec::with_capacity(boxes.len());
        let mut losses = Vec::with_capacity(boxes.len());
        let mut grads = Vec::with_capacity(boxes.len());
        for r in evaluated {
            let (iou, loss, grad) = r?;
            ious.push(iou);
            losses.push(loss);
            grads.push(grad);
        }
        series.push(metrics(iteration, &ious, &losses));
        ratios.push(ratio);
        if iteration == opt.iterations {
            return Ok(RegressionReport {
                series,
                ratios,
                final_ious: ious,
            });
        }

        let lr = opt.step_size;
        for (anchor, (b, g)) in boxes.iter_mut().zip(&grads).enumerate() {
            let next = BBox {
                cx: b.cx - lr * g.d_cx,
                cy: b.cy - lr * g.d_cy,
                w: (b.w - lr * g.d_w).max(MIN_SIDE),
                h: (b.h - lr * g.d_h).max(MIN_SIDE),
            };
            if ![next.cx, next.cy, next.w, next.h]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(Error::Numerical {
                    what: "box",
                    iteration,
                    anchor,
                });
            }
            *b = next;
        }
    }
    unreachable!("loop returns on the final iteration")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    /// First iteration with at least half of the anchors at IoU ≥ 0.5.
    pub iters_to_half_ge_50: Option<usize>,
    /// First iteration with at least half of the anchors at IoU ≥ 0.9.
    pub iters_to_half_ge_90: Option<usize>,
    pub final_mean_iou: f64,
    pub final_frac_ge_50: f64,
    pub final_frac_ge_90: f64,
    pub final_mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "label",
            "iters_to_half_ge_50",
            "iters_to_half_ge_90",
            "final_mean_iou",
            "final_frac_ge_50",
            "final_frac_ge_90",
            "final_mean_loss",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                opt(r.iters_to_half_ge_50),
                opt(r.iters_to_half_ge_90),
                r.final_mean_iou.to_string(),
                r.final_frac_ge_50.to_string(),
                r.final_frac_ge_90.to_string(),
                r.final_mean_loss.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn compare_runs(reports: &[(String, RegressionReport)]) -> Result<Comparison> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Shape("no reports to compare".into()))?;
    let len = first.1.series.len();
    let mut rows = Vec::with_capacity(reports.len());
    for (label, report) in reports {
        if report.series.len() != len {
            return Err(Error::Shape(format!(
                "run `{label}` has {} rows, expected {len}",
                report.series.len()
            )));
        }
        let fin = report.final_metrics();
        rows.push(ComparisonRow {
            label: label.clone(),
            iters_to_half_ge_50: report.first_crossing(|m| m.frac_ge_50, 0.5),
            iters_to_half_ge_90: report.first_crossing(|m| m.frac_ge_90, 0.5),
            final_mean_iou: fin.mean_iou,
            final_frac_ge_50: fin.frac_ge_50,
            final_frac_ge_90: fin.frac_ge_90,
            final_mean_loss: fin.mean_loss,
        });
    }
    Ok(Comparison { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{LossKind, Variant};
    use crate::schedule::{RatioSchedule, Strategy};
    use crate::unified::WeightMode;

    fn small_cfg(mix: f64) -> ScenarioConfig {
        ScenarioConfig::new(7, 20, 10, mix)
    }

    fn opt(iterations: usize) -> OptimizerConfig {
        OptimizerConfig {
            step_size: 2.0,
            iterations,
            iterations_per_epoch: 1,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scenario(&small_cfg(0.3)).unwrap();
        let b = generate_scenario(&small_cfg(0.3)).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn zero_mix_is_all_low_quality() {
        let s = generate_scenario(&small_cfg(0.0)).unwrap();
        assert!(s
            .anchors
            .iter()
            .all(|a| s.anchor_iou(a) < 0.2 && !a.high_quality));
    }

    #[test]
    fn band_counts_follow_mix() {
        let s = generate_scenario(&ScenarioConfig::new(11, 100, 10, 0.3)).unwrap();
        let high = s.anchors.iter().filter(|a| s.anchor_iou(a) >= 0.5).count();
        assert_eq!(high, 300);
        assert_eq!(s.anchors.iter().filter(|a| a.high_quality).count(), 300);
    }

    #[test]
    fn infeasible_band_fails() {
        let mut cfg = small_cfg(1.0);
        cfg.high_iou_min = 0.999_999;
        cfg.max_attempts = 50;
        assert!(matches!(
            generate_scenario(&cfg),
            Err(Error::GenerationFailure(_))
        ));
    }

    #[test]
    fn invalid_config_names_field() {
        let mut cfg = small_cfg(0.5);
        cfg.quality_mix = 1.5;
        match generate_scenario(&cfg) {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "scenario.quality_mix"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn series_length_and_bounds() {
        let s = generate_scenario(&small_cfg(0.5)).unwrap();
        let spec = LossSpec::plain(LossKind::new(Variant::IoU));
        let r = run_regression(&s, &spec, &opt(25)).unwrap();
        assert_eq!(r.series.len(), 26);
        assert_eq!(r.ratios.len(), 26);
        assert_eq!(r.final_ious.len(), 200);
        for m in &r.series {
            for f in [m.frac_ge_50, m.frac_ge_75, m.frac_ge_90] {
                assert!((0.0..=1.0).contains(&f));
            }
        }
    }

    #[test]
    fn overlapping_iou_descent_converges() {
        let s = generate_scenario(&small_cfg(1.0)).unwrap();
        let spec = LossSpec::plain(LossKind::new(Variant::IoU));
        let r = run_regression(&s, &spec, &opt(300)).unwrap();
        assert!(r.final_metrics().mean_iou >= 0.9, "{:?}", r.final_metrics());
    }

    fn disjoint_scenario() -> Scenario {
        let gts = vec![BBox {
            cx: 20.0,
            cy: 20.0,
            w: 10.0,
            h: 10.0,
        }];
        let anchors = [(40.0, 20.0), (20.0, 45.0), (0.0, 0.0)]
            .iter()
            .map(|&(cx, cy)| Anchor {
                gt_index: 0,
                bbox: BBox {
                    cx,
                    cy,
                    w: 8.0,
                    h: 12.0,
                },
                high_quality: false,
            })
            .collect();
        Scenario {
            gts,
            anchors,
            confidence_rule: ConfidenceRule::ConstantHalf,
        }
    }

    #[test]
    fn disjoint_iou_is_stuck() {
        let spec = LossSpec::plain(LossKind::new(Variant::IoU));
        let r = run_regression(&disjoint_scenario(), &spec, &opt(200)).unwrap();
        assert!(r.series.iter().all(|m| m.mean_iou == 0.0));
    }

    #[test]
    fn disjoint_giou_makes_progress() {
        let spec = LossSpec::plain(LossKind::new(Variant::GIoU));
        let r = run_regression(
            &disjoint_scenario(),
            &spec,
            &OptimizerConfig {
                step_size: 50.0,
                ..opt(200)
            },
        )
        .unwrap();
        assert!(r.final_metrics().mean_iou > 0.0, "{:?}", r.final_metrics());
    }

    #[test]
    fn ratio_wiring_follows_schedule() {
        let s = generate_scenario(&small_cfg(0.5)).unwrap();
        let spec = LossSpec::new(
            LossKind::new(Variant::IoU),
            RatioSchedule::annealed(Strategy::Linear),
            WeightMode::None,
        );
        let r = run_regression(&s, &spec, &opt(300)).unwrap();
        assert_eq!(r.ratios[0], 2.0);
        assert!((r.ratios[300] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn compare_rejects_mismatch() {
        let s = generate_scenario(&small_cfg(0.5)).unwrap();
        let spec = LossSpec::plain(LossKind::new(Variant::IoU));
        let a = run_regression(&s, &spec, &opt(5)).unwrap();
        let b = run_regression(&s, &spec, &opt(6)).unwrap();
        assert!(compare_runs(&[]).is_err());
        assert!(matches!(
            compare_runs(&[("a".into(), a.clone()), ("b".into(), b)]),
            Err(Error::Shape(_))
        ));
        let c = compare_runs(&[("a".into(), a.clone())]).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert_eq!(c.rows[0].final_mean_iou, a.final_metrics().mean_iou);
    }

    #[test]
    fn csv_header_is_fixed() {
        let s = generate_scenario(&small_cfg(0.5)).unwrap();
        let r = run_regression(&s, &LossSpec::plain(LossKind::new(Variant::IoU)), &opt(2)).unwrap();
        let csv = r.to_csv_string().unwrap();
        assert!(csv.starts_with(
            "iteration,mean_iou,median_iou,frac_ge_50,frac_ge_75,frac_ge_90,mean_loss\n"
        ));
        assert_eq!(csv.lines().count(), 4);
    }
}
