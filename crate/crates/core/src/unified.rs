//! Unified-IoU: Focal-Box scaling of both boxes by the scheduled ratio, a
//! pluggable base loss, and confidence weighting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, BBox};
use crate::losses::{self, DetachedFactors, LossKind, LossTerms, Variant};
use crate::schedule::RatioSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum WeightMode {
    #[default]
    #[serde(rename = "none")]
    None,
    /// Weight `1 − conf`: emphasizes hard, low-confidence predictions.
    #[serde(rename = "focal")]
    Focal,
    /// Weight `conf`: emphasizes easy, high-confidence predictions.
    #[serde(rename = "focal-inv", alias = "focal_inv")]
    FocalInv,
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightMode::None => "none",
            WeightMode::Focal => "focal",
            WeightMode::FocalInv => "focal-inv",
        }
    }
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(WeightMode::None),
            "focal" => Ok(WeightMode::Focal),
            "focal-inv" | "focal_inv" | "focalinv" => Ok(WeightMode::FocalInv),
            other => Err(Error::InvalidArgument {
                arg: "weight",
                reason: format!("unknown weight mode `{other}` (expected none, focal, focal-inv)"),
            }),
        }
    }
}

/// What the confidence weight multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightTarget {
    /// `weight · loss`; keeps zero loss at perfect overlap.
    #[default]
    Loss,
    /// Only the IoU term: `m · (1 − weight · IoU^α) + P`. For ℓ2, which has
    /// no IoU term, the weight falls back to the whole loss.
    Iou,
}

/// Full UIoU configuration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "LossSpecRepr", into = "LossSpecRepr")]
pub struct LossSpec {
    pub base: LossKind,
    pub schedule: RatioSchedule,
    pub weight_mode: WeightMode,
    pub weight_target: WeightTarget,
}

/// JSON shape of [`LossSpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LossSpecRepr {
    #[serde(default = "default_base")]
    base: Variant,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_true")]
    power_penalties: bool,
    #[serde(default)]
    schedule: RatioSchedule,
    #[serde(default)]
    weight: WeightMode,
    #[serde(default)]
    weight_applies_to: WeightTarget,
}

fn default_base() -> Variant {
    Variant::CIoU
}
fn default_alpha() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

impl TryFrom<LossSpecRepr> for LossSpec {
    type Error = Error;

    fn try_from(r: LossSpecRepr) -> Result<Self> {
        let spec = LossSpec {
            base: LossKind {
                variant: r.base,
                alpha: r.alpha,
                power_penalties: r.power_penalties,
            },
            schedule: r.schedule,
            weight_mode: r.weight,
            weight_target: r.weight_applies_to,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<LossSpec> for LossSpecRepr {
    fn from(s: LossSpec) -> Self {
        LossSpecRepr {
            base: s.base.variant,
            alpha: s.base.alpha,
            power_penalties: s.base.power_penalties,
            schedule: s.schedule,
            weight: s.weight_mode,
            weight_applies_to: s.weight_target,
        }
    }
}

impl LossSpec {
    pub fn new(base: LossKind, schedule: RatioSchedule, weight_mode: WeightMode) -> Self {
        LossSpec {
            base,
            schedule,
            weight_mode,
            weight_target: WeightTarget::Loss,
        }
    }

    /// A plain geometric loss: constant ratio 1, no weighting.
    pub fn plain(base: LossKind) -> Self {
        LossSpec::new(base, RatioSchedule::constant(1.0), WeightMode::None)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub confidence: f64,
}

impl Prediction {
    pub fn new(bbox: BBox, confidence: f64) -> Result<Self> {
        check_confidence(confidence)?;
        Ok(Prediction { bbox, confidence })
    }
}

fn check_confidence(conf: f64) -> Result<()> {
    if (0.0..=1.0).contains(&conf) {
        Ok(())
    } else {
        Err(Error::InvalidConfidence(conf))
    }
}

pub fn confidence_weight(conf: f64, mode: WeightMode) -> Result<f64> {
    check_confidence(conf)?;
    Ok(match mode {
        WeightMode::None => 1.0,
        WeightMode::Focal => 1.0 - conf,
        WeightMode::FocalInv => conf,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnifiedValue {
    pub loss: f64,
    /// IoU of the scaled pair, as seen by the base loss.
    pub scaled_iou: f64,
    /// Additive non-IoU part of `loss`.
    pub penalty: f64,
    /// IoU of the original pair.
    pub iou: f64,
    pub ratio: f64,
    pub weight: f64,
}

/// Combines base-loss terms with a confidence weight.
pub(crate) fn weighted_loss(terms: &LossTerms, weight: f64, target: WeightTarget) -> (f64, f64) {
    match target {
        WeightTarget::Iou if terms.variant.has_iou_term() => {
            let loss = terms.loss_with_iou_weight(weight);
            (loss, loss - (1.0 - weight * terms.iou_term))
        }
        _ => {
            let base = terms.value();
            (weight * base.loss, weight * base.penalty)
        }
    }
}

/// Loss at an explicit ratio, with optional detached factors held fixed.
pub fn loss_at_ratio(
    spec: &LossSpec,
    pred: &Prediction,
    gt: &BBox,
    ratio: f64,
    frozen: Option<&DetachedFactors>,
) -> Result<UnifiedValue> {
    let weight = confidence_weight(pred.confidence, spec.weight_mode)?;
    let sp = geometry::scale_box(&pred.bbox, ratio)?;
    let sg = geometry::scale_box(gt, ratio)?;
    let terms = losses::loss_terms(&spec.base, &sp, &sg, frozen)?;
    let (loss, penalty) = weighted_loss(&terms, weight, spec.weight_target);
    Ok(UnifiedValue {
        loss,
        scaled_iou: terms.iou,
        penalty,
        iou: geometry::iou(&pred.bbox, gt),
        ratio,
        weight,
    })
}

pub fn unified_loss(
    spec: &LossSpec,
    pred: &Prediction,
    gt: &BBox,
    epoch: u32,
) -> Result<UnifiedValue> {
    spec.validate()?;
    let ratio = spec.schedule.ratio_at(epoch)?;
    loss_at_ratio(spec, pred, gt, ratio, None)
}
