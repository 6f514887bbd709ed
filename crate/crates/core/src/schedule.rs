//! Annealing of the Focal-Box scaling ratio over training epochs.
//!
//! The ratio starts large (enlarged boxes, attention on low-quality
//! predictions, fast convergence) and decreases to below 1 (shrunk boxes,
//! attention on high-quality predictions). Each strategy is pinned so that
//! `ratio_at(0) == start` and `ratio_at(epochs) == end`; with the defaults
//! (2.0, 0.5, 300) they reduce to
//!
//! - linear: `-0.005·epoch + 2`
//! - cos: `0.75·cos(π·epoch/300) + 1.25`
//! - fraction: `200 / (epoch + 100)`

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_START_RATIO: f64 = 2.0;
pub const DEFAULT_END_RATIO: f64 = 0.5;
pub const DEFAULT_EPOCHS: u32 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Linear,
    #[serde(rename = "cos", alias = "cosine")]
    Cosine,
    Fraction,
    Constant,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Linear,
        Strategy::Cosine,
        Strategy::Fraction,
        Strategy::Constant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Linear => "linear",
            Strategy::Cosine => "cos",
            Strategy::Fraction => "fraction",
            Strategy::Constant => "constant",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(Strategy::Linear),
            "cos" | "cosine" => Ok(Strategy::Cosine),
            "fraction" => Ok(Strategy::Fraction),
            "constant" => Ok(Strategy::Constant),
            other => Err(Error::InvalidSchedule(format!(
                "unknown strategy `{other}` (expected one of linear, cos, fraction, constant)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioSchedule {
    pub strategy: Strategy,
    #[serde(rename = "start", default = "default_start")]
    pub start_ratio: f64,
    #[serde(rename = "end", default = "default_end")]
    pub end_ratio: f64,
    #[serde(rename = "epochs", default = "default_epochs")]
    pub total_epochs: u32,
    /// Only read by [`Strategy::Constant`].
    #[serde(rename = "value", default = "default_constant")]
    pub constant_value: f64,
}

fn default_start() -> f64 {
    DEFAULT_START_RATIO
}
fn default_end() -> f64 {
    DEFAULT_END_RATIO
}
fn default_epochs() -> u32 {
    DEFAULT_EPOCHS
}
fn default_constant() -> f64 {
    1.0
}

impl Default for RatioSchedule {
    fn default() -> Self {
        RatioSchedule::annealed(Strategy::Linear)
    }
}

impl RatioSchedule {
    /// A strategy with the default start, end and epoch budget.
    pub fn annealed(strategy: Strategy) -> Self {
        RatioSchedule {
            strategy,
            start_ratio: DEFAULT_START_RATIO,
            end_ratio: DEFAULT_END_RATIO,
            total_epochs: DEFAULT_EPOCHS,
            constant_value: 1.0,
        }
    }

    pub fn constant(value: f64) -> Self {
        RatioSchedule {
            strategy: Strategy::Constant,
            constant_value: value,
            ..RatioSchedule::annealed(Strategy::Constant)
        }
    }

    pub fn new(strategy: Strategy, start: f64, end: f64, epochs: u32) -> Result<Self> {
        let s = RatioSchedule {
            strategy,
            start_ratio: start,
            end_ratio: end,
            total_epochs: epochs,
            constant_value: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.total_epochs == 0 {
            return Err(Error::InvalidSchedule("epochs must be > 0".into()));
        }
        if self.strategy == Strategy::Constant {
            if !positive(self.constant_value) {
                return Err(Error::InvalidSchedule(format!(
                    "constant value must be finite and > 0, got {}",
                    self.constant_value
                )));
            }
            return Ok(());
        }
        if !positive(self.start_ratio) || !positive(self.end_ratio) {
            return Err(Error::InvalidSchedule(format!(
                "start and end must be finite and > 0, got {} and {}",
                self.start_ratio, self.end_ratio
            )));
        }
        if self.start_ratio < self.end_ratio {
            return Err(Error::InvalidSchedule(format!(
                "start ({}) must be >= end ({}); the ratio anneals downward",
                self.start_ratio, self.end_ratio
            )));
        }
        Ok(())
    }

    pub fn ratio_at(&self, epoch: u32) -> Result<f64> {
        self.validate()?;
        if epoch > self.total_epochs {
            return Err(Error::EpochOutOfRange {
                epoch,
                total: self.total_epochs,
            });
        }
        let (start, end) = (self.start_ratio, self.end_ratio);
        let total = f64::from(self.total_epochs);
        let e = f64::from(epoch);
        let t = e / total;
        let r = match self.strategy {
            Strategy::Constant => self.constant_value,
            _ if start == end => start,
            Strategy::Linear => start + (end - start) * t,
            Strategy::Cosine => end + (start - end) * (1.0 + (PI * t).cos()) / 2.0,
            Strategy::Fraction => {
                let b = total * end / (start - end);
                start * b / (e + b)
            }
        };
        Ok(r)
    }

    /// `(epoch, ratio)` for every epoch in `0..=total_epochs`.
    pub fn table(&self) -> Result<Vec<(u32, f64)>> {
        (0..=self.total_epochs)
            .map(|e| self.ratio_at(e).map(|r| (e, r)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn linear_defaults() {
        let s = RatioSchedule::annealed(Strategy::Linear);
        assert_eq!(s.ratio_at(0).unwrap(), 2.0);
        assert_abs_diff_eq!(s.ratio_at(300).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.ratio_at(100).unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn cosine_midpoint() {
        let s = RatioSchedule::annealed(Strategy::Cosine);
        assert_abs_diff_eq!(s.ratio_at(150).unwrap(), 1.25, epsilon = 1e-12);
        assert_eq!(s.ratio_at(0).unwrap(), 2.0);
    }

    #[test]
    fn fraction_defaults() {
        let s = RatioSchedule::annealed(Strategy::Fraction);
        assert_abs_diff_eq!(s.ratio_at(100).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.ratio_at(0).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.ratio_at(300).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn constant_any_epoch() {
        let s = RatioSchedule::constant(1.0);
        for e in [0, 17, 300] {
            assert_eq!(s.ratio_at(e).unwrap(), 1.0);
        }
    }

    #[test]
    fn out_of_range_epoch() {
        let s = RatioSchedule::default();
        assert!(matches!(
            s.ratio_at(301),
            Err(Error::EpochOutOfRange {
                epoch: 301,
                total: 300
            })
        ));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(RatioSchedule::new(Strategy::Linear, 0.5, 2.0, 300).is_err());
        assert!(RatioSchedule::new(Strategy::Linear, 2.0, 0.0, 300).is_err());
        assert!(RatioSchedule::new(Strategy::Cosine, 2.0, 0.5, 0).is_err());
        assert!(RatioSchedule::constant(0.0).validate().is_err());
        assert!("sawtooth".parse::<Strategy>().is_err());
    }

    #[test]
    fn flat_schedule_when_start_equals_end() {
        for st in [Strategy::Linear, Strategy::Cosine, Strategy::Fraction] {
            let s = RatioSchedule::new(st, 1.0, 1.0, 10).unwrap();
            assert!(s.table().unwrap().iter().all(|&(_, r)| r == 1.0));
        }
    }

    #[test]
    fn serde_names() {
        let s: RatioSchedule =
            serde_json::from_str(r#"{"strategy": "cos", "start": 2.0, "end": 0.5, "epochs": 300}"#)
                .unwrap();
        assert_eq!(s.strategy, Strategy::Cosine);
        let c: RatioSchedule =
            serde_json::from_str(r#"{"strategy": "constant", "value": 4}"#).unwrap();
        assert_eq!(c.ratio_at(10).unwrap(), 4.0);
        for st in Strategy::ALL {
            assert_eq!(st.name().parse::<Strategy>().unwrap(), st);
        }
    }
}
