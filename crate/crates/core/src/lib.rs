//! Bounding-box regression loss laboratory.

pub mod campaign;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod gradients;
pub mod losses;
pub mod presets;
pub mod schedule;
pub mod simulator;
pub mod unified;

pub use campaign::{Format, RunConfig, RunSpec};
pub use error::{Error, Result};
pub use geometry::{BBox, EdgeDistances};
pub use gradients::{BoxGrad, GradCheckReport};
pub use losses::{LossKind, LossValue, Variant};
pub use schedule::{RatioSchedule, Strategy};
pub use unified::{LossSpec, Prediction, UnifiedValue, WeightMode, WeightTarget};
