//! Shipped simulator campaigns.
//!
//! - `fig4-desk`: Constant(4) against Constant(1) on a scenario with 90%
//!   low-quality anchors.
//! - `ablation-desk`: baseline, focal-box, focal-box+schedule, focal,
//!   focal-inv and full, with IoU-proxy confidences.
//! - `dense-style`: baseline, focal and focal-inv on many anchors per
//!   ground truth, with IoU-proxy confidences.
//!
//! The JSON sources live in the crate's `presets/` directory and are
//! accepted verbatim by `uiou simulate <file>`.

use crate::campaign::RunConfig;
use crate::error::{Error, Result};

const SOURCES: [(&str, &str); 3] = [
    ("fig4-desk", include_str!("../presets/fig4-desk.json")),
    (
        "ablation-desk",
        include_str!("../presets/ablation-desk.json"),
    ),
    ("dense-style", include_str!("../presets/dense-style.json")),
];

pub const NAMES: [&str; 3] = [SOURCES[0].0, SOURCES[1].0, SOURCES[2].0];

pub fn source(name: &str) -> Option<&'static str> {
    SOURCES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn preset(name: &str) -> Result<RunConfig> {
    let text = source(name).ok_or_else(|| Error::InvalidArgument {
        arg: "preset",
        reason: format!(
            "unknown preset `{name}` (expected one of {})",
            NAMES.join(", ")
        ),
    })?;
    RunConfig::from_json_str(text)
}
