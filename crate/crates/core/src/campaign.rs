//! Multi-run simulator campaigns loaded from a JSON run config.
//!
//! ```json
//! {
//!   "runs": [
//!     {"label": "original", "loss_spec": {...}, "scenario": {...}, "optimizer": {...}}
//!   ],
//!   "output_dir": "runs/example",
//!   "formats": ["csv", "json"]
//! }
//! ```
//!
//! Each run writes `<output_dir>/<label>/report.{csv,json}`; a config with
//! more than one run also writes `<output_dir>/comparison.{csv,json}`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{self, Comparison, OptimizerConfig, RegressionReport, ScenarioConfig};
use crate::unified::LossSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidArgument {
                arg: "format",
                reason: format!("unknown format `{other}` (expected csv or json)"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub label: String,
    pub loss_spec: LossSpec,
    pub scenario: ScenarioConfig,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub runs: Vec<RunSpec>,
    pub output_dir: PathBuf,
    pub formats: Vec<Format>,
}

fn field_err(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.into(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| field_err("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(field_err("runs", "must contain at least one run"));
        }
        if self.formats.is_empty() {
            return Err(field_err("formats", "must name at least one of csv, json"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(field_err("output_dir", "must not be empty"));
        }
        let mut seen = HashSet::new();
        for (i, run) in self.runs.iter().enumerate() {
            let at = |f: &str| format!("runs[{i}].{f}");
            let ok_label = !run.label.is_empty()
                && run
                    .label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '+'))
                && run.label != "."
                && run.label != "..";
            if !ok_label {
                return Err(field_err(
                    at("label"),
                    format!("`{}` is not usable as a directory name", run.label),
                ));
            }
            if !seen.insert(run.label.as_str()) {
                return Err(field_err(
                    at("label"),
                    format!("duplicate label `{}`", run.label),
                ));
            }
            let prefixed = |e: Error| match e {
                Error::InvalidConfig { field, reason } => Error::InvalidConfig {
                    field: format!("runs[{i}].{field}"),
                    reason,
                },
                other => field_err(at("loss_spec"), other.to_string()),
            };
            run.scenario.validate().map_err(prefixed)?;
            run.optimizer.validate().map_err(prefixed)?;
            run.loss_spec.validate().map_err(prefixed)?;
        }
        let iterations = self.runs[0].optimizer.iterations;
        if self.runs.len() > 1 {
            if let Some(i) = self
                .runs
                .iter()
                .position(|r| r.optimizer.iterations != iterations)
            {
                return Err(field_err(
                    format!("runs[{i}].optimizer.iterations"),
                    "every run in a comparison needs the same iteration count",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub runs: Vec<(String, RegressionReport)>,
    /// Present when the config has more than one run.
    pub comparison: Option<Comparison>,
}

impl CampaignResult {
    pub fn report(&self, label: &str) -> Option<&RegressionReport> {
        self.runs.iter().find(|(l, _)| l == label).map(|(_, r)| r)
    }
}

pub fn run_campaign(cfg: &RunConfig) -> Result<CampaignResult> {
    cfg.validate()?;
    let mut runs = Vec::with_capacity(cfg.runs.len());
    for run in &cfg.runs {
        let scenario = simulator::generate_scenario(&run.scenario)?;
        let report = simulator::run_regression(&scenario, &run.loss_spec, &run.optimizer)?;
        runs.push((run.label.clone(), report));
    }
    let comparison = if runs.len() > 1 {
        Some(simulator::compare_runs(&runs)?)
    } else {
        None
    };
    Ok(CampaignResult { runs, comparison })
}

/// Writes every report (and the comparison table) in each requested format.
/// Returns the paths written.
pub fn write_outputs(
    result: &CampaignResult,
    dir: &Path,
    formats: &[Format],
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (label, report) in &result.runs {
        let run_dir = dir.join(label);
        fs::create_dir_all(&run_dir)?;
        for &f in formats {
            let path = run_dir.join(format!("report.{}", f.extension()));
            match f {
                Format::Csv => report.write_csv(fs::File::create(&path)?)?,
                Format::Json => fs::write(&path, serde_json::to_string_pretty(report)? + "\n")?,
            }
            written.push(path);
        }
    }
    if let Some(cmp) = &result.comparison {
        fs::create_dir_all(dir)?;
        for &f in formats {
            let path = dir.join(format!("comparison.{}", f.extension()));
            match f {
                Format::Csv => cmp.write_csv(fs::File::create(&path)?)?,
                Format::Json => fs::write(&path, serde_json::to_string_pretty(cmp)? + "\n")?,
            }
            written.push(path);
        }
    }
    Ok(written)
}
