//! The `uiou` command line.
//!
//! Every subcommand prints its result to standard output; with `--out DIR`
//! the same bytes are also written to `DIR/<command>.<ext>`. `simulate`
//! writes one directory per run instead. Exit codes: 0 success, 1 runtime or
//! numerical failure (including a failed gradient check), 2 usage or config
//! error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::campaign::{self, Format, RunConfig};
use crate::error::{Error, Result};
use crate::geometry::{self, BBox};
use crate::gradients;
use crate::losses::{LossKind, Variant};
use crate::presets;
use crate::schedule::{
    RatioSchedule, Strategy, DEFAULT_END_RATIO, DEFAULT_EPOCHS, DEFAULT_START_RATIO,
};
use crate::unified::{self, LossSpec, Prediction, WeightMode, WeightTarget};

/// Pass-rate threshold for `gradcheck`.
pub const GRADCHECK_PASS_RATE: f64 = 0.95;

#[derive(Debug, Parser)]
#[command(
    name = "uiou",
    version,
    about = "Unified-IoU bounding-box regression loss laboratory"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Output {
    /// Also write the result under this directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Output format (each command has its own default).
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Loss, IoU and weight for a single prediction / ground-truth pair.
    Compute(ComputeArgs),
    /// IoU against center offset for several scaling ratios.
    Curve(CurveArgs),
    /// Ratio table for every epoch of a schedule.
    Schedule(ScheduleArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Run a simulator campaign from a config file or a shipped preset.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Clone)]
pub struct LossArgs {
    /// Base loss: l2, iou, giou, diou, ciou, eiou, siou, wiou.
    #[arg(long, default_value = "ciou", value_parser = parse_variant)]
    pub loss: Variant,
    /// Power applied to the IoU term (and penalties, unless --no-power-penalties).
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Raise only the IoU term to alpha.
    #[arg(long)]
    pub no_power_penalties: bool,
    #[arg(long, default_value = "none", value_parser = parse_weight)]
    pub weight: WeightMode,
    #[arg(long, value_enum, default_value = "loss")]
    pub weight_applies_to: TargetArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Loss,
    Iou,
}

impl From<TargetArg> for WeightTarget {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Loss => WeightTarget::Loss,
            TargetArg::Iou => WeightTarget::Iou,
        }
    }
}

impl LossArgs {
    fn kind(&self) -> Result<LossKind> {
        let k = LossKind {
            variant: self.loss,
            alpha: self.alpha,
            power_penalties: !self.no_power_penalties,
        };
        k.validate()?;
        Ok(k)
    }

    fn spec(&self, schedule: RatioSchedule) -> Result<LossSpec> {
        let spec = LossSpec {
            base: self.kind()?,
            schedule,
            weight_mode: self.weight,
            weight_target: self.weight_applies_to.into(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args, Clone)]
pub struct ScheduleParams {
    /// Annealing strategy; without it (and without --ratio) the ratio is 1.
    #[arg(long, value_parser = parse_strategy, conflicts_with = "ratio")]
    pub schedule: Option<Strategy>,
    /// Fixed scaling ratio.
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_START_RATIO)]
    pub start: f64,
    #[arg(long, default_value_t = DEFAULT_END_RATIO)]
    pub end: f64,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: u32,
}

impl ScheduleParams {
    fn schedule(&self) -> Result<RatioSchedule> {
        let s = match (self.ratio, self.schedule) {
            (Some(r), _) => RatioSchedule {
                total_epochs: self.epochs,
                ..RatioSchedule::constant(r)
            },
            (None, Some(Strategy::Constant)) | (None, None) => RatioSchedule {
                total_epochs: self.epochs,
                ..RatioSchedule::constant(1.0)
            },
            (None, Some(st)) => RatioSchedule::new(st, self.start, self.end, self.epochs)?,
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    /// Prediction box, "cx,cy,w,h" (or "x1,y1,x2,y2" with --corners).
    #[arg(long, allow_hyphen_values = true)]
    pub pred: String,
    /// Ground-truth box, same format as --pred.
    #[arg(long, allow_hyphen_values = true)]
    pub gt: String,
    /// Read boxes as corner coordinates.
    #[arg(long)]
    pub corners: bool,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub schedule: ScheduleParams,
    #[arg(long, default_value_t = 0)]
    pub epoch: u32,
    /// Prediction confidence in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub conf: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    X,
    Y,
    /// Offset by `(d, d)`.
    Diag,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long, value_enum, default_value = "x")]
    pub axis: Axis,
    #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
    pub from: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub to: f64,
    #[arg(long, default_value_t = 201)]
    pub steps: usize,
    /// Comma-separated scaling ratios, one IoU column each.
    #[arg(long, default_value = "1,0.5,2")]
    pub ratios: String,
    /// Box template "w,h" shared by both boxes.
    #[arg(long, default_value = "10,10")]
    pub size: String,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// linear, cos, fraction or constant.
    #[arg(value_parser = parse_strategy)]
    pub strategy: Strategy,
    #[arg(long, default_value_t = DEFAULT_START_RATIO)]
    pub start: f64,
    #[arg(long, default_value_t = DEFAULT_END_RATIO)]
    pub end: f64,
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: u32,
    /// Ratio of the constant strategy.
    #[arg(long, default_value_t = 1.0)]
    pub value: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub schedule: ScheduleParams,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative-error tolerance per gradient component.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Run-config JSON file.
    #[arg(required_unless_present = "preset", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Shipped campaign: fig4-desk, ablation-desk or dense-style.
    #[arg(long)]
    pub preset: Option<String>,
    #[command(flatten)]
    pub output: Output,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

fn parse_weight(s: &str) -> std::result::Result<WeightMode, String> {
    s.parse::<WeightMode>().map_err(|e| e.to_string())
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse::<Strategy>().map_err(|e| e.to_string())
}

fn parse_reals(arg: &'static str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::InvalidArgument {
                    arg,
                    reason: format!("`{t}` is not a finite number in `{s}`"),
                })
        })
        .collect()
}

/// Parses `"cx,cy,w,h"`, or `"x1,y1,x2,y2"` when `corners` is set.
pub fn parse_box(arg: &'static str, s: &str, corners: bool) -> Result<BBox> {
    let v = parse_reals(arg, s)?;
    if v.len() != 4 {
        return Err(Error::InvalidArgument {
            arg,
            reason: format!(
                "expected 4 comma-separated numbers, got {} in `{s}`",
                v.len()
            ),
        });
    }
    let b = if corners {
        BBox::from_corners(v[0], v[1], v[2], v[3])
    } else {
        BBox::new(v[0], v[1], v[2], v[3])
    };
    b.map_err(|e| Error::InvalidArgument {
        arg,
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComputeRecord {
    pub iou: f64,
    pub scaled_iou: f64,
    pub loss: f64,
    pub penalty: f64,
    pub ratio: f64,
    pub weight: f64,
}

pub fn compute(args: &ComputeArgs) -> Result<ComputeRecord> {
    let pred = parse_box("pred", &args.pred, args.corners)?;
    let gt = parse_box("gt", &args.gt, args.corners)?;
    let spec = args.loss.spec(args.schedule.schedule()?)?;
    let pred = Prediction::new(pred, args.conf)?;
    let v = unified::unified_loss(&spec, &pred, &gt, args.epoch)?;
    Ok(ComputeRecord {
        iou: v.iou,
        scaled_iou: v.scaled_iou,
        loss: v.loss,
        penalty: v.penalty,
        ratio: v.ratio,
        weight: v.weight,
    })
}

/// One row of an IoU sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub distance: f64,
    pub iou: Vec<f64>,
}

/// IoU of two `w × h` boxes whose centers are `d` apart along `axis`, for `d`
/// sampled evenly from `from` to `to`, with both boxes scaled by each ratio.
pub fn iou_curve(
    size: (f64, f64),
    axis: Axis,
    from: f64,
    to: f64,
    steps: usize,
    ratios: &[f64],
) -> Result<Vec<CurveRow>> {
    if steps < 2 {
        return Err(Error::InvalidArgument {
            arg: "steps",
            reason: format!("need at least 2 samples, got {steps}"),
        });
    }
    if ratios.is_empty() {
        return Err(Error::InvalidArgument {
            arg: "ratios",
            reason: "need at least one ratio".into(),
        });
    }
    if !(from.is_finite() && to.is_finite()) {
        return Err(Error::InvalidArgument {
            arg: "from/to",
            reason: "sweep bounds must be finite".into(),
        });
    }
    let gt = BBox::new(0.0, 0.0, size.0, size.1)?;
    let last = (steps - 1) as f64;
    (0..steps)
        .map(|i| {
            let d = from + (to - from) * (i as f64 / last);
            let (dx, dy) = match axis {
                Axis::X => (d, 0.0),
                Axis::Y => (0.0, d),
                Axis::Diag => (d, d),
            };
            let pred = gt.translated(dx, dy);
            let iou = ratios
                .iter()
                .map(|&r| {
                    let p = geometry::scale_box(&pred, r)?;
                    let g = geometry::scale_box(&gt, r)?;
                    Ok(geometry::iou(&p, &g))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(CurveRow { distance: d, iou })
        })
        .collect()
}

fn csv_string(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn json_string<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn emit(
    stdout: &mut dyn Write,
    output: &Output,
    stem: &str,
    format: Format,
    text: &str,
) -> Result<()> {
    stdout.write_all(text.as_bytes())?;
    if let Some(path) = output_path(output, stem, format) {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, text)?;
    }
    Ok(())
}

fn format_or(output: &Output, default: Format) -> Format {
    output.format.map(Format::from).unwrap_or(default)
}

fn cmd_compute(args: &ComputeArgs, stdout: &mut dyn Write) -> Result<()> {
    let rec = compute(args)?;
    let format = format_or(&args.output, Format::Json);
    let text = match format {
        Format::Json => json_string(&rec)?,
        Format::Csv => csv_string(
            &["iou", "scaled_iou", "loss", "penalty", "ratio", "weight"].map(String::from),
            [[
                rec.iou,
                rec.scaled_iou,
                rec.loss,
                rec.penalty,
                rec.ratio,
                rec.weight,
            ]
            .map(|v| v.to_string())
            .to_vec()],
        )?,
    };
    emit(stdout, &args.output, "compute", format, &text)
}

fn cmd_curve(args: &CurveArgs, stdout: &mut dyn Write) -> Result<()> {
    let ratios = parse_reals("ratios", &args.ratios)?;
    let size = parse_reals("size", &args.size)?;
    if size.len() != 2 || size.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidArgument {
            arg: "size",
            reason: format!("expected \"w,h\" with positive sides, got `{}`", args.size),
        });
    }
    let rows = iou_curve(
        (size[0], size[1]),
        args.axis,
        args.from,
        args.to,
        args.steps,
        &ratios,
    )?;
    let format = format_or(&args.output, Format::Csv);
    let text = match format {
        Format::Csv => {
            let mut header = vec!["distance".to_string()];
            header.extend(ratios.iter().map(|r| format!("iou_ratio_{r}")));
            csv_string(
                &header,
                rows.iter().map(|row| {
                    std::iter::once(row.distance)
                        .chain(row.iou.iter().copied())
                        .map(|v| v.to_string())
                        .collect()
                }),
            )?
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Curve<'a> {
                ratios: &'a [f64],
                rows: &'a [CurveRow],
            }
            json_string(&Curve {
                ratios: &ratios,
                rows: &rows,
            })?
        }
    };
    emit(stdout, &args.output, "curve", format, &text)
}

fn cmd_schedule(args: &ScheduleArgs, stdout: &mut dyn Write) -> Result<()> {
    let sched = match args.strategy {
        Strategy::Constant => RatioSchedule {
            total_epochs: args.epochs,
            ..RatioSchedule::constant(args.value)
        },
        st => RatioSchedule::new(st, args.start, args.end, args.epochs)?,
    };
    let table = sched.table()?;
    let format = format_or(&args.output, Format::Csv);
    let text = match format {
        Format::Csv => csv_string(
            &["epoch".to_string(), "ratio".to_string()],
            table
                .iter()
                .map(|(e, r)| vec![e.to_string(), r.to_string()]),
        )?,
        Format::Json => {
            #[derive(Serialize)]
            struct Row {
                epoch: u32,
                ratio: f64,
            }
            json_string(
                &table
                    .iter()
                    .map(|&(epoch, ratio)| Row { epoch, ratio })
                    .collect::<Vec<_>>(),
            )?
        }
    };
    emit(stdout, &args.output, "schedule", format, &text)
}

/// Returns whether the pass rate met [`GRADCHECK_PASS_RATE`].
fn cmd_gradcheck(args: &GradcheckArgs, stdout: &mut dyn Write) -> Result<bool> {
    let spec = args.loss.spec(args.schedule.schedule()?)?;
    let report = gradients::gradcheck(&spec, args.trials, args.seed, args.tol)?;
    let format = format_or(&args.output, Format::Json);
    let text = match format {
        Format::Json => json_string(&report)?,
        Format::Csv => csv_string(
            &[
                "kind",
                "trials",
                "pass_rate",
                "worst_rel_err",
                "failures_listed",
            ]
            .map(String::from),
            [vec![
                report.kind.clone(),
                report.trials.to_string(),
                report.pass_rate.to_string(),
                report.worst_rel_err.to_string(),
                report.failures.len().to_string(),
            ]],
        )?,
    };
    emit(stdout, &args.output, "gradcheck", format, &text)?;
    Ok(report.pass_rate >= GRADCHECK_PASS_RATE)
}

fn load_run_config(args: &SimulateArgs) -> Result<RunConfig> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(name), _) => presets::preset(name)?,
        (None, Some(path)) => RunConfig::load(path)?,
        (None, None) => {
            return Err(Error::InvalidArgument {
                arg: "config",
                reason: "give a config file or --preset".into(),
            })
        }
    };
    if let Some(dir) = &args.output.out {
        cfg.output_dir = dir.clone();
    }
    if let Some(f) = args.output.format {
        cfg.formats = vec![f.into()];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = load_run_config(args)?;
    let result = campaign::run_campaign(&cfg)?;
    campaign::write_outputs(&result, &cfg.output_dir, &cfg.formats)?;
    let runs: Vec<String> = result
        .runs
        .iter()
        .map(|(label, r)| {
            let fin = r.final_metrics();
            let cross = r
                .first_crossing(|m| m.frac_ge_50, 0.5)
                .map_or_else(|| "-".to_string(), |i| i.to_string());
            format!(
                "{label}: half>=0.5 at {cross}, final frac>=0.9 {}, mean iou {}",
                fin.frac_ge_90, fin.mean_iou
            )
        })
        .collect();
    writeln!(
        stdout,
        "simulated {} run(s) into {}; {}",
        result.runs.len(),
        cfg.output_dir.display(),
        runs.join("; ")
    )?;
    Ok(())
}

/// Runs one parsed command. `Ok(false)` means it completed but reported a
/// failure (a gradient check below the pass rate).
pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<bool> {
    match &cli.command {
        Command::Compute(a) => cmd_compute(a, stdout).map(|_| true),
        Command::Curve(a) => cmd_curve(a, stdout).map(|_| true),
        Command::Schedule(a) => cmd_schedule(a, stdout).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a, stdout),
        Command::Simulate(a) => cmd_simulate(a, stdout).map(|_| true),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

/// File written by a non-simulate command when `--out` is given.
pub fn output_path(output: &Output, stem: &str, format: Format) -> Option<PathBuf> {
    output
        .out
        .as_deref()
        .map(|d: &Path| d.join(format!("{stem}.{}", format.extension())))
}
