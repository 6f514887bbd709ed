//! Builds a run config in code, runs it and writes the reports.

use uiou::campaign::{run_campaign, write_outputs, Format, RunConfig, RunSpec};
use uiou::simulator::{OptimizerConfig, ScenarioConfig};
use uiou::{LossKind, LossSpec, RatioSchedule, Strategy, Variant, WeightMode};

fn main() -> uiou::Result<()> {
    let scenario = ScenarioConfig::new(11, 40, 10, 0.3);
    let optimizer = OptimizerConfig {
        step_size: 1.0,
        iterations: 200,
        iterations_per_epoch: 1,
    };
    let spec = |s, w| LossSpec::new(LossKind::new(Variant::GIoU), s, w);
    let runs = vec![
        (
            "plain",
            spec(RatioSchedule::constant(1.0), WeightMode::None),
        ),
        (
            "annealed",
            spec(
                RatioSchedule::new(Strategy::Linear, 2.0, 0.5, 200)?,
                WeightMode::None,
            ),
        ),
    ];
    let cfg = RunConfig {
        runs: runs
            .into_iter()
            .map(|(label, loss_spec)| RunSpec {
                label: label.into(),
                loss_spec,
                scenario: scenario.clone(),
                optimizer,
            })
            .collect(),
        output_dir: std::env::temp_dir().join("uiou-campaign-example"),
        formats: vec![Format::Csv, Format::Json],
    };
    println!("{}", serde_json::to_string_pretty(&cfg)?);

    let res = run_campaign(&cfg)?;
    for path in write_outputs(&res, &cfg.output_dir, &cfg.formats)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
