//! The ablation rows and the dense-style focal / focal-inv contrast.

use uiou::campaign::run_campaign;
use uiou::presets::preset;

fn main() -> uiou::Result<()> {
    for name in ["ablation-desk", "dense-style"] {
        let res = run_campaign(&preset(name)?)?;
        println!("{name}");
        println!(
            "  {:<20} {:>10} {:>10} {:>10} {:>8}",
            "run", "frac>=0.5", "frac>=0.9", "mean IoU", "t(0.5)"
        );
        for row in &res.comparison.expect("several runs").rows {
            println!(
                "  {:<20} {:>10.3} {:>10.3} {:>10.4} {:>8}",
                row.label,
                row.final_frac_ge_50,
                row.final_frac_ge_90,
                row.final_mean_iou,
                row.iters_to_half_ge_50
                    .map_or("-".into(), |i| i.to_string())
            );
        }
    }
    Ok(())
}
