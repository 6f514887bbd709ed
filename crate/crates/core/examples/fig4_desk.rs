//! Constant(4) against Constant(1) on a scenario dominated by low-quality
//! anchors, printed as a coarse convergence table.

use uiou::campaign::run_campaign;
use uiou::presets::preset;

fn main() -> uiou::Result<()> {
    let cfg = preset("fig4-desk")?;
    let res = run_campaign(&cfg)?;
    let labels: Vec<&str> = res.runs.iter().map(|(l, _)| l.as_str()).collect();

    print!("{:>6}", "iter");
    for l in &labels {
        print!(" {:>20}", format!("{l} frac>=0.5"));
    }
    println!();
    let n = res.runs[0].1.series.len();
    for i in (0..n).step_by(50) {
        print!("{i:>6}");
        for (_, r) in &res.runs {
            print!(" {:>20.3}", r.series[i].frac_ge_50);
        }
        println!();
    }

    if let Some(cmp) = &res.comparison {
        println!();
        for row in &cmp.rows {
            println!(
                "{:<10} half>=0.5 at {:?}, half>=0.9 at {:?}, final mean IoU {:.4}",
                row.label, row.iters_to_half_ge_50, row.iters_to_half_ge_90, row.final_mean_iou
            );
        }
    }
    Ok(())
}
