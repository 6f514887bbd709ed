//! Focal-Box scaling: enlarging or shrinking both boxes about their own
//! centers changes the IoU the loss sees without moving anything.

use uiou::cli::{iou_curve, Axis};
use uiou::geometry::{iou, scale_box, BBox};

fn main() -> uiou::Result<()> {
    let pred = BBox::new(0.0, 0.0, 10.0, 10.0)?;
    let gt = BBox::new(5.0, 5.0, 10.0, 10.0)?;
    println!("offset (5, 5), two 10x10 boxes");
    for r in [0.5, 1.0, 2.0, 4.0] {
        let v = iou(&scale_box(&pred, r)?, &scale_box(&gt, r)?);
        println!("  ratio {r:>3}: iou {v:.6}");
    }

    println!("\nx-offset sweep, ratios 1 / 0.5 / 2");
    println!("{:>8} {:>8} {:>8} {:>8}", "offset", "r=1", "r=0.5", "r=2");
    for row in iou_curve((10.0, 10.0), Axis::X, 20.0, 0.0, 11, &[1.0, 0.5, 2.0])? {
        println!(
            "{:>8} {:>8.4} {:>8.4} {:>8.4}",
            row.distance, row.iou[0], row.iou[1], row.iou[2]
        );
    }
    Ok(())
}
