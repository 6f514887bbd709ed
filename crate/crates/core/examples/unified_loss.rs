//! Unified loss with an annealed ratio and confidence weighting.

use uiou::geometry::BBox;
use uiou::unified::unified_loss;
use uiou::{
    LossKind, LossSpec, Prediction, RatioSchedule, Strategy, Variant, WeightMode, WeightTarget,
};

fn main() -> uiou::Result<()> {
    let gt = BBox::new(50.0, 50.0, 30.0, 20.0)?;
    let good = Prediction::new(BBox::new(52.0, 51.0, 28.0, 21.0)?, 0.9)?;
    let poor = Prediction::new(BBox::new(62.0, 58.0, 20.0, 30.0)?, 0.2)?;

    for mode in [WeightMode::None, WeightMode::Focal, WeightMode::FocalInv] {
        let spec = LossSpec::new(
            LossKind::new(Variant::CIoU),
            RatioSchedule::annealed(Strategy::Linear),
            mode,
        );
        println!("weight {mode}");
        for epoch in [0, 150, 300] {
            let g = unified_loss(&spec, &good, &gt, epoch)?;
            let p = unified_loss(&spec, &poor, &gt, epoch)?;
            println!(
                "  epoch {epoch:>3} ratio {:.2}: good {:.5} poor {:.5} good/poor {:.4}",
                g.ratio,
                g.loss,
                p.loss,
                g.loss / p.loss
            );
        }
    }

    let on_iou = LossSpec {
        weight_target: WeightTarget::Iou,
        ..LossSpec::new(
            LossKind::new(Variant::CIoU),
            RatioSchedule::constant(1.0),
            WeightMode::FocalInv,
        )
    };
    let v = unified_loss(&on_iou, &poor, &gt, 0)?;
    println!(
        "\nfocal-inv applied to the IoU term only: loss {:.5}, penalty {:.5}",
        v.loss, v.penalty
    );
    Ok(())
}
