//! Analytic gradients against central finite differences.

use uiou::geometry::BBox;
use uiou::gradients::{analytic_grad, finite_diff_grad, gradcheck};
use uiou::{LossKind, LossSpec, Prediction, RatioSchedule, Strategy, Variant, WeightMode};

fn main() -> uiou::Result<()> {
    let spec = LossSpec::new(
        LossKind::new(Variant::SIoU),
        RatioSchedule::annealed(Strategy::Fraction),
        WeightMode::FocalInv,
    );
    let pred = Prediction::new(BBox::new(3.0, -2.0, 12.0, 9.0)?, 0.7)?;
    let gt = BBox::new(0.0, 0.0, 10.0, 10.0)?;
    let a = analytic_grad(&spec, &pred, &gt, 40)?;
    let f = finite_diff_grad(&spec, &pred, &gt, 40, 1e-5)?;
    println!("analytic {:?}", a.as_array());
    println!("finite   {:?}", f.as_array());

    println!();
    for kind in [
        LossKind::new(Variant::GIoU),
        LossKind::new(Variant::EIoU),
        LossKind::new(Variant::WIoUv1),
        LossKind::with_alpha(Variant::CIoU, 3.0)?,
    ] {
        let rep = gradcheck(&LossSpec::plain(kind), 1000, 7, 1e-4)?;
        println!(
            "{:<16} pass rate {:.3}, worst relative error {:.2e}",
            rep.kind, rep.pass_rate, rep.worst_rel_err
        );
    }
    Ok(())
}
