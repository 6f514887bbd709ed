//! Every base loss on a few prediction / ground-truth pairs.

use uiou::geometry::BBox;
use uiou::losses::geometric_loss;
use uiou::{LossKind, Variant};

fn main() -> uiou::Result<()> {
    let gt = BBox::new(0.0, 0.0, 20.0, 10.0)?;
    let pairs = [
        ("shifted", BBox::new(4.0, 2.0, 20.0, 10.0)?),
        ("too tall", BBox::new(0.0, 0.0, 20.0, 16.0)?),
        ("disjoint", BBox::new(30.0, 0.0, 20.0, 10.0)?),
        ("same shape, larger", BBox::new(0.0, 0.0, 40.0, 20.0)?),
    ];

    let mut kinds: Vec<LossKind> = Variant::ALL.into_iter().map(LossKind::new).collect();
    kinds.push(LossKind::with_alpha(Variant::CIoU, 3.0)?);

    print!("{:<16}", "loss");
    for (name, _) in &pairs {
        print!("{name:>20}");
    }
    println!();
    for kind in &kinds {
        print!("{:<16}", kind.label());
        for (_, pred) in &pairs {
            let v = geometric_loss(kind, pred, &gt)?;
            print!("{:>20.6}", v.loss);
        }
        println!();
    }
    Ok(())
}
