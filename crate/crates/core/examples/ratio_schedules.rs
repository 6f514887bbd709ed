//! The three annealing strategies side by side, and a shorter budget.

use uiou::{RatioSchedule, Strategy};

fn main() -> uiou::Result<()> {
    let strategies = [Strategy::Linear, Strategy::Cosine, Strategy::Fraction];
    println!(
        "{:>6} {:>10} {:>10} {:>10}",
        "epoch", "linear", "cos", "fraction"
    );
    for epoch in (0..=300).step_by(30) {
        print!("{epoch:>6}");
        for st in strategies {
            print!(" {:>10.6}", RatioSchedule::annealed(st).ratio_at(epoch)?);
        }
        println!();
    }

    let short = RatioSchedule::new(Strategy::Cosine, 4.0, 1.0, 50)?;
    println!("\ncos from 4 to 1 over 50 epochs:");
    for (e, r) in short.table()?.into_iter().step_by(10) {
        println!("  {e:>3} {r:.6}");
    }
    Ok(())
}
