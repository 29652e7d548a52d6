//! Finite-difference check of every autodiff op and the full mixing cycle.

use chunkmix::autodiff::gradcheck::{op_suite, tolerance};
use chunkmix::autodiff::Precision;
use chunkmix::mixing::cycle_gradient_check;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let start = std::time::Instant::now();
    let tol = tolerance(Precision::F64);
    let mut worst: f64 = 0.0;
    for c in op_suite(0, Precision::F64)? {
        println!("{:<28} {:.2e}", c.name, c.max_rel_err);
        worst = worst.max(c.max_rel_err);
    }
    let cycle = cycle_gradient_check(0)?;
    println!("{:<28} {cycle:.2e}", "full_cycle");
    worst = worst.max(cycle);
    println!("max {worst:.2e} (tolerance {tol:.0e}) in {:.1?}", start.elapsed());
    Ok(())
}
