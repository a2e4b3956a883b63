//! Gap between a fixed linear policy and its DAC approximation as the
//! memory grows, with the fitted geometric decay.

use nsc::bench::suite;
use nsc::cli::verify::measure_comparator_decay;

fn main() -> nsc::Result<()> {
    let exp = suite::load("two_dim")?;
    let m = 5;
    let d = measure_comparator_decay(&exp, m, &[1, 2, 4, 8])?;
    for g in &d.gaps {
        println!("window {:>3}: gap {:.4e}  bound {:.4e}", g.window, g.max_gap, g.bound);
    }
    println!("fitted decay per sample {:.5}, allowed {:.5}", d.fitted_ratio, d.allowed_ratio);
    println!("largest comparator block / class bound: {:.4}", d.max_class_ratio);
    Ok(())
}
