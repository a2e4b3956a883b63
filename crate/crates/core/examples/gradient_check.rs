//! Analytic memory-loss gradients against central differences.

use nsc::cli::verify::measure_gradient_error;

fn main() -> nsc::Result<()> {
    for seed in 0..3 {
        let err = measure_gradient_error(10, 30, seed, false)?;
        println!("seed {seed}: max relative error {err:.3e}");
    }
    Ok(())
}
