//! Builds a parameter class, projects an oversized point onto it and checks
//! feasibility and idempotence.

use nalgebra::DMatrix;
use nsc::dac::{project, ClassSpec};

fn main() -> nsc::Result<()> {
    let class = ClassSpec::new(16.0, 0.1, 0.95, 6, 2, 2)?;
    println!("block bounds: {:?}", class.bounds().iter().map(|b| format!("{b:.4}")).collect::<Vec<_>>());

    let raw: Vec<DMatrix<f64>> = (0..class.l)
        .map(|i| DMatrix::from_row_slice(2, 2, &[3.0, -1.0, 0.5, 2.0 + i as f64]))
        .collect();
    let p = project(&raw, &class)?;
    println!("max ||M^i|| / b_i after projection: {:.12}", p.max_class_ratio());
    println!("feasible: {}", p.is_feasible());
    let again = project(p.blocks(), &class)?;
    println!("idempotent: {}", again.blocks() == p.blocks());
    println!("parameter hash: {}", p.param_hash());
    Ok(())
}
