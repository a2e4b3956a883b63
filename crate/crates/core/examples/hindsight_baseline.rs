//! Best certified linear gain in hindsight for the scalar benchmark,
//! compared with a fine grid and the LQR gain.

use nalgebra::DMatrix;
use nsc::bench::baseline::{scalar_grid, search, BaselineOptions, SearchMethod};
use nsc::bench::replay::Replay;
use nsc::bench::suite;
use nsc::cli::harness::baseline_for;

fn main() -> nsc::Result<()> {
    let exp = suite::load("scalar")?;
    let base = baseline_for(&exp)?;
    println!(
        "Nelder-Mead: K* = {:.6}, J* = {:.8} ({} candidates, class kappa = {}, gamma = {})",
        base.k_star[(0, 0)],
        base.j_star,
        base.trace.len(),
        base.class.kappa,
        base.class.gamma
    );

    let replay = Replay::new(&exp.system, &exp.disturbance, &exp.cost, exp.grid()?, exp.controller.substeps)?;
    let opts = BaselineOptions {
        method: SearchMethod::Grid(scalar_grid(1.01, 10.0, 0.01)),
        ..Default::default()
    };
    let grid = search(&replay, exp.baseline.class, &opts)?;
    println!("grid:        K  = {:.6}, J  = {:.8}", grid.k_star[(0, 0)], grid.j_star);
    for k in [1.0 + 2f64.sqrt(), 2.0, 5.0] {
        println!("J(K = {k:.4}) = {:.8}", replay.eval(&DMatrix::from_element(1, 1, k))?);
    }
    Ok(())
}
