//! Integrates one held-action interval and its cost, then refines the
//! substep count to show the quadrature settling.

use nalgebra::{DMatrix, DVector};
use nsc::bench::cost::CostFn;
use nsc::linsys::{cost_integral, integrate_step, DisturbanceSignal, SinusoidSpec, SystemDynamics};

fn main() -> nsc::Result<()> {
    let sys = SystemDynamics::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]), DMatrix::identity(2, 2))?;
    let spec = SinusoidSpec {
        amplitude: 1.0,
        frequency: 2.0,
        phase: Some(0.3),
        direction: Some(DVector::from_vec(vec![1.0, 0.0])),
    };
    let dist = DisturbanceSignal::sinusoid(2, spec, 1.0, 0)?;
    let cost = CostFn::quadratic(DMatrix::identity(2, 2), DMatrix::identity(2, 2))?;
    let x0 = DVector::from_vec(vec![1.0, -0.5]);
    let u = DVector::from_vec(vec![0.2, 0.0]);

    for substeps in [2, 8, 32, 128] {
        let seg = integrate_step(&sys, &dist, 0.0, &x0, &u, 0.5, substeps)?;
        let c = cost_integral(&seg, &cost)?;
        println!("substeps {substeps:>4}: x(0.5) = [{:.12}, {:.12}], cost = {c:.12}", seg.x1[0], seg.x1[1]);
    }
    Ok(())
}
