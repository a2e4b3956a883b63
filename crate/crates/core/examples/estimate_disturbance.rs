//! Recovers the disturbance from consecutive samples and prints the
//! estimate error as the sample interval halves.

use nalgebra::{DMatrix, DVector};
use nsc::dac::estimate_disturbance;
use nsc::linsys::{integrate_step, DisturbanceSignal, SinusoidSpec, SystemDynamics};

fn main() -> nsc::Result<()> {
    let sys = SystemDynamics::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0))?;
    let spec = SinusoidSpec {
        amplitude: 1.0,
        frequency: 1.0,
        phase: Some(0.0),
        direction: Some(DVector::from_vec(vec![1.0])),
    };
    let dist = DisturbanceSignal::sinusoid(1, spec, 1.0, 0)?;
    let gain = DMatrix::from_element(1, 1, 2.0);

    let mut prev = f64::NAN;
    for h in [0.1f64, 0.05, 0.025, 0.0125] {
        let n = (5.0 / h).round() as usize;
        let mut x = DVector::zeros(1);
        let mut worst = 0.0f64;
        for r in 0..n {
            let t = r as f64 * h;
            let u = -(&gain * &x);
            let seg = integrate_step(&sys, &dist, t, &x, &u, h, 64)?;
            let w_hat = estimate_disturbance(&sys, &x, &u, &seg.x1, h)?;
            worst = worst.max((w_hat - dist.value(t)).norm());
            x = seg.x1;
        }
        println!("h = {h:<7} max error {worst:.6e}  ratio {:.3}", prev / worst);
        prev = worst;
    }
    Ok(())
}
