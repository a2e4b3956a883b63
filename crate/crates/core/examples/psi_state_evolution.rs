//! Compares the closed-form transition coefficients with a literal Euler
//! rollout of the sampled closed loop under fixed DAC parameters, then
//! prints each coefficient against its decay bound.

use nalgebra::{DMatrix, DVector};
use nsc::dac::{project, ClassSpec};
use nsc::linsys::SystemDynamics;
use nsc::oco::{psi_bound, psi_table};
use nsc::stability::lqr_gain;

fn main() -> nsc::Result<()> {
    let sys = SystemDynamics::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.2, -0.2]), DMatrix::identity(2, 2))?;
    let k = lqr_gain(&sys, &DMatrix::identity(2, 2), &DMatrix::identity(2, 2))?;
    let (h, l, kappa, gamma) = (0.1, 4, 2.0, 0.5);
    let decay = 1.0 - h * gamma;
    let a = 2.0 * kappa * kappa * kappa;
    let class = ClassSpec::new(a, h, decay, l, 2, 2)?;
    let raw: Vec<DMatrix<f64>> = (1..=l).map(|i| DMatrix::from_element(2, 2, 0.3 / i as f64)).collect();
    let params = project(&raw, &class)?;
    let window = vec![&params; l + 1];
    let table = psi_table(&sys, &k, h, &window, 2 * l)?;

    let t = 2 * l;
    let w: Vec<DVector<f64>> = (0..=t).map(|s| DVector::from_vec(vec![(s as f64).sin(), (0.7 * s as f64).cos()])).collect();
    let closed: DVector<f64> = table.psi.iter().enumerate().map(|(i, p)| p * &w[t - i] * h).sum();

    let mut x = DVector::zeros(2);
    for s in t - l..=t {
        let z: DVector<f64> = (1..=l).map(|i| params.block(i) * &w[s - i]).sum();
        let u = -(&k * &x) + z;
        x = &x + (sys.a() * &x + sys.b() * u + &w[s]) * h;
    }
    println!("closed form [{:.12}, {:.12}]", closed[0], closed[1]);
    println!("rollout     [{:.12}, {:.12}]", x[0], x[1]);

    for (i, p) in table.psi.iter().enumerate() {
        let bound = psi_bound(a, l, h, sys.kappa_b(), kappa, decay, i);
        println!("i = {i:>2}: ||Psi_i|| = {:.5}, bound {:.3}", nsc::linalg::spectral_norm(p), bound);
    }
    Ok(())
}
