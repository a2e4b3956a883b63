//! Certifies the LQR gain of a damped oscillator and shows a refusal for a
//! destabilizing gain.

use nalgebra::DMatrix;
use nsc::linsys::SystemDynamics;
use nsc::stability::{best_certificate, certify, lqr_gain, sampled_power_norms, Certification};

fn main() -> nsc::Result<()> {
    let sys = SystemDynamics::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.2, -0.2]), DMatrix::identity(2, 2))?;
    let k = lqr_gain(&sys, &DMatrix::identity(2, 2), &DMatrix::identity(2, 2))?;
    let h = 0.05;
    println!("K = {k}");

    let (kappa, gamma) = best_certificate(&sys, &k, h)?;
    println!("tightest certificate at h = {h}: kappa = {kappa:.4}, gamma = {gamma:.4}");

    match certify(&sys, &k, h, 2.0, 0.5)? {
        Certification::Accepted(cert) => {
            let norms = sampled_power_norms(&sys, &k, h, 60);
            for i in [1, 10, 30, 60] {
                println!("||Q^{i}|| = {:.5} <= {:.5}", norms[i], cert.power_bound(h, i));
            }
        }
        Certification::Refused(r) => println!("refused: {r}"),
    }

    let bad = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
    match certify(&sys, &bad, h, 2.0, 0.5)? {
        Certification::Accepted(_) => println!("unexpected acceptance"),
        Certification::Refused(r) => println!("K = -I refused: {r}"),
    }
    Ok(())
}
