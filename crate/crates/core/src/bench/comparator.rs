//! The in-class DAC comparator that reproduces a linear gain `K*` under the
//! controller's gain `K`, and its measured gap to the `K*` recursion.

use nalgebra::{DMatrix, DVector};

use crate::bench::cost::CostFn;
use crate::dac::{ClassSpec, DacParams, DecayBase, CLASS_TOL};
use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::linsys::SystemDynamics;
use crate::oco::{MemoryLoss, SampleGrid};

/// `M^i = h (K - K*) (I + h(A - B K*))^(i-1)` for `i = 1..=l`, checked
/// against the class bounds.
pub fn comparator_params(
    gain: &DMatrix<f64>,
    k_star: &DMatrix<f64>,
    sys: &SystemDynamics,
    class: &ClassSpec,
) -> Result<DacParams> {
    sys.check_gain(gain)?;
    sys.check_gain(k_star)?;
    let h = class.h;
    let q_star = sys.sampled_closed_loop(k_star, h);
    let mut power = DMatrix::identity(q_star.nrows(), q_star.ncols());
    let diff = (gain - k_star) * h;
    let mut blocks = Vec::with_capacity(class.l);
    for i in 1..=class.l {
        let block = &diff * &power;
        let norm = spectral_norm(&block);
        let bound = class.bound(i);
        if norm > bound * (1.0 + CLASS_TOL) + CLASS_TOL {
            return Err(Error::ComparatorOutOfClass { index: i, norm, bound });
        }
        blocks.push(block);
        power = &q_star * power;
    }
    DacParams::new(blocks, class)
}

/// Ideal trajectory under the comparator against the `K*` recursion on the
/// same disturbance samples.
#[derive(Clone, Debug)]
pub struct ComparatorGap {
    /// `l = H m`.
    pub window: usize,
    /// `max_t |c(y_t, v_t) - c(x*_t, u*_t)|`.
    pub max_gap: f64,
    /// Largest state or action norm on either side.
    pub d: f64,
    pub w0: f64,
    /// `3 decay^l G D W0 kappa^3 a (l h kappa_B + 1)`.
    pub bound: f64,
}

/// Inputs shared by every window length of one comparator experiment.
#[derive(Clone, Debug)]
pub struct ComparatorSetup<'a> {
    pub sys: &'a SystemDynamics,
    pub gain: &'a DMatrix<f64>,
    pub k_star: &'a DMatrix<f64>,
    pub cost: &'a CostFn,
    pub w_hat: &'a [DVector<f64>],
    pub h: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub decay_base: DecayBase,
}

/// Measures the per-sample cost gap for window `l = memory * m`.
pub fn comparator_gap(setup: &ComparatorSetup<'_>, memory: usize, m: usize) -> Result<ComparatorGap> {
    let sys = setup.sys;
    let (nx, nu) = (sys.state_dim(), sys.input_dim());
    let l = memory * m;
    let n = setup.w_hat.len();
    if l == 0 || l > n {
        return Err(Error::InfeasibleSchedule {
            l,
            n,
            suggestion: "use a longer disturbance record".into(),
        });
    }
    let class = ClassSpec::for_certificate(setup.kappa, setup.gamma, setup.h, l, setup.decay_base, None, nu, nx)?;
    let params = comparator_params(setup.gain, setup.k_star, sys, &class)?;
    let grid = SampleGrid::full(setup.h, n);
    let loss = MemoryLoss::new(sys, setup.gain, setup.cost, grid, m, l, setup.w_hat)?;
    let window: Vec<&DacParams> = vec![&params; memory + 1];

    let q_star = sys.sampled_closed_loop(setup.k_star, setup.h);
    let mut x_star = DVector::zeros(nx);
    let mut max_gap = 0.0f64;
    let mut d = 0.0f64;
    let mut t = 0;
    for k in 0..grid.slow_blocks(m) {
        let trace = loss.ideal_trace(&window, k)?;
        for (y, v) in trace.y.iter().zip(&trace.v) {
            let u_star = -(setup.k_star * &x_star);
            let time = grid.time(t);
            let gap = (setup.cost.eval(time, y, v) - setup.cost.eval(time, &x_star, &u_star)).abs();
            max_gap = max_gap.max(gap);
            d = d.max(y.norm()).max(v.norm()).max(x_star.norm()).max(u_star.norm());
            x_star = &q_star * &x_star + &setup.w_hat[t] * setup.h;
            t += 1;
        }
    }
    let w0 = setup.w_hat.iter().map(|w| w.norm()).fold(0.0, f64::max);
    let bound = 3.0
        * class.decay.powi(l as i32)
        * setup.cost.g()
        * d
        * w0
        * setup.kappa.powi(3)
        * class.radius_a
        * (l as f64 * setup.h * sys.kappa_b() + 1.0);
    Ok(ComparatorGap {
        window: l,
        max_gap,
        d,
        w0,
        bound,
    })
}

/// Least-squares slope of `ln(gap)` against the window length, as a
/// per-sample ratio `exp(slope)`.
pub fn fitted_decay(gaps: &[ComparatorGap]) -> f64 {
    let pts: Vec<(f64, f64)> = gaps
        .iter()
        .filter(|g| g.max_gap > 0.0)
        .map(|g| (g.window as f64, g.max_gap.ln()))
        .collect();
    crate::bench::least_squares_slope(&pts).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar() -> SystemDynamics {
        SystemDynamics::new(DMatrix::from_element(1, 1, 1.0), DMatrix::identity(1, 1)).unwrap()
    }

    #[test]
    fn equal_gains_give_zero_blocks() {
        let sys = scalar();
        let k = DMatrix::from_element(1, 1, 2.0);
        let class = ClassSpec::for_certificate(2.0, 0.5, 0.1, 5, DecayBase::OneMinusHGamma, None, 1, 1).unwrap();
        let p = comparator_params(&k, &k, &sys, &class).unwrap();
        assert!(p.blocks().iter().all(|b| b[(0, 0)] == 0.0));
    }

    #[test]
    fn scalar_blocks_match_closed_form() {
        let sys = scalar();
        let k = DMatrix::from_element(1, 1, 2.0);
        let ks = DMatrix::from_element(1, 1, 1.5);
        let class = ClassSpec::for_certificate(2.0, 0.5, 0.1, 6, DecayBase::OneMinusHGamma, None, 1, 1).unwrap();
        let p = comparator_params(&k, &ks, &sys, &class).unwrap();
        for (i, b) in p.blocks().iter().enumerate() {
            let expect = 0.1 * 0.5 * 0.95f64.powi(i as i32);
            assert!((b[(0, 0)] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn weak_class_reports_the_violating_block() {
        let sys = scalar();
        let k = DMatrix::from_element(1, 1, 2.0);
        let ks = DMatrix::from_element(1, 1, 1.5);
        let class = ClassSpec::new(0.6, 0.1, 0.5, 6, 1, 1).unwrap();
        match comparator_params(&k, &ks, &sys, &class) {
            Err(Error::ComparatorOutOfClass { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gap_shrinks_with_the_window() {
        let sys = scalar();
        let k = DMatrix::from_element(1, 1, 2.0);
        let ks = DMatrix::from_element(1, 1, 3.0);
        let cost = CostFn::quadratic(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let w: Vec<DVector<f64>> = (0..400).map(|s| DVector::from_element(1, 0.5 * (0.07 * s as f64).sin())).collect();
        let setup = ComparatorSetup {
            sys: &sys,
            gain: &k,
            k_star: &ks,
            cost: &cost,
            w_hat: &w,
            h: 0.05,
            kappa: 3.0,
            gamma: 0.5,
            decay_base: DecayBase::OneMinusHGamma,
        };
        let gaps: Vec<ComparatorGap> = [2, 4, 8].iter().map(|&hh| comparator_gap(&setup, hh, 5).unwrap()).collect();
        assert!(gaps.windows(2).all(|g| g[1].max_gap < g[0].max_gap));
        assert!(gaps.iter().all(|g| g.max_gap <= g.bound));
        assert!(fitted_decay(&gaps) <= 1.0 - 0.05 * 0.5);
    }
}
