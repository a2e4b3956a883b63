//! Linear-policy evaluation on a fixed disturbance replay.
//!
//! RK4 with a held action is affine in `(x_r, u_r)` plus a disturbance-only
//! term, so each interval reduces to precomputed maps: the end state is
//! `Phi x + Gamma u + f_r` and the Simpson cost is `y'Hy + 2y'g_r + c_r` with
//! `y = (x, u)`. Evaluating a gain then costs `O(n d^2)`.

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::bench::cost::CostFn;
use crate::error::{Error, Result};
use crate::linalg::all_finite_vec;
use crate::linsys::{cost_integral, integrate_step, simpson_weights, DisturbanceSignal, Rk4Work, SystemDynamics};
use crate::oco::SampleGrid;

/// Identifies a disturbance replay on a sample grid: signal, `h`, `n`, final
/// interval and integrator resolution.
pub fn replay_hash(dist: &DisturbanceSignal, grid: &SampleGrid, substeps: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update(dist.fingerprint().as_bytes());
    for v in [grid.h, grid.n as f64, grid.final_weight, substeps as f64] {
        hasher.update(v.to_bits().to_le_bytes());
    }
    hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// States, actions and costs of a sampled policy rollout.
#[derive(Clone, Debug, Default)]
pub struct PolicyTrajectory {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    /// `c(t_r, x_r, u_r)` at each sample.
    pub sample_cost: Vec<f64>,
    /// Integral of the cost over each interval.
    pub interval_cost: Vec<f64>,
    pub total: f64,
}

impl PolicyTrajectory {
    /// `sum_r (h_r / h) c(t_r, x_r, u_r)`.
    pub fn weighted_sample_sum(&self, grid: &SampleGrid) -> f64 {
        self.sample_cost
            .iter()
            .enumerate()
            .map(|(r, c)| grid.weight(r) * c)
            .sum()
    }
}

/// Interval maps for one substep width.
struct IntervalMaps {
    /// `[Phi_j | Gamma_j]` at every substep boundary `j = 0..=N`.
    stacked: Vec<DMatrix<f64>>,
    weights: Vec<f64>,
    hess: DMatrix<f64>,
}

impl IntervalMaps {
    fn new(sys: &SystemDynamics, cost: &CostFn, length: f64, substeps: usize) -> Result<Self> {
        let (nx, nu) = (sys.state_dim(), sys.input_dim());
        let dt = length / substeps as f64;
        let weights = simpson_weights(substeps, dt)?;
        let zero = DisturbanceSignal::zero(nx);
        let mut rk = Rk4Work::new(nx);
        // one RK4 substep is x -> R x + S c for constant forcing c
        let mut r = DMatrix::zeros(nx, nx);
        let mut s = DMatrix::zeros(nx, nx);
        let zero_c = DVector::zeros(nx);
        for i in 0..nx {
            let mut x = DVector::zeros(nx);
            x[i] = 1.0;
            rk.step(sys.a(), &zero_c, &zero, 0.0, dt, &mut x);
            r.set_column(i, &x);
            let mut c = DVector::zeros(nx);
            c[i] = 1.0;
            let mut x = DVector::zeros(nx);
            rk.step(sys.a(), &c, &zero, 0.0, dt, &mut x);
            s.set_column(i, &x);
        }
        let sb = &s * sys.b();
        let mut stacked = Vec::with_capacity(substeps + 1);
        let mut cur = DMatrix::zeros(nx, nx + nu);
        cur.view_mut((0, 0), (nx, nx)).fill_with_identity();
        stacked.push(cur.clone());
        for _ in 0..substeps {
            let mut next = &r * &cur;
            let mut g = next.view_mut((0, nx), (nx, nu));
            g += &sb;
            stacked.push(next.clone());
            cur = next;
        }
        let q = cost.state_weight();
        let rw = cost.input_weight();
        let mut hess = DMatrix::zeros(nx + nu, nx + nu);
        for (p, w) in stacked.iter().zip(&weights) {
            hess += p.transpose() * q * p * *w;
        }
        let wsum: f64 = weights.iter().sum();
        let mut hu = hess.view_mut((nx, nx), (nu, nu));
        hu += rw * wsum;
        Ok(Self { stacked, weights, hess })
    }

    fn end(&self) -> &DMatrix<f64> {
        self.stacked.last().expect("at least one substep")
    }
}

/// Disturbance-only part of one interval.
struct FreeResponse {
    end: DVector<f64>,
    lin: DVector<f64>,
    constant: f64,
}

/// Precomputed replay of a disturbance on a sample grid.
pub struct Replay<'a> {
    sys: &'a SystemDynamics,
    dist: &'a DisturbanceSignal,
    cost: &'a CostFn,
    grid: SampleGrid,
    substeps: usize,
    full: IntervalMaps,
    last: Option<IntervalMaps>,
    free: Vec<FreeResponse>,
    hash: String,
}

impl<'a> Replay<'a> {
    pub fn new(
        sys: &'a SystemDynamics,
        dist: &'a DisturbanceSignal,
        cost: &'a CostFn,
        grid: SampleGrid,
        substeps: usize,
    ) -> Result<Self> {
        let (nx, nu) = (sys.state_dim(), sys.input_dim());
        if dist.dim() != nx || cost.state_weight().nrows() != nx || cost.input_weight().nrows() != nu {
            return Err(Error::dim("system, disturbance and cost dimensions disagree"));
        }
        let full = IntervalMaps::new(sys, cost, grid.h, substeps)?;
        let last = if grid.final_weight < 1.0 {
            Some(IntervalMaps::new(sys, cost, grid.interval(grid.n - 1), substeps)?)
        } else {
            None
        };
        let q = cost.state_weight();
        let zero_c = DVector::zeros(nx);
        let mut rk = Rk4Work::new(nx);
        let mut free = Vec::with_capacity(grid.n);
        for r in 0..grid.n {
            let maps = if r + 1 == grid.n { last.as_ref().unwrap_or(&full) } else { &full };
            let t0 = grid.time(r);
            let dt = grid.interval(r) / substeps as f64;
            let mut f = DVector::zeros(nx);
            let mut lin = DVector::zeros(nx + nu);
            let mut constant = cost.offset() * grid.interval(r);
            for j in 0..=substeps {
                let t = t0 + j as f64 * dt;
                if j > 0 {
                    rk.step(sys.a(), &zero_c, dist, t - dt, dt, &mut f);
                }
                let e = match cost.reference_at(t) {
                    Some(rf) => &f - rf,
                    None => f.clone(),
                };
                let qe = q * &e;
                let w = maps.weights[j];
                lin.gemv_tr(w, &maps.stacked[j], &qe, 1.0);
                constant += w * e.dot(&qe);
            }
            if !all_finite_vec(&f) {
                return Err(Error::IntegrationDivergence { time: t0 + grid.interval(r) });
            }
            free.push(FreeResponse { end: f, lin, constant });
        }
        let hash = replay_hash(dist, &grid, substeps);
        Ok(Self {
            sys,
            dist,
            cost,
            grid,
            substeps,
            full,
            last,
            free,
            hash,
        })
    }

    pub fn grid(&self) -> &SampleGrid {
        &self.grid
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn system(&self) -> &SystemDynamics {
        self.sys
    }

    pub fn disturbance(&self) -> &DisturbanceSignal {
        self.dist
    }

    pub fn cost(&self) -> &CostFn {
        self.cost
    }

    fn maps(&self, r: usize) -> &IntervalMaps {
        if r + 1 == self.grid.n {
            self.last.as_ref().unwrap_or(&self.full)
        } else {
            &self.full
        }
    }

    /// `J(K)` under the sampled policy `u_r = -K x_r`.
    pub fn eval(&self, gain: &DMatrix<f64>) -> Result<f64> {
        self.rollout(gain, false).map(|t| t.total)
    }

    /// Full sampled rollout of `u_r = -K x_r` from `x_0 = 0`.
    pub fn trajectory(&self, gain: &DMatrix<f64>) -> Result<PolicyTrajectory> {
        self.rollout(gain, true)
    }

    fn rollout(&self, gain: &DMatrix<f64>, keep: bool) -> Result<PolicyTrajectory> {
        self.sys.check_gain(gain)?;
        let (nx, nu) = (self.sys.state_dim(), self.sys.input_dim());
        let mut out = PolicyTrajectory::default();
        let mut y = DVector::zeros(nx + nu);
        let mut hy = DVector::zeros(nx + nu);
        for r in 0..self.grid.n {
            let maps = self.maps(r);
            let fr = &self.free[r];
            let (x, u) = {
                let x = y.rows(0, nx).into_owned();
                let u = -(gain * &x);
                (x, u)
            };
            y.rows_mut(nx, nu).copy_from(&u);
            hy.gemv(1.0, &maps.hess, &y, 0.0);
            let c = y.dot(&hy) + 2.0 * y.dot(&fr.lin) + fr.constant;
            out.total += c;
            if keep {
                out.sample_cost.push(self.cost.eval(self.grid.time(r), &x, &u));
                out.interval_cost.push(c);
                out.x.push(x);
                out.u.push(u);
            }
            let mut next = fr.end.clone();
            next.gemv(1.0, maps.end(), &y, 1.0);
            if !all_finite_vec(&next) || !c.is_finite() {
                return Err(Error::IntegrationDivergence {
                    time: self.grid.time(r) + self.grid.interval(r),
                });
            }
            y.rows_mut(0, nx).copy_from(&next);
        }
        Ok(out)
    }

    /// The same rollout through `integrate_step` and `cost_integral`.
    pub fn trajectory_direct(&self, gain: &DMatrix<f64>) -> Result<PolicyTrajectory> {
        self.sys.check_gain(gain)?;
        let mut out = PolicyTrajectory::default();
        let mut x = DVector::zeros(self.sys.state_dim());
        for r in 0..self.grid.n {
            let t = self.grid.time(r);
            let u = -(gain * &x);
            let seg = integrate_step(self.sys, self.dist, t, &x, &u, self.grid.interval(r), self.substeps)?;
            let c = cost_integral(&seg, self.cost)?;
            out.total += c;
            out.sample_cost.push(self.cost.eval(t, &x, &u));
            out.interval_cost.push(c);
            out.x.push(x);
            out.u.push(u);
            x = seg.x1;
        }
        Ok(out)
    }

    /// Cost of continuous feedback `u(t) = -K x(t)` applied at every substep.
    pub fn eval_continuous_feedback(&self, gain: &DMatrix<f64>) -> Result<f64> {
        self.sys.check_gain(gain)?;
        let nx = self.sys.state_dim();
        let closed = self.sys.closed_loop(gain);
        let zero_c = DVector::zeros(nx);
        let mut rk = Rk4Work::new(nx);
        let mut x = DVector::zeros(nx);
        let mut total = 0.0;
        for r in 0..self.grid.n {
            let t0 = self.grid.time(r);
            let len = self.grid.interval(r);
            let dt = len / self.substeps as f64;
            let weights = &self.maps(r).weights;
            for (j, w) in weights.iter().enumerate() {
                let t = t0 + j as f64 * dt;
                if j > 0 {
                    rk.step(&closed, &zero_c, self.dist, t - dt, dt, &mut x);
                }
                total += w * self.cost.eval(t, &x, &-(gain * &x));
            }
            if !all_finite_vec(&x) {
                return Err(Error::IntegrationDivergence { time: t0 + len });
            }
        }
        Ok(total)
    }
}

/// `J(K)` for the sampled policy `u_r = -K x_r` held over each interval,
/// integrated step by step.
pub fn eval_linear_policy(
    sys: &SystemDynamics,
    dist: &DisturbanceSignal,
    cost: &CostFn,
    gain: &DMatrix<f64>,
    horizon: f64,
    h: f64,
    substeps: usize,
) -> Result<f64> {
    let grid = SampleGrid::new(horizon, h)?;
    let mut x = DVector::zeros(sys.state_dim());
    let mut total = 0.0;
    for r in 0..grid.n {
        let u = -(gain * &x);
        let seg = integrate_step(sys, dist, grid.time(r), &x, &u, grid.interval(r), substeps)?;
        total += cost_integral(&seg, cost)?;
        x = seg.x1;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::cost::Reference;
    use crate::linsys::SinusoidSpec;

    fn scalar_case() -> (SystemDynamics, DisturbanceSignal, CostFn) {
        let sys = SystemDynamics::new(DMatrix::from_element(1, 1, 1.0), DMatrix::identity(1, 1)).unwrap();
        let spec = SinusoidSpec {
            amplitude: 1.0,
            frequency: 1.0,
            phase: Some(0.0),
            direction: Some(DVector::from_element(1, 1.0)),
        };
        let dist = DisturbanceSignal::sinusoid(1, spec, 1.0, 0).unwrap();
        let cost = CostFn::quadratic(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        (sys, dist, cost)
    }

    #[test]
    fn fast_replay_matches_direct_integration() {
        let (sys, dist, cost) = scalar_case();
        let grid = SampleGrid::new(5.05, 0.1).unwrap();
        assert!(grid.final_weight < 1.0);
        let replay = Replay::new(&sys, &dist, &cost, grid, 16).unwrap();
        let k = DMatrix::from_element(1, 1, 2.0);
        let fast = replay.trajectory(&k).unwrap();
        let direct = replay.trajectory_direct(&k).unwrap();
        assert!((fast.total - direct.total).abs() <= 1e-11 * direct.total);
        let plain = eval_linear_policy(&sys, &dist, &cost, &k, 5.05, 0.1, 16).unwrap();
        assert!((plain - direct.total).abs() <= 1e-12 * plain);
    }

    #[test]
    fn tracking_cost_replay_matches_direct() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.3]);
        let sys = SystemDynamics::new(a, DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
        let specs = [SinusoidSpec {
            amplitude: 0.4,
            frequency: 0.7,
            phase: None,
            direction: None,
        }];
        let dist = DisturbanceSignal::sum_of_sinusoids(2, &specs, 0.5, 3).unwrap();
        let reference = Reference {
            amplitude: 0.5,
            frequency: 0.3,
            phase: 0.1,
            direction: DVector::from_vec(vec![1.0, 0.0]),
        };
        let cost = CostFn::tracking(DMatrix::identity(2, 2), DMatrix::identity(1, 1), reference).unwrap();
        let replay = Replay::new(&sys, &dist, &cost, SampleGrid::new(6.0, 0.2).unwrap(), 8).unwrap();
        let k = DMatrix::from_row_slice(1, 2, &[0.5, 0.8]);
        let fast = replay.eval(&k).unwrap();
        let direct = replay.trajectory_direct(&k).unwrap().total;
        assert!((fast - direct).abs() <= 1e-11 * direct);
    }

    #[test]
    fn zero_disturbance_costs_nothing() {
        let sys = SystemDynamics::new(DMatrix::from_element(1, 1, -1.0), DMatrix::identity(1, 1)).unwrap();
        let dist = DisturbanceSignal::zero(1);
        let cost = CostFn::quadratic(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let j = eval_linear_policy(&sys, &dist, &cost, &DMatrix::zeros(1, 1), 3.0, 0.1, 8).unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn substep_self_convergence() {
        let (sys, dist, cost) = scalar_case();
        let k = DMatrix::from_element(1, 1, 2.0);
        let coarse = eval_linear_policy(&sys, &dist, &cost, &k, 10.0, 0.1, 64).unwrap();
        let fine = eval_linear_policy(&sys, &dist, &cost, &k, 10.0, 0.1, 640).unwrap();
        assert!((coarse - fine).abs() <= 1e-6 * fine);
    }

    #[test]
    fn continuous_feedback_is_close_for_small_h() {
        let (sys, dist, cost) = scalar_case();
        let k = DMatrix::from_element(1, 1, 2.0);
        let replay = Replay::new(&sys, &dist, &cost, SampleGrid::new(10.0, 0.01).unwrap(), 8).unwrap();
        let sampled = replay.eval(&k).unwrap();
        let continuous = replay.eval_continuous_feedback(&k).unwrap();
        assert!((sampled - continuous).abs() <= 0.05 * continuous);
    }
}
