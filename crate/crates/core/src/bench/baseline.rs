//! Best certified linear gain in hindsight on a fixed disturbance replay.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bench::nelder_mead::{nelder_mead, NelderMeadOptions};
use crate::bench::replay::{PolicyTrajectory, Replay};
use crate::error::{Error, Result};
use crate::linsys::{DisturbanceSignal, SystemDynamics, DEFAULT_SUBSTEPS};
use crate::bench::cost::CostFn;
use crate::oco::SampleGrid;
use crate::stability::{certify, lqr_gain, Certification, StablePolicyCert};

/// `(kappa, gamma)` of the comparator class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassParams {
    pub kappa: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug)]
pub enum SearchMethod {
    NelderMead { multistarts: usize },
    /// Exhaustive search over explicit candidates.
    Grid(Vec<DMatrix<f64>>),
}

impl Default for SearchMethod {
    fn default() -> Self {
        SearchMethod::NelderMead { multistarts: 8 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct BaselineOptions {
    pub method: SearchMethod,
    pub seed: u64,
    /// Extra starting gains, e.g. the gain the algorithm runs with.
    pub extra_starts: Vec<DMatrix<f64>>,
    pub nelder_mead: NelderMeadOptions,
}

#[derive(Clone, Debug)]
pub struct BaselineResult {
    pub k_star: DMatrix<f64>,
    pub j_star: f64,
    pub certificate: StablePolicyCert,
    /// Every certified candidate evaluated, in a deterministic order.
    pub trace: Vec<(DMatrix<f64>, f64)>,
    pub replay_hash: String,
    pub class: ClassParams,
    /// Sampled rollout of `K*` on the replay.
    pub trajectory: PolicyTrajectory,
    pub starts: usize,
}

/// `J(K)` when `K` is certified in the class at the replay's `h`, `+inf` otherwise.
pub fn certified_cost(replay: &Replay<'_>, class: ClassParams, gain: &DMatrix<f64>) -> f64 {
    let h = replay.grid().h;
    match certify(replay.system(), gain, h, class.kappa, class.gamma) {
        Ok(Certification::Accepted(_)) => replay.eval(gain).unwrap_or(f64::INFINITY),
        _ => f64::INFINITY,
    }
}

/// Lowest `J`, then smallest `||K||_F`, then lexicographic entries (row-major).
pub fn candidate_order(a: &(DMatrix<f64>, f64), b: &(DMatrix<f64>, f64)) -> Ordering {
    a.1.total_cmp(&b.1)
        .then_with(|| a.0.norm().total_cmp(&b.0.norm()))
        .then_with(|| {
            let ra = a.0.transpose();
            let rb = b.0.transpose();
            ra.iter()
                .zip(rb.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
}

fn to_gain(x: &[f64], nu: usize, nx: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(nu, nx, x)
}

fn from_gain(k: &DMatrix<f64>) -> Vec<f64> {
    k.transpose().iter().cloned().collect()
}

/// Convenience wrapper that builds the replay with the default substeps.
pub fn best_in_hindsight(
    sys: &SystemDynamics,
    dist: &DisturbanceSignal,
    cost: &CostFn,
    horizon: f64,
    h: f64,
    class: ClassParams,
) -> Result<BaselineResult> {
    let grid = SampleGrid::new(horizon, h)?;
    let replay = Replay::new(sys, dist, cost, grid, DEFAULT_SUBSTEPS)?;
    search(&replay, class, &BaselineOptions::default())
}

/// Minimizes `J(K)` over certified gains.
pub fn search(replay: &Replay<'_>, class: ClassParams, opts: &BaselineOptions) -> Result<BaselineResult> {
    let sys = replay.system();
    let (nu, nx) = (sys.input_dim(), sys.state_dim());
    let mut trace: Vec<(DMatrix<f64>, f64)> = Vec::new();
    let mut starts = 0;
    match &opts.method {
        SearchMethod::Grid(cands) => {
            let evals: Vec<(DMatrix<f64>, f64)> = cands
                .par_iter()
                .map(|k| (k.clone(), certified_cost(replay, class, k)))
                .collect();
            trace.extend(evals.into_iter().filter(|(_, j)| j.is_finite()));
        }
        SearchMethod::NelderMead { multistarts } => {
            let start_gains = starting_gains(replay, class, opts, *multistarts);
            starts = start_gains.len();
            let runs: Vec<Vec<(DMatrix<f64>, f64)>> = start_gains
                .par_iter()
                .map(|k0| {
                    let mut local = Vec::new();
                    let x0 = from_gain(k0);
                    let step: Vec<f64> = x0.iter().map(|v| 0.1 * v.abs().max(0.5)).collect();
                    nelder_mead(
                        |x| {
                            let k = to_gain(x, nu, nx);
                            let j = certified_cost(replay, class, &k);
                            if j.is_finite() {
                                local.push((k, j));
                            }
                            j
                        },
                        &x0,
                        &step,
                        &opts.nelder_mead,
                    );
                    local
                })
                .collect();
            for r in runs {
                trace.extend(r);
            }
        }
    }
    let best = trace
        .iter()
        .min_by(|a, b| candidate_order(a, b))
        .cloned()
        .ok_or(Error::EmptyClass {
            kappa: class.kappa,
            gamma: class.gamma,
        })?;
    let certificate = match certify(sys, &best.0, replay.grid().h, class.kappa, class.gamma)? {
        Certification::Accepted(c) => c,
        Certification::Refused(r) => {
            return Err(Error::CertificationMismatch {
                h: replay.grid().h,
                reason: r.to_string(),
            })
        }
    };
    let trajectory = replay.trajectory(&best.0)?;
    Ok(BaselineResult {
        k_star: best.0,
        j_star: best.1,
        certificate,
        trace,
        replay_hash: replay.hash().to_string(),
        class,
        trajectory,
        starts,
    })
}

/// LQR gain, zero, the caller's extras, then seeded perturbations of the
/// first certified start; only certified gains are kept.
fn starting_gains(replay: &Replay<'_>, class: ClassParams, opts: &BaselineOptions, count: usize) -> Vec<DMatrix<f64>> {
    let sys = replay.system();
    let (nu, nx) = (sys.input_dim(), sys.state_dim());
    let cost = replay.cost();
    let mut named = Vec::new();
    if let Ok(k) = lqr_gain(sys, &lqr_state_weight(cost.state_weight()), &lqr_input_weight(cost.input_weight())) {
        named.push(k);
    }
    named.push(DMatrix::zeros(nu, nx));
    named.extend(opts.extra_starts.iter().cloned());
    let certified = |k: &DMatrix<f64>| certified_cost(replay, class, k).is_finite();
    let mut out: Vec<DMatrix<f64>> = Vec::new();
    for k in named {
        if out.len() < count && k.shape() == (nu, nx) && certified(&k) && !out.contains(&k) {
            out.push(k);
        }
    }
    let center = match out.first() {
        Some(k) => k.clone(),
        None => return out,
    };
    let spread = center.norm().max(0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut attempts = 0;
    while out.len() < count && attempts < 200 {
        attempts += 1;
        let k = DMatrix::from_fn(nu, nx, |i, j| center[(i, j)] + spread * rng.random_range(-0.5..0.5));
        if certified(&k) {
            out.push(k);
        }
    }
    out
}

/// LQR needs `R > 0`; nudge a singular input weight.
fn lqr_input_weight(r: &DMatrix<f64>) -> DMatrix<f64> {
    let n = r.nrows();
    r + DMatrix::identity(n, n) * 1e-9
}

fn lqr_state_weight(q: &DMatrix<f64>) -> DMatrix<f64> {
    q.clone()
}

/// Uniform grid of scalar gains `lo, lo + step, ..., <= hi`.
pub fn scalar_grid(lo: f64, hi: f64, step: f64) -> Vec<DMatrix<f64>> {
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=count)
        .map(|i| DMatrix::from_element(1, 1, lo + i as f64 * step))
        .collect()
}

/// Grid over diagonal gains `diag(k_1, ..., k_d)` with each entry on `values`.
pub fn diagonal_grid(dim: usize, values: &[f64]) -> Vec<DMatrix<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<f64>| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    out.into_iter()
        .map(|d| DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsys::SinusoidSpec;
    use nalgebra::DVector;

    #[test]
    fn zero_disturbance_prefers_smallest_gain() {
        let sys = SystemDynamics::new(DMatrix::from_element(1, 1, -1.0), DMatrix::identity(1, 1)).unwrap();
        let dist = DisturbanceSignal::zero(1);
        let cost = CostFn::quadratic(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let class = ClassParams { kappa: 2.0, gamma: 0.5 };
        let res = best_in_hindsight(&sys, &dist, &cost, 5.0, 0.1, class).unwrap();
        assert_eq!(res.j_star, 0.0);
        assert_eq!(res.k_star[(0, 0)], 0.0);
    }

    #[test]
    fn scalar_search_beats_named_gains() {
        let sys = SystemDynamics::new(DMatrix::from_element(1, 1, 1.0), DMatrix::identity(1, 1)).unwrap();
        let spec = SinusoidSpec {
            amplitude: 0.5,
            frequency: 1.0,
            phase: Some(0.0),
            direction: Some(DVector::from_element(1, 1.0)),
        };
        let dist = DisturbanceSignal::sinusoid(1, spec, 0.5, 0).unwrap();
        let cost = CostFn::quadratic(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let class = ClassParams { kappa: 10.0, gamma: 0.01 };
        let res = best_in_hindsight(&sys, &dist, &cost, 10.0, 0.1, class).unwrap();
        let grid = SampleGrid::new(10.0, 0.1).unwrap();
        let replay = Replay::new(&sys, &dist, &cost, grid, DEFAULT_SUBSTEPS).unwrap();
        let lqr = DMatrix::from_element(1, 1, 1.0 + 2f64.sqrt());
        assert!(res.j_star <= replay.eval(&lqr).unwrap());
        assert_eq!(res.starts, 8);
        assert!(res.trace.iter().all(|(_, j)| *j >= res.j_star));
    }

    #[test]
    fn ordering_breaks_ties_by_norm_then_entries() {
        let a = (DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), 1.0);
        let b = (DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), 1.0);
        let c = (DMatrix::from_row_slice(1, 2, &[0.0, 0.5]), 1.0);
        assert_eq!(candidate_order(&b, &a), Ordering::Less);
        assert_eq!(candidate_order(&c, &b), Ordering::Less);
    }
}
