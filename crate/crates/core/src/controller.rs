//! The two-level online controller: a fast sampled DAC loop with a slow
//! projected OGD-with-memory update, plus the regret decomposition of a run
//! against a hindsight baseline.
//!
//! Step sizes are stated for the unscaled parameters `M~ = M / h`; the
//! update applied to the stored blocks is therefore `eta h^2 grad_M g`.

use nalgebra::{DMatrix, DVector};

use crate::bench::baseline::BaselineResult;
use crate::bench::cost::CostFn;
use crate::bench::replay::replay_hash;
use crate::dac::{dac_action, estimate_disturbance, ClassSpec, DacParams, DecayBase, NoiseBuffer};
use crate::error::{Error, Result};
use crate::linsys::{cost_integral, integrate_step, DisturbanceSignal, SystemDynamics, DEFAULT_SUBSTEPS};
use crate::oco::{minimize_total, ogdm_step, MemoryLoss, SampleGrid, MINIMIZE_TOL};
use crate::stability::{require_certificate, StablePolicyCert};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSize {
    /// `eta0 sqrt(m / (T h))`; `eta0` defaults to
    /// `1 / (G max(D, 1) kappa^2 kappa_B max(W0, 1))` from running `D`, `W0`.
    Auto { eta0: Option<f64> },
    Fixed(f64),
}

impl Default for StepSize {
    fn default() -> Self {
        StepSize::Auto { eta0: None }
    }
}

/// Multipliers in `h = c_h / sqrt(T)`, `m = ceil(c_m / h)`, `H = ceil(c_H ln max(T, e))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleConstants {
    pub c_h: f64,
    pub c_m: f64,
    /// `None` means `1 / gamma`.
    pub c_memory: Option<f64>,
}

impl Default for ScheduleConstants {
    fn default() -> Self {
        Self {
            c_h: 1.0,
            c_m: 1.0,
            c_memory: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub h: f64,
    pub m: usize,
    /// `H`, in slow steps.
    pub memory: usize,
    pub eta: StepSize,
}

impl Schedule {
    pub fn l(&self) -> usize {
        self.memory * self.m
    }
}

pub fn default_schedule(horizon: f64, gamma: f64) -> Result<Schedule> {
    default_schedule_with(horizon, gamma, ScheduleConstants::default())
}

/// `c_h / sqrt(T)`.
pub fn auto_h(horizon: f64, c_h: f64) -> f64 {
    c_h / horizon.sqrt()
}

/// `ceil(c_m / h)`, at least 1.
pub fn auto_m(h: f64, c_m: f64) -> usize {
    ((c_m / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// `ceil(c_H ln max(T, e))` with `c_H = 1 / gamma` unless given.
pub fn auto_memory(horizon: f64, gamma: f64, c_memory: Option<f64>) -> usize {
    let c = c_memory.unwrap_or(1.0 / gamma);
    let log_t = horizon.max(std::f64::consts::E).ln();
    ((c * log_t) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

pub fn default_schedule_with(horizon: f64, gamma: f64, c: ScheduleConstants) -> Result<Schedule> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    if !(c.c_h > 0.0 && c.c_m > 0.0) || c.c_memory.is_some_and(|v| !(v > 0.0)) {
        return Err(Error::invalid("schedule constants must be positive"));
    }
    let h = auto_h(horizon, c.c_h);
    let m = auto_m(h, c.c_m);
    let memory = auto_memory(horizon, gamma, c.c_memory);
    let log_t = horizon.max(std::f64::consts::E).ln();
    let n = SampleGrid::new(horizon, h)?.n;
    let l = memory * m;
    if l > n {
        let max_memory = n / m;
        let suggestion = if max_memory == 0 {
            format!("m = {m} alone exceeds n; lower c_m below {:.3}", n as f64 * h)
        } else {
            format!("lower c_H to at most {:.3} or raise T", max_memory as f64 / log_t)
        };
        return Err(Error::InfeasibleSchedule { l, n, suggestion });
    }
    Ok(Schedule {
        h,
        m,
        memory,
        eta: StepSize::default(),
    })
}

#[derive(Clone, Debug)]
pub struct ControllerConfig {
    pub horizon: f64,
    pub h: f64,
    /// `H`, in slow steps.
    pub memory: usize,
    pub m: usize,
    pub eta: StepSize,
    pub gain: DMatrix<f64>,
    pub kappa: f64,
    pub gamma: f64,
    /// Class radius `a`; `None` means `2 kappa^3`.
    pub radius_a: Option<f64>,
    pub decay_base: DecayBase,
    pub substeps: usize,
}

impl ControllerConfig {
    pub fn from_schedule(horizon: f64, schedule: &Schedule, gain: DMatrix<f64>, kappa: f64, gamma: f64) -> Self {
        Self {
            horizon,
            h: schedule.h,
            memory: schedule.memory,
            m: schedule.m,
            eta: schedule.eta,
            gain,
            kappa,
            gamma,
            radius_a: None,
            decay_base: DecayBase::default(),
            substeps: DEFAULT_SUBSTEPS,
        }
    }

    pub fn l(&self) -> usize {
        self.memory * self.m
    }

    pub fn grid(&self) -> Result<SampleGrid> {
        SampleGrid::new(self.horizon, self.h)
    }

    pub fn validate(&self) -> Result<SampleGrid> {
        let grid = self.grid()?;
        if self.m == 0 || self.memory == 0 {
            return Err(Error::invalid("H and m must be at least 1"));
        }
        if self.substeps < 2 {
            return Err(Error::QuadratureResolution { substeps: self.substeps });
        }
        if self.l() > grid.n {
            return Err(Error::InfeasibleSchedule {
                l: self.l(),
                n: grid.n,
                suggestion: format!("use H <= {} at m = {}", grid.n / self.m, self.m),
            });
        }
        match self.eta {
            StepSize::Fixed(e) if !(e >= 0.0) || !e.is_finite() => {
                return Err(Error::invalid(format!("step size must be finite and >= 0, got {e}")))
            }
            StepSize::Auto { eta0: Some(e) } if !(e >= 0.0) || !e.is_finite() => {
                return Err(Error::invalid(format!("eta0 must be finite and >= 0, got {e}")))
            }
            _ => {}
        }
        Ok(grid)
    }
}

/// One fast sample.
#[derive(Clone, Debug)]
pub struct SampleRecord {
    pub t: f64,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    /// Estimate of the disturbance over `[t, t + h]`, known only after the step.
    pub w_hat: DVector<f64>,
    /// `c(t, x, u)` at the sample.
    pub cost_sample: f64,
    /// Cost integrated over the held interval.
    pub cost_interval: f64,
    pub cost_cum: f64,
    pub slow_k: usize,
    pub param_hash: String,
}

/// One slow update, taken at the end of block `k`.
#[derive(Clone, Debug)]
pub struct SlowRecord {
    pub k: usize,
    /// Hash of the parameters used during block `k`.
    pub param_hash: String,
    pub g_value: f64,
    pub grad_norm: f64,
    /// Step in the unscaled parameterization.
    pub eta: f64,
    pub finite_difference: bool,
}

#[derive(Clone, Debug)]
pub struct RunLog {
    pub config: ControllerConfig,
    pub system: SystemDynamics,
    pub grid: SampleGrid,
    pub class: ClassSpec,
    pub certificate: StablePolicyCert,
    pub samples: Vec<SampleRecord>,
    pub slow: Vec<SlowRecord>,
    /// `params[k]` is in force during block `k`; the last entry follows the final update.
    pub params: Vec<DacParams>,
    pub replay_hash: String,
    pub total_cost: f64,
    /// Largest `||x_r||` and `||u_r||` seen.
    pub max_state: f64,
    pub max_action: f64,
    pub w0: f64,
}

impl RunLog {
    pub fn w_hat(&self) -> Vec<DVector<f64>> {
        self.samples.iter().map(|s| s.w_hat.clone()).collect()
    }

    pub fn final_params(&self) -> &DacParams {
        self.params.last().expect("at least the initial parameters")
    }

    /// `sum_r (h_r / h) c(t_r, x_r, u_r)`.
    pub fn weighted_sample_sum(&self) -> f64 {
        self.samples
            .iter()
            .enumerate()
            .map(|(r, s)| self.grid.weight(r) * s.cost_sample)
            .sum()
    }

    /// `max(max ||x_r||, max ||u_r||)`.
    pub fn diameter(&self) -> f64 {
        self.max_state.max(self.max_action)
    }
}

/// Runs the two-level controller from `x_0 = 0` with `M_0 = 0`.
pub fn run(sys: &SystemDynamics, dist: &DisturbanceSignal, cost: &CostFn, cfg: &ControllerConfig) -> Result<RunLog> {
    let grid = cfg.validate()?;
    if dist.dim() != sys.state_dim() {
        return Err(Error::dim("disturbance and state dimensions differ"));
    }
    let certificate = require_certificate(sys, &cfg.gain, cfg.h, cfg.kappa, cfg.gamma)?;
    let (nx, nu) = (sys.state_dim(), sys.input_dim());
    let l = cfg.l();
    let class = ClassSpec::for_certificate(cfg.kappa, cfg.gamma, cfg.h, l, cfg.decay_base, cfg.radius_a, nu, nx)?;
    let p = grid.slow_blocks(cfg.m);

    let mut params = vec![DacParams::zeros(&class)];
    let mut buf = NoiseBuffer::for_window(nx, l);
    let mut history: Vec<DVector<f64>> = Vec::with_capacity(grid.n);
    let mut samples = Vec::with_capacity(grid.n);
    let mut slow = Vec::with_capacity(p);
    let mut x = DVector::zeros(nx);
    let mut cum = 0.0;
    let (mut max_state, mut max_action) = (0.0f64, 0.0f64);

    for k in 0..p {
        let current = params[k].clone();
        let hash = current.param_hash();
        for r in grid.block_range(k, cfg.m) {
            let t = grid.time(r);
            let len = grid.interval(r);
            let u = dac_action(&cfg.gain, &x, &current, &buf)?;
            let seg = integrate_step(sys, dist, t, &x, &u, len, cfg.substeps)?;
            let c_int = cost_integral(&seg, cost)?;
            let w_hat = estimate_disturbance(sys, &x, &u, &seg.x1, len)?;
            buf.push(w_hat.clone())?;
            history.push(w_hat.clone());
            cum += c_int;
            max_state = max_state.max(x.norm());
            max_action = max_action.max(u.norm());
            samples.push(SampleRecord {
                t,
                cost_sample: cost.eval(t, &x, &u),
                cost_interval: c_int,
                cost_cum: cum,
                slow_k: k,
                param_hash: hash.clone(),
                x,
                u,
                w_hat,
            });
            x = seg.x1;
        }
        let loss = MemoryLoss::new(sys, &cfg.gain, cost, grid, cfg.m, l, &history)?;
        let (g_value, grad) = loss.value_and_grad_g(&current, k)?;
        let d = max_state.max(max_action);
        let eta = match cfg.eta {
            StepSize::Fixed(e) => e,
            StepSize::Auto { eta0 } => {
                let eta0 = eta0.unwrap_or_else(|| {
                    1.0 / (cost.g().max(f64::MIN_POSITIVE)
                        * d.max(1.0)
                        * cfg.kappa.powi(2)
                        * sys.kappa_b().max(f64::MIN_POSITIVE)
                        * buf.w0().max(1.0))
                });
                eta0 * (cfg.m as f64 / (cfg.horizon * cfg.h)).sqrt()
            }
        };
        let next = ogdm_step(&current, &grad, eta * cfg.h * cfg.h)?;
        slow.push(SlowRecord {
            k,
            param_hash: hash,
            g_value,
            grad_norm: grad.norm(),
            eta,
            finite_difference: grad.finite_difference,
        });
        params.push(next);
    }

    Ok(RunLog {
        config: cfg.clone(),
        system: sys.clone(),
        grid,
        class,
        certificate,
        samples,
        slow,
        params,
        replay_hash: replay_hash(dist, &grid, cfg.substeps),
        total_cost: cum,
        max_state,
        max_action,
        w0: buf.w0(),
    })
}

/// Cumulative decomposition at the end of a slow block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegretPoint {
    pub t: f64,
    pub regret: f64,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
}

/// Measured regret and its four-way split
/// `regret = R0 + h (R1 + R2 + R3)`.
#[derive(Clone, Debug)]
pub struct RegretReport {
    pub j_alg: f64,
    pub j_baseline: f64,
    pub regret: f64,
    /// Integral minus `h`-weighted sample sums, algorithm minus baseline.
    pub r0: f64,
    /// Actual sample costs minus ideal costs of the played windows.
    pub r1: f64,
    /// Ideal costs of the played windows minus the best fixed parameters.
    pub r2: f64,
    /// Best fixed parameters minus the baseline's sample costs.
    pub r3: f64,
    /// `sum_k f_k` over the played windows.
    pub ideal_total: f64,
    /// `min_M sum_k g_k(M)` as found.
    pub min_total: f64,
    pub min_params: DacParams,
    pub min_iterations: usize,
    pub min_converged: bool,
    pub min_gap: f64,
    pub min_tolerance: f64,
    pub series: Vec<RegretPoint>,
}

impl RegretReport {
    /// `|R0 + h (R1 + R2 + R3) - regret| / max(|regret|, tiny)`.
    pub fn identity_error(&self, h: f64) -> f64 {
        let lhs = self.r0 + h * (self.r1 + self.r2 + self.r3);
        (lhs - self.regret).abs() / self.regret.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn regret_diagnostics(log: &RunLog, baseline: &BaselineResult, cost: &CostFn) -> Result<RegretReport> {
    if log.replay_hash != baseline.replay_hash {
        return Err(Error::IncomparableRuns {
            expected: log.replay_hash.clone(),
            found: baseline.replay_hash.clone(),
        });
    }
    let grid = log.grid;
    let h = grid.h;
    let cfg = &log.config;
    let star = &baseline.trajectory;
    if star.sample_cost.len() != grid.n {
        return Err(Error::IncomparableRuns {
            expected: format!("{} samples", grid.n),
            found: format!("{} samples", star.sample_cost.len()),
        });
    }
    let w_hat = log.w_hat();
    let l = cfg.l();
    let loss = MemoryLoss::new(&log.system, &cfg.gain, cost, grid, cfg.m, l, &w_hat)?;
    let p = grid.slow_blocks(cfg.m);
    let hh = cfg.memory;

    let mut ideal = Vec::with_capacity(p);
    for k in 0..p {
        let window: Vec<&DacParams> = (0..=hh)
            .map(|j| &log.params[(k + j).saturating_sub(hh)])
            .collect();
        ideal.push(loss.ideal_cost(&window, k)?);
    }
    let zero = DacParams::zeros(&log.class);
    let min = minimize_total(&loss, &log.class, &[log.final_params(), &zero])?;
    let min_blocks = loss.per_block(&min.params);

    let j_alg = log.total_cost;
    let j_baseline = baseline.j_star;
    let regret = j_alg - j_baseline;
    let s_alg = log.weighted_sample_sum();
    let s_star = star.weighted_sample_sum(&grid);
    let ideal_total: f64 = ideal.iter().sum();
    let r0 = regret - h * (s_alg - s_star);
    let r1 = s_alg - ideal_total;
    let r2 = ideal_total - min.value;
    let r3 = min.value - s_star;

    let mut series = Vec::with_capacity(p);
    let mut acc = RegretPoint {
        t: 0.0,
        regret: 0.0,
        r0: 0.0,
        r1: 0.0,
        r2: 0.0,
        r3: 0.0,
    };
    for k in 0..p {
        let range = grid.block_range(k, cfg.m);
        let (mut ja, mut js, mut sa, mut ss) = (0.0, 0.0, 0.0, 0.0);
        for r in range.clone() {
            ja += log.samples[r].cost_interval;
            js += star.interval_cost[r];
            sa += grid.weight(r) * log.samples[r].cost_sample;
            ss += grid.weight(r) * star.sample_cost[r];
        }
        acc.t = grid.time(range.end - 1) + grid.interval(range.end - 1);
        acc.regret += ja - js;
        acc.r0 += (ja - js) - h * (sa - ss);
        acc.r1 += sa - ideal[k];
        acc.r2 += ideal[k] - min_blocks[k];
        acc.r3 += min_blocks[k] - ss;
        series.push(acc);
    }

    Ok(RegretReport {
        j_alg,
        j_baseline,
        regret,
        r0,
        r1,
        r2,
        r3,
        ideal_total,
        min_total: min.value,
        min_params: min.params,
        min_iterations: min.iterations,
        min_converged: min.converged,
        min_gap: min.gap_estimate,
        min_tolerance: MINIMIZE_TOL,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::baseline::{search, BaselineOptions, ClassParams, SearchMethod};
    use crate::bench::replay::Replay;
    use crate::linsys::SinusoidSpec;

    fn scalar() -> (SystemDynamics, DisturbanceSignal, CostFn) {
        let sys = SystemDynamics::new(DMatrix::from_element(1, 1, 1.0), DMatrix::identity(1, 1)).unwrap();
        let spec = SinusoidSpec {
            amplitude: 1.0,
            frequency: 1.0,
            phase: Some(0.0),
            direction: Some(DVector::from_element(1, 1.0)),
        };
        let dist = DisturbanceSignal::sinusoid(1, spec, 0.5, 0).unwrap();
        let cost = CostFn::quadratic(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        (sys, dist, cost)
    }

    fn cfg(horizon: f64, h: f64, memory: usize, m: usize, eta: StepSize) -> ControllerConfig {
        ControllerConfig {
            horizon,
            h,
            memory,
            m,
            eta,
            gain: DMatrix::from_element(1, 1, 2.0),
            kappa: 2.0,
            gamma: 0.5,
            radius_a: None,
            decay_base: DecayBase::OneMinusHGamma,
            substeps: 64,
        }
    }

    #[test]
    fn schedule_examples() {
        let s = default_schedule(100.0, 0.5).unwrap();
        assert!((s.h - 0.1).abs() < 1e-15);
        assert_eq!((s.m, s.memory), (10, 10));
        let s = default_schedule(10_000.0, 0.5).unwrap();
        assert!((s.h - 0.01).abs() < 1e-15);
        let err = default_schedule(4.0, 0.01).unwrap_err();
        assert!(matches!(err, Error::InfeasibleSchedule { .. }), "{err}");
    }

    #[test]
    fn zero_disturbance_stays_at_origin() {
        let (sys, _, cost) = scalar();
        let dist = DisturbanceSignal::zero(1);
        let log = run(&sys, &dist, &cost, &cfg(5.0, 0.05, 2, 10, StepSize::default())).unwrap();
        assert_eq!(log.samples.len(), 100);
        assert!(log.samples.iter().all(|s| s.x[0] == 0.0 && s.u[0] == 0.0));
        assert_eq!(log.total_cost, 0.0);
    }

    #[test]
    fn frozen_learning_matches_linear_policy() {
        let (sys, dist, cost) = scalar();
        let c = cfg(5.0, 0.05, 2, 10, StepSize::Fixed(0.0));
        let log = run(&sys, &dist, &cost, &c).unwrap();
        let replay = Replay::new(&sys, &dist, &cost, log.grid, 64).unwrap();
        let direct = replay.trajectory_direct(&c.gain).unwrap();
        for (s, x) in log.samples.iter().zip(&direct.x) {
            assert_eq!(s.x, *x);
        }
        assert_eq!(log.total_cost, direct.total);
    }

    #[test]
    fn parameters_change_only_at_block_boundaries() {
        let (sys, dist, cost) = scalar();
        let log = run(&sys, &dist, &cost, &cfg(5.0, 0.05, 2, 10, StepSize::default())).unwrap();
        for w in log.samples.windows(2) {
            if w[0].slow_k == w[1].slow_k {
                assert_eq!(w[0].param_hash, w[1].param_hash);
            }
        }
        assert_eq!(log.params.len(), log.slow.len() + 1);
        assert!(log.params.iter().all(|p| p.is_feasible()));
    }

    #[test]
    fn decomposition_is_an_identity() {
        let (sys, dist, cost) = scalar();
        let c = cfg(6.0, 0.05, 2, 10, StepSize::default());
        let log = run(&sys, &dist, &cost, &c).unwrap();
        let replay = Replay::new(&sys, &dist, &cost, log.grid, 64).unwrap();
        let opts = BaselineOptions {
            method: SearchMethod::Grid(crate::bench::baseline::scalar_grid(1.5, 4.0, 0.25)),
            ..Default::default()
        };
        let base = search(&replay, ClassParams { kappa: 2.0, gamma: 0.5 }, &opts).unwrap();
        let rep = regret_diagnostics(&log, &base, &cost).unwrap();
        assert!(rep.identity_error(log.grid.h) < 1e-8, "{rep:?}");
        let last = rep.series.last().unwrap();
        assert!((last.regret - rep.regret).abs() < 1e-9 * rep.regret.abs().max(1.0));
    }

    #[test]
    fn mismatched_replays_are_rejected() {
        let (sys, dist, cost) = scalar();
        let log = run(&sys, &dist, &cost, &cfg(5.0, 0.05, 2, 10, StepSize::default())).unwrap();
        let other = DisturbanceSignal::zero(1);
        let replay = Replay::new(&sys, &other, &cost, log.grid, 64).unwrap();
        let opts = BaselineOptions {
            method: SearchMethod::Grid(vec![DMatrix::from_element(1, 1, 2.0)]),
            ..Default::default()
        };
        let base = search(&replay, ClassParams { kappa: 2.0, gamma: 0.5 }, &opts).unwrap();
        assert!(matches!(
            regret_diagnostics(&log, &base, &cost),
            Err(Error::IncomparableRuns { .. })
        ));
    }

    #[test]
    fn uncertified_step_is_refused() {
        let (sys, dist, cost) = scalar();
        let mut c = cfg(5.0, 0.05, 2, 10, StepSize::default());
        c.gain = DMatrix::from_element(1, 1, 0.5);
        assert!(matches!(run(&sys, &dist, &cost, &c), Err(Error::CertificationMismatch { .. })));
    }
}
