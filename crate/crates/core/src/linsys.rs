//! Continuous-time linear dynamics `dx/dt = A x + B u + w(t)`, smooth bounded
//! disturbance signals, and a fixed-step RK4 integrator used as the "true"
//! plant between controller samples.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::cost::CostFn;
use crate::error::{Error, Result};
use crate::linalg::{all_finite_mat, all_finite_vec, digest_f64, spectral_norm};

/// Default number of RK4 substeps per controller sample.
pub const DEFAULT_SUBSTEPS: usize = 64;

const NORM_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SystemDynamics {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    kappa_a: f64,
    kappa_b: f64,
}

impl SystemDynamics {
    /// Uses the measured operator norms as the declared bounds.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let kappa_a = spectral_norm(&a);
        let kappa_b = spectral_norm(&b);
        Self::with_bounds(a, b, kappa_a, kappa_b)
    }

    pub fn with_bounds(a: DMatrix<f64>, b: DMatrix<f64>, kappa_a: f64, kappa_b: f64) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::dim(format!("A must be square and non-empty, got {:?}", a.shape())));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::dim(format!(
                "B must be {}x(d_u >= 1), got {:?}",
                a.nrows(),
                b.shape()
            )));
        }
        if !all_finite_mat(&a) || !all_finite_mat(&b) {
            return Err(Error::invalid("system matrices must be finite"));
        }
        if !(kappa_a >= 0.0 && kappa_b >= 0.0) {
            return Err(Error::invalid("norm bounds must be non-negative"));
        }
        let na = spectral_norm(&a);
        let nb = spectral_norm(&b);
        if na > kappa_a * (1.0 + NORM_SLACK) + NORM_SLACK {
            return Err(Error::invalid(format!("||A|| = {na} exceeds kappa_A = {kappa_a}")));
        }
        if nb > kappa_b * (1.0 + NORM_SLACK) + NORM_SLACK {
            return Err(Error::invalid(format!("||B|| = {nb} exceeds kappa_B = {kappa_b}")));
        }
        Ok(Self { a, b, kappa_a, kappa_b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn kappa_a(&self) -> f64 {
        self.kappa_a
    }

    pub fn kappa_b(&self) -> f64 {
        self.kappa_b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `A - B K`.
    pub fn closed_loop(&self, gain: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a - &self.b * gain
    }

    /// `I + h (A - B K)`, the first-order sampled closed loop.
    pub fn sampled_closed_loop(&self, gain: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
        let n = self.state_dim();
        DMatrix::identity(n, n) + self.closed_loop(gain) * h
    }

    pub(crate) fn check_gain(&self, gain: &DMatrix<f64>) -> Result<()> {
        if gain.shape() != (self.input_dim(), self.state_dim()) {
            return Err(Error::dim(format!(
                "gain must be {}x{}, got {:?}",
                self.input_dim(),
                self.state_dim(),
                gain.shape()
            )));
        }
        Ok(())
    }
}

/// One sinusoidal component `amplitude * sin(frequency * t + phase) * direction`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub direction: DVector<f64>,
}

/// A component whose phase and/or direction may be left to the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SinusoidSpec {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: Option<f64>,
    pub direction: Option<DVector<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DisturbanceKind {
    Zero,
    Constant(DVector<f64>),
    Sinusoid(Sinusoid),
    SumOfSinusoids(Vec<Sinusoid>),
    /// `level * (1 + tanh((t - onset) / width)) / 2`
    SmoothRamp {
        level: DVector<f64>,
        onset: f64,
        width: f64,
    },
}

/// A pre-committed disturbance `t -> w(t)` with `||w|| <= W` and `||dw/dt|| <= W`.
///
/// The bound is enforced when the signal is built: the raw signal is scaled by
/// `min(1, W / sup||w||, W / sup||dw/dt||)` using the analytic suprema of each
/// kind, so evaluation never needs clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceSignal {
    kind: DisturbanceKind,
    dim: usize,
    bound: f64,
    seed: u64,
    scale: f64,
}

impl DisturbanceSignal {
    pub fn zero(dim: usize) -> Self {
        Self {
            kind: DisturbanceKind::Zero,
            dim,
            bound: 0.0,
            seed: 0,
            scale: 0.0,
        }
    }

    pub fn constant(value: DVector<f64>, bound: f64) -> Result<Self> {
        check_bound(bound)?;
        let dim = value.len();
        let scale = scale_for(bound, value.norm(), 0.0);
        Ok(Self {
            kind: DisturbanceKind::Constant(value),
            dim,
            bound,
            seed: 0,
            scale,
        })
    }

    pub fn sinusoid(dim: usize, spec: SinusoidSpec, bound: f64, seed: u64) -> Result<Self> {
        let mut comps = resolve_components(dim, &[spec], seed)?;
        let comp = comps.pop().expect("one component");
        let (sw, sd) = sinusoid_sup(std::slice::from_ref(&comp));
        check_bound(bound)?;
        Ok(Self {
            kind: DisturbanceKind::Sinusoid(comp),
            dim,
            bound,
            seed,
            scale: scale_for(bound, sw, sd),
        })
    }

    /// Sum of sinusoids; unspecified phases are drawn uniformly from `[0, 2pi)`
    /// and unspecified directions are random unit vectors, both from `seed`.
    pub fn sum_of_sinusoids(dim: usize, specs: &[SinusoidSpec], bound: f64, seed: u64) -> Result<Self> {
        check_bound(bound)?;
        if specs.is_empty() {
            return Err(Error::invalid("sum of sinusoids needs at least one component"));
        }
        let comps = resolve_components(dim, specs, seed)?;
        let (sw, sd) = sinusoid_sup(&comps);
        Ok(Self {
            kind: DisturbanceKind::SumOfSinusoids(comps),
            dim,
            bound,
            seed,
            scale: scale_for(bound, sw, sd),
        })
    }

    pub fn smooth_ramp(level: DVector<f64>, onset: f64, width: f64, bound: f64) -> Result<Self> {
        check_bound(bound)?;
        if !(width > 0.0) {
            return Err(Error::invalid("ramp width must be positive"));
        }
        let dim = level.len();
        let sw = level.norm();
        let sd = sw / (2.0 * width);
        Ok(Self {
            kind: DisturbanceKind::SmoothRamp { level, onset, width },
            dim,
            bound,
            seed: 0,
            scale: scale_for(bound, sw, sd),
        })
    }

    pub fn kind(&self) -> &DisturbanceKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Declared bound `W` on `||w||` and `||dw/dt||`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Multiplier applied to the raw signal to honour the declared bound.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, DisturbanceKind::Zero) || self.scale == 0.0
    }

    /// Signal value and analytic time derivative at `t`.
    pub fn eval(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let mut w = DVector::zeros(self.dim);
        let mut wd = DVector::zeros(self.dim);
        self.accumulate(t, &mut w, Some(&mut wd));
        (w, wd)
    }

    pub fn value(&self, t: f64) -> DVector<f64> {
        let mut w = DVector::zeros(self.dim);
        self.accumulate(t, &mut w, None);
        w
    }

    /// Adds `w(t)` into `out` without allocating.
    pub fn add_value_to(&self, t: f64, out: &mut DVector<f64>) {
        self.accumulate(t, out, None);
    }

    fn accumulate(&self, t: f64, w: &mut DVector<f64>, mut wd: Option<&mut DVector<f64>>) {
        let s = self.scale;
        match &self.kind {
            DisturbanceKind::Zero => {}
            DisturbanceKind::Constant(c) => w.axpy(s, c, 1.0),
            DisturbanceKind::Sinusoid(c) => add_sinusoid(c, s, t, w, wd),
            DisturbanceKind::SumOfSinusoids(cs) => {
                for c in cs {
                    add_sinusoid(c, s, t, w, wd.as_deref_mut());
                }
            }
            DisturbanceKind::SmoothRamp { level, onset, width } => {
                let z = (t - onset) / width;
                let th = z.tanh();
                w.axpy(s * 0.5 * (1.0 + th), level, 1.0);
                if let Some(d) = wd {
                    d.axpy(s * 0.5 * (1.0 - th * th) / width, level, 1.0);
                }
            }
        }
    }

    /// Digest of everything that determines the signal, for replay matching.
    pub fn fingerprint(&self) -> String {
        let mut vals = vec![self.dim as f64, self.bound, self.seed as f64, self.scale];
        match &self.kind {
            DisturbanceKind::Zero => vals.push(0.0),
            DisturbanceKind::Constant(c) => {
                vals.push(1.0);
                vals.extend(c.iter());
            }
            DisturbanceKind::Sinusoid(c) => {
                vals.push(2.0);
                push_sinusoid(&mut vals, c);
            }
            DisturbanceKind::SumOfSinusoids(cs) => {
                vals.push(3.0);
                for c in cs {
                    push_sinusoid(&mut vals, c);
                }
            }
            DisturbanceKind::SmoothRamp { level, onset, width } => {
                vals.push(4.0);
                vals.extend(level.iter());
                vals.push(*onset);
                vals.push(*width);
            }
        }
        digest_f64(vals)
    }
}

fn push_sinusoid(vals: &mut Vec<f64>, c: &Sinusoid) {
    vals.extend([c.amplitude, c.frequency, c.phase]);
    vals.extend(c.direction.iter());
}

fn add_sinusoid(c: &Sinusoid, s: f64, t: f64, w: &mut DVector<f64>, wd: Option<&mut DVector<f64>>) {
    let arg = c.frequency * t + c.phase;
    w.axpy(s * c.amplitude * arg.sin(), &c.direction, 1.0);
    if let Some(d) = wd {
        d.axpy(s * c.amplitude * c.frequency * arg.cos(), &c.direction, 1.0);
    }
}

fn check_bound(bound: f64) -> Result<()> {
    if !(bound >= 0.0) || !bound.is_finite() {
        return Err(Error::invalid(format!("disturbance bound W must be finite and >= 0, got {bound}")));
    }
    Ok(())
}

fn scale_for(bound: f64, sup_w: f64, sup_wdot: f64) -> f64 {
    let mut s: f64 = 1.0;
    if sup_w > 0.0 {
        s = s.min(bound / sup_w);
    }
    if sup_wdot > 0.0 {
        s = s.min(bound / sup_wdot);
    }
    s
}

fn sinusoid_sup(comps: &[Sinusoid]) -> (f64, f64) {
    comps.iter().fold((0.0, 0.0), |(sw, sd), c| {
        let a = c.amplitude.abs() * c.direction.norm();
        (sw + a, sd + a * c.frequency.abs())
    })
}

fn resolve_components(dim: usize, specs: &[SinusoidSpec], seed: u64) -> Result<Vec<Sinusoid>> {
    if dim == 0 {
        return Err(Error::dim("disturbance dimension must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    specs
        .iter()
        .map(|spec| {
            // Draw both values unconditionally so explicit entries do not shift later draws.
            let drawn_phase: f64 = rng.random_range(0.0..TAU);
            let mut drawn_dir = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            if drawn_dir.norm() == 0.0 {
                drawn_dir[0] = 1.0;
            }
            drawn_dir.normalize_mut();
            let direction = match &spec.direction {
                Some(d) if d.len() != dim => {
                    return Err(Error::dim(format!("sinusoid direction has length {}, expected {dim}", d.len())))
                }
                Some(d) => d.clone(),
                None => drawn_dir,
            };
            if !spec.amplitude.is_finite() || !spec.frequency.is_finite() {
                return Err(Error::invalid("sinusoid amplitude and frequency must be finite"));
            }
            Ok(Sinusoid {
                amplitude: spec.amplitude,
                frequency: spec.frequency,
                phase: spec.phase.unwrap_or(drawn_phase),
                direction,
            })
        })
        .collect()
}

/// Result of integrating one held-action interval.
#[derive(Clone, Debug)]
pub struct TrajectorySegment {
    pub t0: f64,
    pub h: f64,
    pub x0: DVector<f64>,
    pub u: DVector<f64>,
    pub x1: DVector<f64>,
    /// `(time, state)` at every substep boundary, including both endpoints.
    pub substates: Option<Vec<(f64, DVector<f64>)>>,
}

impl TrajectorySegment {
    pub fn substeps(&self) -> usize {
        self.substates.as_ref().map_or(0, |s| s.len().saturating_sub(1))
    }
}

/// Classical RK4 over `substeps` uniform substeps of `dx/dt = A x + B u + w(t)`
/// with `u` held constant on `[t0, t0 + h]`.
pub fn integrate_step(
    sys: &SystemDynamics,
    dist: &DisturbanceSignal,
    t0: f64,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    substeps: usize,
) -> Result<TrajectorySegment> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("interval h must be positive, got {h}")));
    }
    if substeps == 0 {
        return Err(Error::invalid("substeps must be >= 1"));
    }
    let n = sys.state_dim();
    if x0.len() != n || u.len() != sys.input_dim() || dist.dim() != n {
        return Err(Error::dim("state, action or disturbance dimension does not match the system"));
    }
    let bu = sys.b() * u;
    let dt = h / substeps as f64;
    let mut rk = Rk4Work::new(n);
    let mut x = x0.clone();
    let mut substates = Vec::with_capacity(substeps + 1);
    substates.push((t0, x.clone()));
    for j in 0..substeps {
        let t = t0 + j as f64 * dt;
        rk.step(sys.a(), &bu, dist, t, dt, &mut x);
        let t_next = if j + 1 == substeps { t0 + h } else { t0 + (j + 1) as f64 * dt };
        if !all_finite_vec(&x) {
            return Err(Error::IntegrationDivergence { time: t_next });
        }
        substates.push((t_next, x.clone()));
    }
    Ok(TrajectorySegment {
        t0,
        h,
        x0: x0.clone(),
        u: u.clone(),
        x1: x,
        substates: Some(substates),
    })
}

/// Scratch space for one RK4 step of `dx/dt = A x + c + w(t)`.
pub(crate) struct Rk4Work {
    k1: DVector<f64>,
    k2: DVector<f64>,
    k3: DVector<f64>,
    k4: DVector<f64>,
    tmp: DVector<f64>,
}

impl Rk4Work {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            k1: DVector::zeros(n),
            k2: DVector::zeros(n),
            k3: DVector::zeros(n),
            k4: DVector::zeros(n),
            tmp: DVector::zeros(n),
        }
    }

    fn rhs(a: &DMatrix<f64>, c: &DVector<f64>, dist: &DisturbanceSignal, t: f64, x: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv(1.0, a, x, 0.0);
        *out += c;
        dist.add_value_to(t, out);
    }

    pub(crate) fn step(
        &mut self,
        a: &DMatrix<f64>,
        c: &DVector<f64>,
        dist: &DisturbanceSignal,
        t: f64,
        dt: f64,
        x: &mut DVector<f64>,
    ) {
        Self::rhs(a, c, dist, t, x, &mut self.k1);
        self.tmp.copy_from(x);
        self.tmp.axpy(0.5 * dt, &self.k1, 1.0);
        Self::rhs(a, c, dist, t + 0.5 * dt, &self.tmp, &mut self.k2);
        self.tmp.copy_from(x);
        self.tmp.axpy(0.5 * dt, &self.k2, 1.0);
        Self::rhs(a, c, dist, t + 0.5 * dt, &self.tmp, &mut self.k3);
        self.tmp.copy_from(x);
        self.tmp.axpy(dt, &self.k3, 1.0);
        Self::rhs(a, c, dist, t + dt, &self.tmp, &mut self.k4);
        x.axpy(dt / 6.0, &self.k1, 1.0);
        x.axpy(dt / 3.0, &self.k2, 1.0);
        x.axpy(dt / 3.0, &self.k3, 1.0);
        x.axpy(dt / 6.0, &self.k4, 1.0);
    }
}

/// Composite Simpson weights for `count` uniform intervals of width `dt`.
/// Odd counts close with a 3/8-rule panel on the last three intervals.
pub(crate) fn simpson_weights(count: usize, dt: f64) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::QuadratureResolution { substeps: count });
    }
    let mut w = vec![0.0; count + 1];
    let simpson_end = if count.is_multiple_of(2) { count } else { count - 3 };
    let mut i = 0;
    while i < simpson_end {
        w[i] += dt / 3.0;
        w[i + 1] += 4.0 * dt / 3.0;
        w[i + 2] += dt / 3.0;
        i += 2;
    }
    if count % 2 == 1 {
        let s = simpson_end;
        w[s] += 3.0 * dt / 8.0;
        w[s + 1] += 9.0 * dt / 8.0;
        w[s + 2] += 9.0 * dt / 8.0;
        w[s + 3] += 3.0 * dt / 8.0;
    }
    Ok(w)
}

/// Simpson quadrature of `c_t(x_t, u)` over the segment using its recorded substates.
pub fn cost_integral(segment: &TrajectorySegment, cost: &CostFn) -> Result<f64> {
    let subs = segment
        .substates
        .as_ref()
        .ok_or(Error::QuadratureResolution { substeps: 0 })?;
    let count = subs.len().saturating_sub(1);
    let weights = simpson_weights(count, segment.h / count as f64)?;
    Ok(subs
        .iter()
        .zip(weights)
        .map(|((t, x), w)| w * cost.eval(*t, x, &segment.u))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn scalar(a: f64, b: f64) -> SystemDynamics {
        SystemDynamics::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b)).unwrap()
    }

    #[test]
    fn frozen_dynamics_keep_state() {
        let sys = SystemDynamics::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1)).unwrap();
        let x0 = DVector::from_vec(vec![0.3, -1.2]);
        let seg = integrate_step(&sys, &DisturbanceSignal::zero(2), 0.0, &x0, &DVector::from_element(1, 5.0), 1.0, 8).unwrap();
        assert_eq!(seg.x1, x0);
    }

    #[test]
    fn exponential_decay_matches_analytic() {
        let sys = scalar(-1.0, 0.0);
        let seg = integrate_step(
            &sys,
            &DisturbanceSignal::zero(1),
            0.0,
            &DVector::from_element(1, 1.0),
            &DVector::zeros(1),
            1.0,
            64,
        )
        .unwrap();
        assert!((seg.x1[0] - (-1.0f64).exp()).abs() <= 1e-8);
    }

    #[test]
    fn rotation_quarter_turn() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let sys = SystemDynamics::new(a, DMatrix::zeros(2, 1)).unwrap();
        let seg = integrate_step(
            &sys,
            &DisturbanceSignal::zero(2),
            0.0,
            &DVector::from_vec(vec![1.0, 0.0]),
            &DVector::zeros(1),
            FRAC_PI_2,
            128,
        )
        .unwrap();
        assert!((seg.x1[0]).abs() < 1e-9);
        assert!((seg.x1[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn divergence_reports_time() {
        let sys = scalar(1e300, 0.0);
        let err = integrate_step(
            &sys,
            &DisturbanceSignal::zero(1),
            2.0,
            &DVector::from_element(1, 1e300),
            &DVector::zeros(1),
            1.0,
            4,
        )
        .unwrap_err();
        match err {
            Error::IntegrationDivergence { time } => assert!((2.0..=3.0).contains(&time)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disturbance_examples() {
        let z = DisturbanceSignal::zero(3);
        let (w, wd) = z.eval(1.7);
        assert_eq!(w.norm(), 0.0);
        assert_eq!(wd.norm(), 0.0);

        let c = DVector::from_vec(vec![0.2, -0.1]);
        let cs = DisturbanceSignal::constant(c.clone(), 1.0).unwrap();
        let (w, wd) = cs.eval(12.0);
        assert_eq!(w, c);
        assert_eq!(wd.norm(), 0.0);

        let spec = SinusoidSpec {
            amplitude: 0.5,
            frequency: 0.8,
            phase: Some(0.0),
            direction: Some(DVector::from_vec(vec![1.0, 0.0])),
        };
        let s = DisturbanceSignal::sinusoid(2, spec, 1.0, 0).unwrap();
        let (w, wd) = s.eval(0.0);
        assert_eq!(w.norm(), 0.0);
        assert!((wd[0] - 0.4).abs() < 1e-15 && wd[1] == 0.0);
    }

    #[test]
    fn amplitude_is_rescaled_to_bound() {
        let spec = SinusoidSpec {
            amplitude: 2.0,
            frequency: 3.0,
            phase: Some(0.0),
            direction: Some(DVector::from_vec(vec![1.0])),
        };
        let s = DisturbanceSignal::sinusoid(1, spec, 0.5, 0).unwrap();
        // derivative bound binds: 2 * 3 * scale = 0.5
        assert!((s.scale() - 0.5 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn simpson_constant_and_errors() {
        let w = simpson_weights(4, 0.125).unwrap();
        assert!((w.iter().sum::<f64>() - 0.5).abs() < 1e-15);
        let w = simpson_weights(5, 0.1).unwrap();
        assert!((w.iter().sum::<f64>() - 0.5).abs() < 1e-15);
        assert!(matches!(simpson_weights(1, 0.5), Err(Error::QuadratureResolution { substeps: 1 })));
    }

    #[test]
    fn norm_bounds_checked() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        assert!(SystemDynamics::with_bounds(a.clone(), b.clone(), 1.0, 1.0).is_err());
        assert!(SystemDynamics::with_bounds(a, b, 2.0, 1.0).is_ok());
    }
}
