//! Numeric property checks with fixed seeds, grouped into suites.
//!
//! The `measure_*` functions return raw measurements so that callers can
//! apply their own thresholds; [`run_suite`] applies the defaults below.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::comparator::{comparator_gap, comparator_params, fitted_decay, ComparatorGap, ComparatorSetup};
use crate::bench::cost::CostFn;
use crate::bench::suite;
use crate::cli::config::{Auto, Experiment, RawConfig};
use crate::cli::harness::{baseline_for, execute};
use crate::controller::{run, RunLog};
use crate::dac::{project, ClassSpec, DacParams, DecayBase, CLASS_TOL};
use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::linsys::SystemDynamics;
use crate::oco::{psi_bound, psi_bound_ratio, psi_table, MemoryLoss, SampleGrid};
use crate::stability::{certify, sampled_power_norms, Certification};

pub const PSI_IDENTITY_TOL: f64 = 1e-9;
pub const ESTIMATE_RATIO: (f64, f64) = (1.7, 2.3);
pub const GRADIENT_TOL: f64 = 1e-5;
pub const DECOMPOSITION_TOL: f64 = 1e-8;
pub const BOUNDEDNESS_TOL: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Lemmas,
    Gradients,
    Stability,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lemmas" => Ok(Suite::Lemmas),
            "gradients" => Ok(Suite::Gradients),
            "stability" => Ok(Suite::Stability),
            "all" => Ok(Suite::All),
            other => Err(Error::invalid(format!("unknown suite `{other}`; use lemmas, gradients, stability or all"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct VerifyOptions {
    /// Route every gradient through the finite-difference fallback.
    pub force_fd: bool,
    /// Evaluate the Psi bound with `1 - gamma` while parameters decay at `1 - h gamma`.
    pub tamper_decay: bool,
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, measured: f64, bound: f64, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            measured,
            bound,
            pass,
            detail: detail.into(),
        }
    }

    fn at_most(name: &str, measured: f64, bound: f64, detail: impl Into<String>) -> Self {
        Self::new(name, measured, bound, measured <= bound, detail)
    }

    fn failed(name: &str, err: &Error) -> Self {
        Self::new(name, f64::NAN, f64::NAN, false, format!("error: {err}"))
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} measured {:>12.5e}  bound {:>12.5e}  {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.bound,
            self.detail
        )
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// In-class parameters with each block at a random fraction of its bound,
/// some exactly on the boundary.
pub fn random_in_class(rng: &mut ChaCha8Rng, class: &ClassSpec) -> DacParams {
    let blocks: Vec<DMatrix<f64>> = (1..=class.l)
        .map(|i| {
            let m = random_matrix(rng, class.d_u, class.d_x, 1.0);
            let n = spectral_norm(&m);
            let frac = if rng.random_bool(0.3) { 1.0 } else { rng.random_range(0.0..1.0) };
            if n > 0.0 {
                m * (frac * class.bound(i) / n)
            } else {
                m
            }
        })
        .collect();
    project(&blocks, class).expect("random blocks have class shape")
}

/// Largest relative gap between the Psi closed form and the literal
/// recursion `x_{s+1} = x_s + h(A x_s + B u_s + w_s)`, `u_s = -K x_s + z_s`,
/// started from zero `l` samples back.
pub fn measure_psi_identity(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let nx = rng.random_range(1..=3);
        let nu = rng.random_range(1..=2);
        let h = rng.random_range(0.02..0.3);
        let l = rng.random_range(1..=8);
        let sys = SystemDynamics::new(random_matrix(&mut rng, nx, nx, 1.5), random_matrix(&mut rng, nx, nu, 1.0))?;
        let k = random_matrix(&mut rng, nu, nx, 1.0);
        let class = ClassSpec::new(rng.random_range(0.5..4.0), h, 1.0 - h * rng.random_range(0.05..1.0), l, nu, nx)?;
        let params: Vec<DacParams> = (0..=l).map(|_| random_in_class(&mut rng, &class)).collect();
        let t = 2 * l + rng.random_range(0..4);
        let w: Vec<DVector<f64>> = (0..=t).map(|_| random_vector(&mut rng, nx, 1.0)).collect();
        let refs: Vec<&DacParams> = params.iter().collect();
        let psi = psi_table(&sys, &k, h, &refs, 2 * l)?;
        let mut closed = DVector::zeros(nx);
        for (i, p) in psi.psi.iter().enumerate() {
            closed += p * &w[t - i] * h;
        }
        let mut x = DVector::zeros(nx);
        for s in t - l..=t {
            let p = &params[t - s];
            let mut z = DVector::zeros(nu);
            for i in 1..=l {
                z += p.block(i) * &w[s - i];
            }
            let u = -(&k * &x) + z;
            x = &x + (sys.a() * &x + sys.b() * u + &w[s]) * h;
        }
        let err = (&closed - &x).norm() / x.norm().max(f64::MIN_POSITIVE);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct PsiScan {
    pub draws: usize,
    pub violations: usize,
    pub max_ratio: f64,
    /// Index `i` of the worst ratio, and the draw it came from.
    pub worst_index: usize,
    pub worst_draw: usize,
}

/// Certified instances from the shipped benchmarks at several `h`, with
/// `draws` in-class parameter windows in total.
pub fn measure_psi_bound(draws: usize, seed: u64, tamper_decay: bool) -> Result<PsiScan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases: Vec<Experiment> = ["two_dim", "scalar", "zero"].iter().map(|n| suite::load(n)).collect::<Result<_>>()?;
    let mut scan = PsiScan {
        draws,
        violations: 0,
        max_ratio: 0.0,
        worst_index: 0,
        worst_draw: 0,
    };
    for d in 0..draws {
        let exp = &bases[d % bases.len()];
        let c = &exp.controller;
        let h = [0.02, 0.05, 0.1][rng.random_range(0..3)];
        let cert = match certify(&exp.system, &c.gain, h, c.kappa, c.gamma)? {
            Certification::Accepted(cert) => cert,
            Certification::Refused(r) => return Err(Error::NotStronglyStable { h, reason: r.to_string() }),
        };
        let l = rng.random_range(1..=12);
        let (nu, nx) = (exp.system.input_dim(), exp.system.state_dim());
        let class = ClassSpec::for_certificate(cert.kappa, cert.gamma, h, l, DecayBase::OneMinusHGamma, None, nu, nx)?;
        let params: Vec<DacParams> = (0..=l).map(|_| random_in_class(&mut rng, &class)).collect();
        let refs: Vec<&DacParams> = params.iter().collect();
        let psi = psi_table(&exp.system, &c.gain, h, &refs, 2 * l)?;
        let decay = if tamper_decay {
            DecayBase::OneMinusGamma.factor(h, cert.gamma)
        } else {
            class.decay
        };
        let kb = exp.system.kappa_b();
        let (ratio, idx) = psi_bound_ratio(&psi, |i| psi_bound(class.radius_a, l, h, kb, cert.kappa, decay, i));
        if ratio > 1.0 + 1e-12 {
            scan.violations += 1;
        }
        if ratio > scan.max_ratio {
            scan.max_ratio = ratio;
            scan.worst_index = idx;
            scan.worst_draw = d;
        }
    }
    Ok(scan)
}

fn with_step(raw: &RawConfig, h: f64) -> RawConfig {
    let mut r = raw.clone();
    r.controller.h = Auto::Value(h);
    r.baseline.enabled = false;
    r
}

/// `max_r ||w_hat_r - w(t_r)||` for each `h`, other settings from `raw`.
pub fn measure_estimate_errors(raw: &RawConfig, hs: &[f64]) -> Result<Vec<f64>> {
    hs.iter()
        .map(|&h| {
            let exp = with_step(raw, h).resolve()?;
            let log = run(&exp.system, &exp.disturbance, &exp.cost, &exp.controller)?;
            Ok(log
                .samples
                .iter()
                .map(|s| (&s.w_hat - exp.disturbance.value(s.t)).norm())
                .fold(0.0, f64::max))
        })
        .collect()
}

/// Consecutive ratios `v[i] / v[i + 1]`.
pub fn ratios(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| w[0] / w[1]).collect()
}

#[derive(Clone, Debug, Default)]
pub struct ProjectionAudit {
    pub steps: usize,
    pub idempotence_failures: usize,
    pub feasibility_failures: usize,
    pub max_class_ratio: f64,
}

/// Every post-step parameter set of a run must be a fixed point of the
/// projection (bit for bit) and inside every block ball.
pub fn audit_projection(log: &RunLog) -> Result<ProjectionAudit> {
    let mut a = ProjectionAudit::default();
    for p in &log.params[1..] {
        a.steps += 1;
        let again = project(p.blocks(), &log.class)?;
        if again.blocks() != p.blocks() {
            a.idempotence_failures += 1;
        }
        if !p.is_feasible() {
            a.feasibility_failures += 1;
        }
        a.max_class_ratio = a.max_class_ratio.max(p.max_class_ratio());
    }
    Ok(a)
}

#[derive(Clone, Debug)]
pub struct ComparatorDecay {
    pub gaps: Vec<ComparatorGap>,
    /// `exp(slope)` of `ln(gap)` against `Hm`.
    pub fitted_ratio: f64,
    /// `1 - h gamma`.
    pub allowed_ratio: f64,
    pub max_class_ratio: f64,
}

/// Comparator gap at `Hm = m * H` for each `H`, on the disturbance
/// estimates of a run of `exp` and its hindsight `K*`.
pub fn measure_comparator_decay(exp: &Experiment, m: usize, memories: &[usize]) -> Result<ComparatorDecay> {
    let c = &exp.controller;
    let log = run(&exp.system, &exp.disturbance, &exp.cost, c)?;
    let base = baseline_for(exp)?;
    let w_hat = log.w_hat();
    let setup = ComparatorSetup {
        sys: &exp.system,
        gain: &c.gain,
        k_star: &base.k_star,
        cost: &exp.cost,
        w_hat: &w_hat,
        h: c.h,
        kappa: c.kappa,
        gamma: c.gamma,
        decay_base: c.decay_base,
    };
    let gaps = memories
        .iter()
        .map(|&hh| comparator_gap(&setup, hh, m))
        .collect::<Result<Vec<_>>>()?;
    let l_max = memories.iter().max().copied().unwrap_or(1) * m;
    let class = ClassSpec::for_certificate(c.kappa, c.gamma, c.h, l_max, c.decay_base, c.radius_a, c.gain.nrows(), c.gain.ncols())?;
    let params = comparator_params(&c.gain, &base.k_star, &exp.system, &class)?;
    Ok(ComparatorDecay {
        fitted_ratio: fitted_decay(&gaps),
        allowed_ratio: c.decay_base.factor(c.h, c.gamma),
        max_class_ratio: params.max_class_ratio(),
        gaps,
    })
}

/// Relative error `|a - f| / max(|a|, |f|, 1e-8 ||grad||_inf)` per probed coordinate.
fn coord_error(a: f64, f: f64, scale: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-8 * scale).max(f64::MIN_POSITIVE)
}

/// Worst relative error between `grad g_k` and central differences of
/// `g_k` at `coords` random coordinates on each of `instances` problems.
pub fn measure_gradient_error(instances: usize, coords: usize, seed: u64, force_fd: bool) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let nx = rng.random_range(1..=3);
        let nu = rng.random_range(1..=2);
        let h = rng.random_range(0.05..0.2);
        let m = rng.random_range(1..=4);
        let memory = rng.random_range(1..=3);
        let l = m * memory;
        let n = l + m * rng.random_range(2..=5);
        let sys = SystemDynamics::new(random_matrix(&mut rng, nx, nx, 1.0), random_matrix(&mut rng, nx, nu, 1.0))?;
        let k = random_matrix(&mut rng, nu, nx, 1.0);
        let qf = random_matrix(&mut rng, nx, nx, 1.0);
        let rf = random_matrix(&mut rng, nu, nu, 1.0);
        let mut cost = CostFn::quadratic(qf.transpose() * &qf, rf.transpose() * &rf + DMatrix::identity(nu, nu) * 0.1)?;
        if force_fd {
            cost = cost.without_gradients();
        }
        let class = ClassSpec::new(rng.random_range(1.0..4.0), h, 1.0 - 0.5 * h, l, nu, nx)?;
        let params = random_in_class(&mut rng, &class);
        let w: Vec<DVector<f64>> = (0..n).map(|_| random_vector(&mut rng, nx, 1.0)).collect();
        let grid = SampleGrid::full(h, n);
        let loss = MemoryLoss::new(&sys, &k, &cost, grid, m, l, &w)?;
        let kk = rng.random_range(0..grid.slow_blocks(m));
        let grad = loss.grad_g(&params, kk)?;
        let scale = grad.blocks.iter().map(|b| b.amax()).fold(0.0, f64::max);
        for _ in 0..coords {
            let (i, r, c) = (rng.random_range(0..l), rng.random_range(0..nu), rng.random_range(0..nx));
            let mut blocks = params.blocks().to_vec();
            let step = 1e-6 * blocks[i][(r, c)].abs().max(1.0);
            blocks[i][(r, c)] += step;
            let plus = DacParams::new(blocks.clone(), &ClassSpec { radius_a: f64::MAX, ..class.clone() })?;
            blocks[i][(r, c)] -= 2.0 * step;
            let minus = DacParams::new(blocks, &ClassSpec { radius_a: f64::MAX, ..class.clone() })?;
            let fd = (loss.g(&plus, kk) - loss.g(&minus, kk)) / (2.0 * step);
            worst = worst.max(coord_error(grad.blocks[i][(r, c)], fd, scale));
        }
    }
    Ok(worst)
}

/// `(max ||x||, max ||u||, W0)` of a run.
pub fn run_extent(exp: &Experiment) -> Result<[f64; 3]> {
    let log = run(&exp.system, &exp.disturbance, &exp.cost, &exp.controller)?;
    Ok([log.max_state, log.max_action, log.w0])
}

/// Extents at `T` and `factor * T` with the schedule resolved once at `T`.
pub fn measure_boundedness(raw: &RawConfig, factor: f64) -> Result<([f64; 3], [f64; 3])> {
    let exp = raw.resolve()?;
    let c = &exp.controller;
    let mut fixed = raw.clone();
    fixed.baseline.enabled = false;
    fixed.controller.h = Auto::Value(c.h);
    fixed.controller.m = Auto::Value(c.m);
    fixed.controller.memory = Auto::Value(c.memory);
    let base = run_extent(&fixed.resolve()?)?;
    fixed.controller.horizon = c.horizon * factor;
    let longer = run_extent(&fixed.resolve()?)?;
    Ok((base, longer))
}

pub fn relative_drift(base: &[f64; 3], longer: &[f64; 3]) -> f64 {
    base.iter()
        .zip(longer)
        .map(|(b, l)| (l - b).abs() / b.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn fixed(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
}

fn lemma_checks(opts: &VerifyOptions) -> Vec<Check> {
    let mut out = Vec::new();
    out.push(match measure_psi_identity(100, 11) {
        Ok(e) => Check::at_most("psi identity", e, PSI_IDENTITY_TOL, "100 instances, relative"),
        Err(e) => Check::failed("psi identity", &e),
    });
    out.push(match measure_psi_bound(1000, 12, opts.tamper_decay) {
        Ok(s) => Check::new(
            "psi bound",
            s.max_ratio,
            1.0,
            s.violations == 0,
            format!(
                "{} violations in {} draws; worst ratio at index i = {} (draw {})",
                s.violations, s.draws, s.worst_index, s.worst_draw
            ),
        ),
        Err(e) => Check::failed("psi bound", &e),
    });
    out.push(
        match suite::raw("scalar").and_then(|r| measure_estimate_errors(&r, &[0.05, 0.025, 0.0125])) {
            Ok(errs) => {
                let rs = ratios(&errs);
                let worst = rs
                    .iter()
                    .copied()
                    .max_by(|a, b| (a - 2.0).abs().total_cmp(&(b - 2.0).abs()))
                    .unwrap_or(f64::NAN);
                let ok = rs.iter().all(|r| (ESTIMATE_RATIO.0..=ESTIMATE_RATIO.1).contains(r));
                Check::new(
                    "estimate order",
                    worst,
                    ESTIMATE_RATIO.1,
                    ok,
                    format!("errors [{}], halving ratios [{}] in [1.7, 2.3]", sci(&errs), fixed(&rs)),
                )
            }
            Err(e) => Check::failed("estimate order", &e),
        },
    );
    let two_dim = suite::load("two_dim");
    out.push(
        match two_dim
            .as_ref()
            .map_err(|e| Error::invalid(e.to_string()))
            .and_then(|e| run(&e.system, &e.disturbance, &e.cost, &e.controller))
            .and_then(|log| audit_projection(&log))
        {
            Ok(a) => Check::new(
                "projection",
                (a.idempotence_failures + a.feasibility_failures) as f64,
                0.0,
                a.idempotence_failures == 0 && a.feasibility_failures == 0,
                format!("{} steps, max ||M^i|| / b_i = {:.6}", a.steps, a.max_class_ratio),
            ),
            Err(e) => Check::failed("projection", &e),
        },
    );
    out.push(
        match two_dim
            .as_ref()
            .map_err(|e| Error::invalid(e.to_string()))
            .and_then(|e| measure_comparator_decay(e, 5, &[2, 4, 8]))
        {
            Ok(d) => {
                let under = d.gaps.iter().all(|g| g.max_gap <= g.bound);
                let gaps: Vec<f64> = d.gaps.iter().map(|g| g.max_gap).collect();
                Check::new(
                    "comparator decay",
                    d.fitted_ratio,
                    d.allowed_ratio,
                    d.fitted_ratio <= d.allowed_ratio && under && d.max_class_ratio <= 1.0 + CLASS_TOL,
                    format!(
                        "gaps [{}] at Hm = 10, 20, 40; under bound: {under}; class ratio {:.4}",
                        sci(&gaps),
                        d.max_class_ratio
                    ),
                )
            }
            Err(e) => Check::failed("comparator decay", &e),
        },
    );
    for (name, _) in suite::ALL {
        let label = format!("decomposition {name}");
        out.push(match suite::load(name).and_then(|e| execute(&e)) {
            Ok(o) => {
                let rep = o.report.expect("benchmarks enable the baseline");
                let err = rep.identity_error(o.log.grid.h);
                Check::at_most(&label, err, DECOMPOSITION_TOL, format!("regret {:.6e}", rep.regret))
            }
            Err(e) => Check::failed(&label, &e),
        });
    }
    out.push(
        match suite::raw("two_dim").and_then(|mut r| {
            r.controller.horizon = 128.0;
            measure_boundedness(&r, 2.0)
        }) {
            Ok((b, l)) => Check::at_most(
                "boundedness",
                relative_drift(&b, &l),
                BOUNDEDNESS_TOL,
                format!("T = 128 -> 256: x {:.4} -> {:.4}, u {:.4} -> {:.4}, W0 {:.4} -> {:.4}", b[0], l[0], b[1], l[1], b[2], l[2]),
            ),
            Err(e) => Check::failed("boundedness", &e),
        },
    );
    out
}

fn gradient_checks(opts: &VerifyOptions) -> Vec<Check> {
    let label = if opts.force_fd { "gradient (forced fd)" } else { "gradient" };
    vec![match measure_gradient_error(20, 20, 21, opts.force_fd) {
        Ok(e) => Check::at_most(label, e, GRADIENT_TOL, "20 instances x 20 coordinates"),
        Err(e) => Check::failed(label, &e),
    }]
}

fn stability_checks() -> Vec<Check> {
    let mut out = Vec::new();
    for (name, _) in suite::ALL {
        let label = format!("certificate {name}");
        let res = suite::load(name).and_then(|e| {
            let c = &e.controller;
            let cert = certify(&e.system, &c.gain, c.h, c.kappa, c.gamma)?;
            let norms = sampled_power_norms(&e.system, &c.gain, c.h, 400);
            let ratio = norms
                .iter()
                .enumerate()
                .map(|(i, n)| n / (c.kappa * c.kappa * (1.0 - c.h * c.gamma).powi(i as i32)))
                .fold(0.0, f64::max);
            Ok((cert.is_accepted(), ratio))
        });
        out.push(match res {
            Ok((accepted, ratio)) => Check::new(
                &label,
                ratio,
                1.0,
                accepted && ratio <= 1.0 + 1e-12,
                format!("accepted: {accepted}; max ||Q^i|| / (kappa^2 (1 - h gamma)^i) over i <= 400"),
            ),
            Err(e) => Check::failed(&label, &e),
        });
    }
    let unstable = SystemDynamics::new(DMatrix::from_element(1, 1, 1.0), DMatrix::identity(1, 1))
        .and_then(|sys| certify(&sys, &DMatrix::from_element(1, 1, 0.5), 0.1, 2.0, 0.5));
    out.push(match unstable {
        Ok(Certification::Refused(r)) => Check::new("refuses unstable gain", r.measured, r.limit, true, r.to_string()),
        Ok(Certification::Accepted(_)) => Check::new("refuses unstable gain", f64::NAN, f64::NAN, false, "accepted"),
        Err(e) => Check::failed("refuses unstable gain", &e),
    });
    out
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Vec<Check> {
    match suite {
        Suite::Lemmas => lemma_checks(opts),
        Suite::Gradients => gradient_checks(opts),
        Suite::Stability => stability_checks(),
        Suite::All => {
            let mut v = stability_checks();
            v.extend(gradient_checks(opts));
            v.extend(lemma_checks(opts));
            v
        }
    }
}
