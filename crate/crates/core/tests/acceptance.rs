//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;

use nsc::bench::baseline::{scalar_grid, search, BaselineOptions, SearchMethod};
use nsc::bench::least_squares_slope;
use nsc::bench::replay::Replay;
use nsc::bench::suite;
use nsc::cli::config::{Auto, RawConfig};
use nsc::cli::csvlog::read_csv;
use nsc::cli::harness::{baseline_for, execute};
use nsc::cli::verify::{
    audit_projection, measure_boundedness, measure_comparator_decay, measure_estimate_errors, measure_gradient_error,
    measure_psi_bound, measure_psi_identity, ratios, relative_drift,
};
use nsc::controller::run;

// Pinned tolerances.
const C1_HORIZONS: [f64; 3] = [64.0, 256.0, 1024.0];
const C1_MAX_SLOPE: f64 = 0.75;
const C2_IDENTITY_TOL: f64 = 1e-8;
const C3_HORIZON: f64 = 64.0;
const C3_STEPS: [f64; 3] = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
const C3_M: usize = 8;
const C3_MEMORY: usize = 4;
const C3_RATIO: (f64, f64) = (1.6, 2.4);
const C4_STEPS: [f64; 3] = [0.05, 0.025, 0.0125];
const C4_RATIO: (f64, f64) = (1.7, 2.3);
const C5_INSTANCES: usize = 100;
const C5_TOL: f64 = 1e-9;
const C6_DRAWS: usize = 1000;
const C7_M: usize = 5;
const C7_MEMORIES: [usize; 3] = [2, 4, 8];
const C8_INSTANCES: usize = 20;
const C8_COORDS: usize = 20;
const C8_TOL: f64 = 1e-5;
const C10_GRID: (f64, f64, f64) = (1.01, 10.0, 0.005);
const C11_SWEEP_VALUES: &str = "32,48,64";
const C12_BASE_HORIZON: f64 = 128.0;
const C12_TOL: f64 = 0.05;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Criterion = fn() -> nsc::Result<Outcome>;

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ")
}

fn two_dim_at(horizon: f64) -> RawConfig {
    let mut r = suite::raw("two_dim").expect("shipped benchmark parses");
    r.controller.horizon = horizon;
    r
}

fn c01_regret_scaling() -> nsc::Result<Outcome> {
    let mut regrets = Vec::new();
    for t in C1_HORIZONS {
        let out = execute(&two_dim_at(t).resolve()?)?;
        regrets.push(out.report.expect("baseline enabled").regret);
    }
    let pts: Vec<(f64, f64)> = C1_HORIZONS.iter().zip(&regrets).map(|(t, r)| (t.ln(), r.ln())).collect();
    let slope = least_squares_slope(&pts);
    let per_t: Vec<f64> = C1_HORIZONS.iter().zip(&regrets).map(|(t, r)| r / t).collect();
    let decreasing = per_t.windows(2).all(|w| w[1] < w[0]);
    Ok(outcome(
        slope <= C1_MAX_SLOPE && decreasing,
        format!(
            "regret [{}] at T = 64, 256, 1024; log-log slope {slope:.4} (<= {C1_MAX_SLOPE}); regret/T [{}] strictly decreasing: {decreasing}",
            sci(&regrets),
            sci(&per_t)
        ),
    ))
}

fn c02_decomposition() -> nsc::Result<Outcome> {
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, _) in suite::ALL {
        let out = execute(&suite::load(name)?)?;
        let rep = out.report.expect("baseline enabled");
        let err = rep.identity_error(out.log.grid.h);
        worst = worst.max(err);
        parts.push(format!("{name} {err:.2e}"));
    }
    Ok(outcome(
        worst <= C2_IDENTITY_TOL,
        format!("relative identity error {} (<= {C2_IDENTITY_TOL:e})", parts.join(", ")),
    ))
}

fn c03_discretization() -> nsc::Result<Outcome> {
    let mut r0 = Vec::new();
    for h in C3_STEPS {
        let mut raw = two_dim_at(C3_HORIZON);
        raw.controller.h = Auto::Value(h);
        raw.controller.m = Auto::Value(C3_M);
        raw.controller.memory = Auto::Value(C3_MEMORY);
        let out = execute(&raw.resolve()?)?;
        r0.push(out.report.expect("baseline enabled").r0);
    }
    let rs = ratios(&r0);
    let pass = rs.iter().all(|r| (C3_RATIO.0..=C3_RATIO.1).contains(r));
    Ok(outcome(
        pass,
        format!("R0_hat [{}] at h = 1/16, 1/32, 1/64; ratios [{}] in [1.6, 2.4]", sci(&r0), sci(&rs)),
    ))
}

fn c04_estimate_order() -> nsc::Result<Outcome> {
    let errs = measure_estimate_errors(&suite::raw("scalar")?, &C4_STEPS)?;
    let rs = ratios(&errs);
    let pass = rs.iter().all(|r| (C4_RATIO.0..=C4_RATIO.1).contains(r));
    Ok(outcome(
        pass,
        format!("max ||w_hat - w|| [{}] at h = 0.05, 0.025, 0.0125; ratios [{}] in [1.7, 2.3]", sci(&errs), sci(&rs)),
    ))
}

fn c05_state_evolution() -> nsc::Result<Outcome> {
    let err = measure_psi_identity(C5_INSTANCES, 5)?;
    Ok(outcome(
        err <= C5_TOL,
        format!("max relative error {err:.3e} over {C5_INSTANCES} instances (<= {C5_TOL:e})"),
    ))
}

fn c06_transition_bound() -> nsc::Result<Outcome> {
    let scan = measure_psi_bound(C6_DRAWS, 6, false)?;
    Ok(outcome(
        scan.violations == 0,
        format!(
            "{} violations in {} draws; max ||Psi_i|| / bound = {:.4} at i = {}",
            scan.violations, scan.draws, scan.max_ratio, scan.worst_index
        ),
    ))
}

fn c07_comparator_decay() -> nsc::Result<Outcome> {
    let exp = suite::load("two_dim")?;
    let d = measure_comparator_decay(&exp, C7_M, &C7_MEMORIES)?;
    let under = d.gaps.iter().all(|g| g.max_gap <= g.bound);
    let per_slow = d.fitted_ratio.powi(C7_M as i32);
    let allowed = d.allowed_ratio.powi(C7_M as i32);
    let gaps: Vec<f64> = d.gaps.iter().map(|g| g.max_gap).collect();
    let bounds: Vec<f64> = d.gaps.iter().map(|g| g.bound).collect();
    Ok(outcome(
        per_slow <= allowed && under,
        format!(
            "gap [{}] at Hm = 10, 20, 40 under bounds [{}]: {under}; fitted ratio per slow step {per_slow:.4} <= (1 - h gamma)^m = {allowed:.4}",
            sci(&gaps),
            sci(&bounds)
        ),
    ))
}

fn c08_gradient() -> nsc::Result<Outcome> {
    let err = measure_gradient_error(C8_INSTANCES, C8_COORDS, 8, false)?;
    Ok(outcome(
        err <= C8_TOL,
        format!("max relative error {err:.3e} over {C8_INSTANCES} x {C8_COORDS} coordinates (<= {C8_TOL:e})"),
    ))
}

fn c09_projection() -> nsc::Result<Outcome> {
    let exp = suite::load("two_dim")?;
    let log = run(&exp.system, &exp.disturbance, &exp.cost, &exp.controller)?;
    let a = audit_projection(&log)?;
    Ok(outcome(
        a.idempotence_failures == 0 && a.feasibility_failures == 0,
        format!(
            "{} steps: {} idempotence and {} feasibility violations; max ||M^i|| / b_i = {:.6}",
            a.steps, a.idempotence_failures, a.feasibility_failures, a.max_class_ratio
        ),
    ))
}

fn c10_baseline() -> nsc::Result<Outcome> {
    let exp = suite::load("scalar")?;
    let base = baseline_for(&exp)?;
    let grid = exp.grid()?;
    let replay = Replay::new(&exp.system, &exp.disturbance, &exp.cost, grid, exp.controller.substeps)?;
    let (lo, hi, step) = C10_GRID;
    let opts = BaselineOptions {
        method: SearchMethod::Grid(scalar_grid(lo, hi, step)),
        ..Default::default()
    };
    let oracle = search(&replay, exp.baseline.class, &opts)?;
    let k = base.k_star[(0, 0)];
    let j = |g: f64| replay.eval(&DMatrix::from_element(1, 1, g));
    let curvature = (j(k + step)? - 2.0 * base.j_star + j(k - step)?) / (step * step);
    let tol = curvature.abs() * step * step;
    let diff = (base.j_star - oracle.j_star).abs();
    let k_lqr = 1.0 + 2f64.sqrt();
    let j_lqr = j(k_lqr)?;
    let j_used = replay.eval(&exp.controller.gain)?;
    let pass = diff <= tol && base.j_star <= j_lqr && base.j_star <= j_used;
    Ok(outcome(
        pass,
        format!(
            "K* = {k:.5}, J* = {:.8}; grid K = {:.3}, J = {:.8}; |diff| {diff:.2e} <= curvature * step^2 = {tol:.2e}; J(K_lqr) = {j_lqr:.6}, J(K) = {j_used:.6}",
            base.j_star,
            oracle.k_star[(0, 0)],
            oracle.j_star
        ),
    ))
}

fn nsc_bin() -> &'static str {
    env!("CARGO_BIN_EXE_nsc")
}

fn benchmark_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("benchmarks").join(format!("{name}.toml"))
}

fn run_bin(args: &[&str]) -> nsc::Result<()> {
    let status = Command::new(nsc_bin()).args(args).env_remove("NSC_SEED_OVERRIDE").output()?;
    if status.status.success() {
        Ok(())
    } else {
        Err(nsc::Error::InvalidInput(format!(
            "nsc {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&status.stderr)
        )))
    }
}

fn c11_determinism() -> nsc::Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let config = benchmark_path("two_dim");
    let cfg = config.to_str().expect("utf-8 path");
    let mut csvs = Vec::new();
    for tag in ["a", "b"] {
        let out = dir.path().join(tag);
        run_bin(&["run", cfg, "--out-dir", out.to_str().expect("utf-8 path")])?;
        csvs.push(std::fs::read(out.join("two_dim.csv"))?);
    }
    let identical = csvs[0] == csvs[1] && !csvs[0].is_empty();
    let rows = read_csv(&csvs[0])?.len();

    let mut tables = Vec::new();
    for jobs in ["1", "8"] {
        let out = dir.path().join(format!("sweep{jobs}"));
        run_bin(&[
            "sweep",
            cfg,
            "--param",
            "T",
            "--values",
            C11_SWEEP_VALUES,
            "--jobs",
            jobs,
            "--out-dir",
            out.to_str().expect("utf-8 path"),
        ])?;
        let text = std::fs::read_to_string(out.join("two_dim.sweep_T.csv"))?;
        // drop wall_time, the only non-numeric-result column
        let stripped: Vec<String> = text
            .lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(8);
                f.join(",")
            })
            .collect();
        tables.push(stripped);
    }
    let same_sweep = tables[0] == tables[1] && tables[0].len() == 4;
    Ok(outcome(
        identical && same_sweep,
        format!(
            "two runs byte-identical: {identical} ({rows} rows); sweep --jobs 1 vs 8 identical numerics: {same_sweep}"
        ),
    ))
}

fn c12_boundedness() -> nsc::Result<Outcome> {
    let (b, l) = measure_boundedness(&two_dim_at(C12_BASE_HORIZON), 2.0)?;
    let drift = relative_drift(&b, &l);
    Ok(outcome(
        drift <= C12_TOL,
        format!(
            "T = 128 -> 256: max||x|| {:.5} -> {:.5}, max||u|| {:.5} -> {:.5}, W0 {:.5} -> {:.5}; max drift {:.3}% (<= 5%)",
            b[0],
            l[0],
            b[1],
            l[1],
            b[2],
            l[2],
            100.0 * drift
        ),
    ))
}

fn main() {
    let criteria: [(&str, Criterion); 12] = [
        ("regret scaling", c01_regret_scaling),
        ("decomposition identity", c02_decomposition),
        ("discretization order", c03_discretization),
        ("disturbance estimate order", c04_estimate_order),
        ("state evolution identity", c05_state_evolution),
        ("transition bound", c06_transition_bound),
        ("comparator decay", c07_comparator_decay),
        ("gradient correctness", c08_gradient),
        ("projection properties", c09_projection),
        ("baseline soundness", c10_baseline),
        ("determinism", c11_determinism),
        ("boundedness", c12_boundedness),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = format!("c{:02}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id.contains(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let res = check().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        if !res.pass {
            failed += 1;
        }
        println!(
            "{id} {} {name}: {} [{:.1} s]",
            if res.pass { "PASS" } else { "FAIL" },
            res.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
