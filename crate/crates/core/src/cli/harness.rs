//! Drivers behind the `nsc` subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::bench::baseline::{search, BaselineResult};
use crate::bench::least_squares_slope;
use crate::bench::replay::Replay;
use crate::cli::config::{Auto, Experiment, RawConfig};
use crate::cli::csvlog::{fmt_f64, read_csv_file, to_csv_bytes, write_atomic};
use crate::cli::svg::{stack, Chart, Scale, Series};
use crate::controller::{regret_diagnostics, run, RegretReport, RunLog, StepSize};
use crate::error::{Error, Result};
use crate::linalg::matrix_to_rows;

/// Everything one `run` produces in memory.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub log: RunLog,
    pub baseline: Option<BaselineResult>,
    pub report: Option<RegretReport>,
    /// `J(K*)` with feedback at every substep, when requested.
    pub j_continuous: Option<f64>,
    pub wall_seconds: f64,
}

/// Hindsight baseline on the replay the run used.
pub fn baseline_for(exp: &Experiment) -> Result<BaselineResult> {
    let grid = exp.grid()?;
    let replay = Replay::new(&exp.system, &exp.disturbance, &exp.cost, grid, exp.controller.substeps)?;
    search(&replay, exp.baseline.class, &exp.baseline.options)
}

pub fn execute(exp: &Experiment) -> Result<RunOutcome> {
    let start = Instant::now();
    let log = run(&exp.system, &exp.disturbance, &exp.cost, &exp.controller)?;
    let (baseline, report, j_continuous) = if exp.baseline.enabled {
        let base = baseline_for(exp)?;
        let report = regret_diagnostics(&log, &base, &exp.cost)?;
        let jc = if exp.baseline.continuous_feedback {
            let replay = Replay::new(&exp.system, &exp.disturbance, &exp.cost, log.grid, exp.controller.substeps)?;
            Some(replay.eval_continuous_feedback(&base.k_star)?)
        } else {
            None
        };
        (Some(base), Some(report), jc)
    } else {
        (None, None, None)
    };
    Ok(RunOutcome {
        log,
        baseline,
        report,
        j_continuous,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Serialize)]
struct RunSection {
    name: String,
    horizon: f64,
    h: f64,
    m: usize,
    memory: usize,
    l: usize,
    samples: usize,
    slow_blocks: usize,
    eta: String,
    kappa: f64,
    gamma: f64,
    radius_a: f64,
    decay: f64,
    gain: Vec<Vec<f64>>,
    replay_hash: String,
    final_param_hash: String,
}

#[derive(Debug, Serialize)]
struct CostSection {
    j_alg: f64,
    max_state: f64,
    max_action: f64,
    w0: f64,
}

#[derive(Debug, Serialize)]
struct BaselineSection {
    kappa: f64,
    gamma: f64,
    k_star: Vec<Vec<f64>>,
    j_star: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    j_continuous: Option<f64>,
    candidates: usize,
    starts: usize,
}

#[derive(Debug, Serialize)]
struct RegretSection {
    regret: f64,
    r0: f64,
    r1: f64,
    r2: f64,
    r3: f64,
    identity_error: f64,
    ideal_total: f64,
    min_total: f64,
    min_converged: bool,
    min_gap: f64,
    min_iterations: usize,
}

#[derive(Debug, Serialize)]
struct Summary {
    run: RunSection,
    cost: CostSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<BaselineSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    regret: Option<RegretSection>,
}

fn eta_label(eta: StepSize) -> String {
    match eta {
        StepSize::Auto { eta0: None } => "auto".into(),
        StepSize::Auto { eta0: Some(e) } => format!("auto(eta0 = {e})"),
        StepSize::Fixed(e) => format!("{e}"),
    }
}

/// Structured TOML summary of a run.
pub fn summary_text(exp: &Experiment, out: &RunOutcome) -> String {
    let log = &out.log;
    let cfg = &log.config;
    let summary = Summary {
        run: RunSection {
            name: exp.name.clone().unwrap_or_default(),
            horizon: cfg.horizon,
            h: cfg.h,
            m: cfg.m,
            memory: cfg.memory,
            l: cfg.l(),
            samples: log.grid.n,
            slow_blocks: log.grid.slow_blocks(cfg.m),
            eta: eta_label(cfg.eta),
            kappa: cfg.kappa,
            gamma: cfg.gamma,
            radius_a: log.class.radius_a,
            decay: log.class.decay,
            gain: matrix_to_rows(&cfg.gain),
            replay_hash: log.replay_hash.clone(),
            final_param_hash: log.final_params().param_hash(),
        },
        cost: CostSection {
            j_alg: log.total_cost,
            max_state: log.max_state,
            max_action: log.max_action,
            w0: log.w0,
        },
        baseline: out.baseline.as_ref().map(|b| BaselineSection {
            kappa: b.class.kappa,
            gamma: b.class.gamma,
            k_star: matrix_to_rows(&b.k_star),
            j_star: b.j_star,
            j_continuous: out.j_continuous,
            candidates: b.trace.len(),
            starts: b.starts,
        }),
        regret: out.report.as_ref().map(|r| RegretSection {
            regret: r.regret,
            r0: r.r0,
            r1: r.r1,
            r2: r.r2,
            r3: r.r3,
            identity_error: r.identity_error(log.grid.h),
            ideal_total: r.ideal_total,
            min_total: r.min_total,
            min_converged: r.min_converged,
            min_gap: r.min_gap,
            min_iterations: r.min_iterations,
        }),
    };
    toml::to_string(&summary).expect("summary serializes")
}

/// Cumulative cost and, with a baseline, the regret terms over time.
pub fn run_charts(out: &RunOutcome) -> Vec<Chart> {
    let log = &out.log;
    let mut cum = vec![Series::line(
        "algorithm",
        log.samples
            .iter()
            .enumerate()
            .map(|(r, s)| (s.t + log.grid.interval(r), s.cost_cum))
            .collect(),
    )];
    if let Some(b) = &out.baseline {
        let mut acc = 0.0;
        let pts = b
            .trajectory
            .interval_cost
            .iter()
            .enumerate()
            .map(|(r, c)| {
                acc += c;
                (log.grid.time(r) + log.grid.interval(r), acc)
            })
            .collect();
        cum.push(Series::line("best linear K*", pts));
    }
    let mut charts = vec![Chart {
        title: "Cumulative cost".into(),
        x_label: "t".into(),
        y_label: "cost".into(),
        series: cum,
        ..Default::default()
    }];
    if let Some(rep) = &out.report {
        let h = log.grid.h;
        let pick = |f: &dyn Fn(&crate::controller::RegretPoint) -> f64| rep.series.iter().map(|p| (p.t, f(p))).collect::<Vec<_>>();
        charts.push(Chart {
            title: "Regret decomposition".into(),
            x_label: "t".into(),
            y_label: "cumulative".into(),
            series: vec![
                Series::line("regret", pick(&|p| p.regret)),
                Series::line("R0", pick(&|p| p.r0)),
                Series::line("h R1", pick(&|p| h * p.r1)),
                Series::line("h R2", pick(&|p| h * p.r2)),
                Series::line("h R3", pick(&|p| h * p.r3)),
            ],
            ..Default::default()
        });
    }
    charts
}

/// Output locations for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifacts {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub svg: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

pub fn artifact_paths(exp: &Experiment, config_path: &Path, out_dir: &Path) -> Artifacts {
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    Artifacts {
        csv: exp.output.csv.clone().unwrap_or_else(|| out_dir.join(format!("{stem}.csv"))),
        summary: exp
            .output
            .summary
            .clone()
            .unwrap_or_else(|| out_dir.join(format!("{stem}.summary.toml"))),
        svg: exp.output.svg.clone(),
        checkpoint: exp.output.checkpoint.clone(),
    }
}

pub fn write_artifacts(exp: &Experiment, out: &RunOutcome, paths: &Artifacts) -> Result<()> {
    write_atomic(&paths.csv, &to_csv_bytes(&out.log)?)?;
    write_atomic(&paths.summary, summary_text(exp, out).as_bytes())?;
    if let Some(svg) = &paths.svg {
        write_atomic(svg, stack(&run_charts(out)).as_bytes())?;
    }
    if let Some(cp) = &paths.checkpoint {
        write_atomic(cp, &out.log.final_params().to_checkpoint_bytes())?;
    }
    Ok(())
}

/// `nsc run`.
pub fn cmd_run(config_path: &Path, out_dir: &Path) -> Result<(RunOutcome, Artifacts)> {
    let exp = crate::cli::config::load(config_path)?;
    let out = execute(&exp)?;
    let paths = artifact_paths(&exp, config_path, out_dir);
    write_artifacts(&exp, &out, &paths)?;
    Ok((out, paths))
}

/// `nsc baseline`: the hindsight search alone.
pub fn cmd_baseline(config_path: &Path) -> Result<(BaselineResult, String)> {
    let exp = crate::cli::config::load(config_path)?;
    let base = baseline_for(&exp)?;
    let sec = BaselineSection {
        kappa: base.class.kappa,
        gamma: base.class.gamma,
        k_star: matrix_to_rows(&base.k_star),
        j_star: base.j_star,
        j_continuous: None,
        candidates: base.trace.len(),
        starts: base.starts,
    };
    #[derive(Serialize)]
    struct Doc {
        baseline: BaselineSection,
        replay_hash: String,
    }
    let text = toml::to_string(&Doc {
        baseline: sec,
        replay_hash: base.replay_hash.clone(),
    })
    .expect("baseline serializes");
    Ok((base, text))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Horizon,
    Step,
    Memory,
    M,
    Eta,
    Seed,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "T" => SweepParam::Horizon,
            "h" => SweepParam::Step,
            "H" => SweepParam::Memory,
            "m" => SweepParam::M,
            "eta" => SweepParam::Eta,
            "seed" => SweepParam::Seed,
            other => {
                return Err(Error::Config {
                    path: "--param".into(),
                    message: format!("`{other}` is not one of T, h, H, m, eta, seed"),
                })
            }
        })
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Horizon => "T",
            SweepParam::Step => "h",
            SweepParam::Memory => "H",
            SweepParam::M => "m",
            SweepParam::Eta => "eta",
            SweepParam::Seed => "seed",
        }
    }

    fn integral(self) -> bool {
        matches!(self, SweepParam::Memory | SweepParam::M | SweepParam::Seed)
    }

    /// Copy of `raw` with this parameter set to `value`.
    pub fn apply(self, raw: &RawConfig, value: f64) -> Result<RawConfig> {
        if self.integral() && (value < 0.0 || value.fract() != 0.0) {
            return Err(Error::Config {
                path: "--values".into(),
                message: format!("{} needs non-negative integers, got {value}", self.name()),
            });
        }
        let mut r = raw.clone();
        let c = &mut r.controller;
        match self {
            SweepParam::Horizon => c.horizon = value,
            SweepParam::Step => c.h = Auto::Value(value),
            SweepParam::Memory => c.memory = Auto::Value(value as usize),
            SweepParam::M => c.m = Auto::Value(value as usize),
            SweepParam::Eta => {
                c.eta = Auto::Value(value);
                c.eta0 = None;
            }
            SweepParam::Seed => {
                r.disturbance.seed = value as u64;
                r.baseline.seed = value as u64;
            }
        }
        Ok(r)
    }
}

pub fn parse_values(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| Error::Config {
                path: "--values".into(),
                message: format!("`{s}` is not a number"),
            })
        })
        .collect()
}

/// One row of a sweep; numeric fields are `NaN` when the run failed.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: f64,
    pub j_alg: f64,
    pub j_star: f64,
    pub regret: f64,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub wall_seconds: f64,
    pub error: Option<String>,
}

impl SweepRow {
    /// Every field except wall time, for reproducibility comparisons.
    pub fn numerics(&self) -> [f64; 8] {
        [self.value, self.j_alg, self.j_star, self.regret, self.r0, self.r1, self.r2, self.r3]
    }

    fn failed(value: f64, err: &Error, wall: f64) -> Self {
        Self {
            value,
            j_alg: f64::NAN,
            j_star: f64::NAN,
            regret: f64::NAN,
            r0: f64::NAN,
            r1: f64::NAN,
            r2: f64::NAN,
            r3: f64::NAN,
            wall_seconds: wall,
            error: Some(err.to_string()),
        }
    }
}

fn sweep_one(raw: &RawConfig, param: SweepParam, value: f64) -> SweepRow {
    let start = Instant::now();
    let res = param.apply(raw, value).and_then(|r| {
        let mut r = r;
        r.baseline.enabled = true;
        r.resolve()
    });
    let out = res.and_then(|exp| execute(&exp));
    let wall = start.elapsed().as_secs_f64();
    match out {
        Ok(o) => {
            let rep = o.report.expect("baseline enabled for sweeps");
            SweepRow {
                value,
                j_alg: rep.j_alg,
                j_star: rep.j_baseline,
                regret: rep.regret,
                r0: rep.r0,
                r1: rep.r1,
                r2: rep.r2,
                r3: rep.r3,
                wall_seconds: wall,
                error: None,
            }
        }
        Err(e) => SweepRow::failed(value, &e, wall),
    }
}

/// Runs every value on a pool of `jobs` workers; rows keep the input order.
pub fn sweep(raw: &RawConfig, param: SweepParam, values: &[f64], jobs: usize) -> Result<Vec<SweepRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    Ok(pool.install(|| values.par_iter().map(|&v| sweep_one(raw, param, v)).collect()))
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([param.name(), "J_alg", "J_star", "regret", "R0_hat", "R1_hat", "R2_hat", "R3_hat", "wall_time", "status"])?;
    for r in rows {
        let mut rec: Vec<String> = r.numerics().iter().map(|v| fmt_f64(*v)).collect();
        rec.push(format!("{:.3}", r.wall_seconds));
        rec.push(r.error.clone().unwrap_or_else(|| "ok".into()));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Least-squares slope of `ln(regret)` on `ln(value)` over rows with
/// positive regret, with the number of rows used.
pub fn log_log_slope(rows: &[SweepRow]) -> (f64, usize) {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.error.is_none() && r.regret > 0.0 && r.value > 0.0)
        .map(|r| (r.value.ln(), r.regret.ln()))
        .collect();
    (least_squares_slope(&pts), pts.len())
}

pub fn sweep_chart(param: SweepParam, rows: &[SweepRow]) -> Chart {
    let (slope, used) = log_log_slope(rows);
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.error.is_none()).map(|r| (r.value, r.regret)).collect();
    let mut notes = vec![format!("least-squares slope = {slope:.4} ({used} points)")];
    let dropped = pts.iter().filter(|p| !(p.1 > 0.0)).count();
    if dropped > 0 {
        notes.push(format!("{dropped} non-positive regret values not shown"));
    }
    Chart {
        title: format!("Regret vs {}", param.name()),
        x_label: param.name().into(),
        y_label: "regret".into(),
        x_scale: Scale::Log10,
        y_scale: Scale::Log10,
        series: vec![Series {
            label: "regret".into(),
            points: pts,
            markers: true,
        }],
        notes,
    }
}

/// `nsc sweep`. Writes `<stem>.sweep_<param>.csv` and `.svg` under `out_dir`.
pub fn cmd_sweep(config_path: &Path, param: SweepParam, values: &[f64], jobs: usize, out_dir: &Path) -> Result<(Vec<SweepRow>, PathBuf)> {
    let mut raw = crate::cli::config::parse_file(config_path)?;
    crate::cli::config::apply_seed_override(&mut raw, std::env::var(crate::cli::config::SEED_OVERRIDE_VAR).ok().as_deref())?;
    raw.resolve()?;
    let rows = sweep(&raw, param, values, jobs)?;
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sweep".into());
    let csv_path = out_dir.join(format!("{stem}.sweep_{}.csv", param.name()));
    write_atomic(&csv_path, &sweep_csv(param, &rows)?)?;
    write_atomic(&csv_path.with_extension("svg"), sweep_chart(param, &rows).render().as_bytes())?;
    Ok((rows, csv_path))
}

/// `nsc plot`: cumulative cost, states and actions from a run CSV.
pub fn cmd_plot(csv_path: &Path, out: &Path) -> Result<()> {
    let rows = read_csv_file(csv_path)?;
    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let cols = |f: &dyn Fn(&crate::cli::csvlog::CsvRow) -> &Vec<f64>, prefix: &str| -> Vec<Series> {
        let d = rows.first().map_or(0, |r| f(r).len());
        (0..d)
            .map(|i| Series::line(format!("{prefix}[{i}]"), rows.iter().zip(&t).map(|(r, &t)| (t, f(r)[i])).collect()))
            .collect()
    };
    let charts = [
        Chart {
            title: "Cumulative cost".into(),
            x_label: "t".into(),
            y_label: "cost".into(),
            series: vec![Series::line("cost_cum", rows.iter().zip(&t).map(|(r, &t)| (t, r.cost_cum)).collect())],
            ..Default::default()
        },
        Chart {
            title: "State".into(),
            x_label: "t".into(),
            y_label: "x".into(),
            series: cols(&|r| &r.x, "x"),
            ..Default::default()
        },
        Chart {
            title: "Action".into(),
            x_label: "t".into(),
            y_label: "u".into(),
            series: cols(&|r| &r.u, "u"),
            ..Default::default()
        },
    ];
    write_atomic(out, stack(&charts).as_bytes())
}
