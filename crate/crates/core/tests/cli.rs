use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nsc::cli::csvlog::read_csv_file;

fn nsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsc"))
        .args(args)
        .env_remove("NSC_SEED_OVERRIDE")
        .output()
        .expect("nsc binary runs")
}

fn benchmark(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("benchmarks").join(format!("{name}.toml"))
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const TINY: &str = r#"
[system]
A = [[0.0]]
B = [[1.0]]

[disturbance]
kind = "constant"
value = [0.3]
W = 0.3

[cost]
kind = "quadratic"
Q = [[1.0]]
R = [[1.0]]

[controller]
T = 4.0
h = 0.25
H = 2
m = 2
K = [[1.0]]
kappa = 2.0
gamma = 0.5

[baseline]
enabled = false
"#;

#[test]
fn misspelled_key_exits_with_config_status_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &TINY.replace("gamma = 0.5", "gama = 0.5"));
    let out = nsc(&["run", s(&cfg), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("controller.gama"), "{err}");
}

#[test]
fn infeasible_schedule_exits_with_status_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "long.toml", &TINY.replace("H = 2", "H = 40"));
    let out = nsc(&["run", s(&cfg), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = nsc(&["run", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn error_kinds_map_to_exit_codes() {
    use nsc::Error;
    assert_eq!(Error::IntegrationDivergence { time: 1.0 }.exit_code(), 3);
    assert_eq!(
        Error::Config {
            path: "x".into(),
            message: "y".into()
        }
        .exit_code(),
        2
    );
    assert_eq!(Error::InvalidInput("z".into()).exit_code(), 1);
}

#[test]
fn zero_disturbance_run_stays_at_rest_with_zero_regret() {
    let dir = tempfile::tempdir().unwrap();
    let out = nsc(&["run", s(&benchmark("zero")), "--out-dir", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv_file(&dir.path().join("zero.csv")).unwrap();
    assert!(!rows.is_empty());
    for r in &rows {
        assert!(r.x.iter().chain(&r.u).chain(&r.w_hat).all(|v| *v == 0.0));
        assert_eq!(r.cost_cum, 0.0);
    }
    let summary: toml::Table = std::fs::read_to_string(dir.path().join("zero.summary.toml")).unwrap().parse().unwrap();
    assert_eq!(summary["regret"]["regret"].as_float(), Some(0.0));
    assert_eq!(summary["regret"]["min_converged"].as_bool(), Some(true));
}

#[test]
fn csv_round_trip_recomputes_cumulative_cost_and_regret() {
    let dir = tempfile::tempdir().unwrap();
    let out = nsc(&["run", s(&benchmark("scalar")), "--out-dir", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv_file(&dir.path().join("scalar.csv")).unwrap();
    let mut cum = 0.0;
    for r in &rows {
        cum += r.cost_inst;
        assert!((cum - r.cost_cum).abs() <= 1e-10 * cum.abs().max(1.0), "{cum} vs {}", r.cost_cum);
    }
    let summary: toml::Table = std::fs::read_to_string(dir.path().join("scalar.summary.toml")).unwrap().parse().unwrap();
    let j_alg = summary["cost"]["j_alg"].as_float().unwrap();
    let j_star = summary["baseline"]["j_star"].as_float().unwrap();
    let regret = summary["regret"]["regret"].as_float().unwrap();
    assert!((j_alg - cum).abs() <= 1e-10 * j_alg.abs().max(1.0));
    assert!((regret - (cum - j_star)).abs() <= 1e-10 * j_alg.abs().max(1.0));
}

#[test]
fn seed_override_changes_the_disturbance() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str, seed: Option<&str>| {
        let out_dir = dir.path().join(tag);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_nsc"));
        cmd.args(["run", s(&benchmark("two_dim")), "--out-dir", s(&out_dir)]);
        match seed {
            Some(v) => cmd.env("NSC_SEED_OVERRIDE", v),
            None => cmd.env_remove("NSC_SEED_OVERRIDE"),
        };
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(out_dir.join("two_dim.csv")).unwrap()
    };
    let base = run("base", None);
    assert_ne!(base, run("other", Some("12345")));
    assert_eq!(base, run("same", Some("7")));
}

#[test]
fn tampered_decay_is_caught_with_an_index() {
    let out = nsc(&["verify", "lemmas", "--tamper-decay"]);
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().find(|l| l.contains("psi bound")).expect("psi bound line");
    assert!(line.starts_with("FAIL") && line.contains("index i ="), "{line}");
}

#[test]
fn forced_finite_differences_agree_with_adjoint_verdict() {
    let a = nsc(&["verify", "gradients"]);
    let b = nsc(&["verify", "gradients", "--force-fd"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.status.code(), b.status.code());
}

#[test]
fn unknown_verify_suite_is_rejected() {
    assert!(!nsc(&["verify", "everything"]).status.success());
}

#[test]
fn plot_and_baseline_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    assert!(nsc(&["run", s(&benchmark("scalar")), "--out-dir", s(dir.path())]).status.success());
    let svg = dir.path().join("plot.svg");
    let out = nsc(&["plot", s(&dir.path().join("scalar.csv")), "--out", s(&svg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.contains("<polyline"));

    let out = nsc(&["baseline", s(&benchmark("scalar"))]);
    assert!(out.status.success());
    let parsed: toml::Table = String::from_utf8_lossy(&out.stdout).parse().unwrap();
    assert!(parsed["baseline"]["j_star"].as_float().unwrap() > 0.0);
}

#[test]
fn sweep_writes_table_and_chart() {
    let dir = tempfile::tempdir().unwrap();
    let out = nsc(&[
        "sweep",
        s(&benchmark("scalar")),
        "--param",
        "seed",
        "--values",
        "1,2",
        "--jobs",
        "2",
        "--out-dir",
        s(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("scalar.sweep_seed.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(dir.path().join("scalar.sweep_seed.svg").exists());
}
