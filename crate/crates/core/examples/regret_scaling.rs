//! Regret and its four-term decomposition across horizons on the
//! two-dimensional benchmark. Pass horizons as arguments (default 64 128 256).

use nsc::bench::suite;
use nsc::cli::harness::execute;

fn main() -> nsc::Result<()> {
    let horizons: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let horizons = if horizons.is_empty() { vec![64.0, 128.0, 256.0] } else { horizons };
    println!("{:>6} {:>13} {:>13} {:>13} {:>11} {:>11} {:>11} {:>11}", "T", "J_alg", "J*", "regret", "R0", "R1", "R2", "R3");
    for t in horizons {
        let mut raw = suite::raw("two_dim")?;
        raw.controller.horizon = t;
        let out = execute(&raw.resolve()?)?;
        let r = out.report.expect("benchmark enables the baseline");
        println!(
            "{t:>6} {:>13.6e} {:>13.6e} {:>13.6e} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e}",
            r.j_alg, r.j_baseline, r.regret, r.r0, r.r1, r.r2, r.r3
        );
    }
    Ok(())
}
