//! Runs the online controller on the two-dimensional benchmark and writes
//! the per-sample log as CSV to the temp directory.

use nsc::bench::suite;
use nsc::cli::csvlog::write_run_csv;
use nsc::controller::run;

fn main() -> nsc::Result<()> {
    let exp = suite::load("two_dim")?;
    let c = &exp.controller;
    println!("T = {}, h = {}, m = {}, H = {}, l = {}", c.horizon, c.h, c.m, c.memory, c.l());
    let log = run(&exp.system, &exp.disturbance, &exp.cost, c)?;
    println!("J_alg = {:.8}", log.total_cost);
    println!("max ||x|| = {:.5}, max ||u|| = {:.5}, W0 = {:.5}", log.max_state, log.max_action, log.w0);
    for s in log.slow.iter().step_by(log.slow.len().div_ceil(8).max(1)) {
        println!("slow step {:>3}: g = {:.6e}, ||grad|| = {:.3e}, eta = {:.3e}", s.k, s.g_value, s.grad_norm, s.eta);
    }
    println!("final max ||M^i|| / b_i = {:.4}", log.final_params().max_class_ratio());
    let out = std::env::temp_dir().join("online_control_run.csv");
    write_run_csv(&log, &out)?;
    println!("log: {}", out.display());
    Ok(())
}
