use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nsc::cli::harness::{self, SweepParam};
use nsc::cli::verify::{run_suite, Suite, VerifyOptions};
use nsc::Error;

#[derive(Parser)]
#[command(name = "nsc", version, about = "Online non-stochastic control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the controller (and the baseline if enabled) and write artifacts.
    Run {
        config: PathBuf,
        /// Directory for outputs not named in the config.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run one config over a list of values of a single parameter.
    Sweep {
        config: PathBuf,
        /// One of T, h, H, m, eta, seed.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        /// Worker threads; defaults to the hardware thread count.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Best certified linear gain in hindsight.
    Baseline { config: PathBuf },
    /// Numeric property checks: lemmas, gradients, stability or all.
    Verify {
        suite: String,
        /// Use finite differences for every gradient.
        #[arg(long)]
        force_fd: bool,
        /// Check the Psi bound against a decay base the certificate does not support.
        #[arg(long)]
        tamper_decay: bool,
    },
    /// Plot a run CSV.
    Plot {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out_dir } => match harness::cmd_run(&config, &out_dir) {
            Ok((out, paths)) => {
                println!("J_alg = {:.10e}", out.log.total_cost);
                if let Some(r) = &out.report {
                    println!("J_star = {:.10e}\nregret = {:.10e}", r.j_baseline, r.regret);
                }
                println!("csv: {}\nsummary: {}", paths.csv.display(), paths.summary.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Sweep {
            config,
            param,
            values,
            jobs,
            out_dir,
        } => {
            let parsed = param
                .parse::<SweepParam>()
                .and_then(|p| harness::parse_values(&values).map(|v| (p, v)));
            let (param, values) = match parsed {
                Ok(x) => x,
                Err(e) => return fail(e),
            };
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            match harness::cmd_sweep(&config, param, &values, jobs, &out_dir) {
                Ok((rows, path)) => {
                    for r in &rows {
                        match &r.error {
                            None => println!("{} = {}: regret = {:.6e} ({:.1} s)", param.name(), r.value, r.regret, r.wall_seconds),
                            Some(e) => println!("{} = {}: failed: {e}", param.name(), r.value),
                        }
                    }
                    let (slope, used) = harness::log_log_slope(&rows);
                    println!("log-log slope = {slope:.4} over {used} points\ntable: {}", path.display());
                    if rows.iter().all(|r| r.error.is_some()) {
                        ExitCode::FAILURE
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => fail(e),
            }
        }
        Command::Baseline { config } => match harness::cmd_baseline(&config) {
            Ok((_, text)) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Verify {
            suite,
            force_fd,
            tamper_decay,
        } => {
            let suite = match suite.parse::<Suite>() {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            let checks = run_suite(suite, &VerifyOptions { force_fd, tamper_decay });
            for c in &checks {
                println!("{c}");
            }
            if checks.iter().all(|c| c.pass) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::Plot { csv, out } => match harness::cmd_plot(&csv, &out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(e),
        },
    }
}
