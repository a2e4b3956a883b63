use nsc::bench::baseline::{diagonal_grid, search, BaselineOptions, SearchMethod};
use nsc::bench::replay::Replay;
use nsc::bench::suite;
use nsc::cli::harness::baseline_for;

#[test]
fn nelder_mead_beats_a_diagonal_grid_on_two_dim() {
    let exp = suite::load("two_dim").unwrap();
    let nm = baseline_for(&exp).unwrap();
    let replay = Replay::new(&exp.system, &exp.disturbance, &exp.cost, exp.grid().unwrap(), exp.controller.substeps).unwrap();
    let values: Vec<f64> = (0..=20).map(|i| 0.1 * i as f64).collect();
    let opts = BaselineOptions {
        method: SearchMethod::Grid(diagonal_grid(2, &values)),
        ..Default::default()
    };
    let grid = search(&replay, exp.baseline.class, &opts).unwrap();
    assert!(nm.j_star <= grid.j_star + 1e-12 * grid.j_star.abs(), "{} vs {}", nm.j_star, grid.j_star);
    assert_eq!(nm.replay_hash, grid.replay_hash);
}

#[test]
fn baseline_is_deterministic() {
    let exp = suite::load("two_dim").unwrap();
    let a = baseline_for(&exp).unwrap();
    let b = baseline_for(&exp).unwrap();
    assert_eq!(a.k_star, b.k_star);
    assert_eq!(a.j_star.to_bits(), b.j_star.to_bits());
}
