//! Benchmark definitions shipped with the crate, in the `nsc` config format.

use crate::cli::config::{parse_str, Experiment, RawConfig};
use crate::error::{Error, Result};

pub const SCALAR: &str = include_str!("../../benchmarks/scalar.toml");
pub const TWO_DIM: &str = include_str!("../../benchmarks/two_dim.toml");
pub const ZERO: &str = include_str!("../../benchmarks/zero.toml");

/// `(name, document)` for every shipped benchmark.
pub const ALL: [(&str, &str); 3] = [("scalar", SCALAR), ("two_dim", TWO_DIM), ("zero", ZERO)];

pub fn raw(name: &str) -> Result<RawConfig> {
    let (_, text) = ALL
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::invalid(format!("unknown benchmark `{name}`")))?;
    parse_str(text)
}

pub fn load(name: &str) -> Result<Experiment> {
    raw(name)?.resolve()
}
