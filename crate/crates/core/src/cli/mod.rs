//! Command-line harness: config documents, CSV and SVG artifacts, the
//! verification suites and the subcommand drivers behind `nsc`.

pub mod config;
pub mod csvlog;
pub mod svg;
pub mod harness;
pub mod verify;
