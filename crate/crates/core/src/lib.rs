#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod controller;
pub mod dac;
pub mod error;
pub mod linalg;
pub mod linsys;
pub mod oco;
pub mod stability;

pub use error::{Error, Result};
