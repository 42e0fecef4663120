//! The `mf` command line and the benchmark harness behind `mf bench`.

pub mod bench;
pub mod cli;
