//! Library surface of the CLI crate: the run-configuration layer,
//! shared between the binary and the acceptance suite.

pub mod config;
