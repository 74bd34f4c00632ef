//! Experiment driver for the warehouse Lagrangian game and the tabular
//! testbed: config loading, experiment runners, tables and run manifests.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod commands;
pub mod config;
pub mod experiments;
pub mod manifest;
pub mod pool;
