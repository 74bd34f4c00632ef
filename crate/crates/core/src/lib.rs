//! Constrained multi-objective RL as a Lagrangian game between a learner and a
//! multiplier regulator, with an exact tabular testbed.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod extraction;
pub mod fixtures;
pub mod frank_wolfe;
pub mod game;
pub mod learner;
pub mod mdp;
pub mod oracle;
pub mod regulator;
pub mod rng;
pub mod tabular;

pub use error::{Error, Result};
