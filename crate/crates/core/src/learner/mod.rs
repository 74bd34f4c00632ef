//! The policy player: approximate best responses to fixed multipliers.

pub mod dqn;
pub mod gap;
pub mod qnet;
pub mod replay;
pub mod scalarize;

pub use dqn::{train_best_response, DqnLearner, EpisodeRecord, LearnerConfig, QPolicy, TrainingCurve};
pub use gap::{best_response_gap, tabular_best_response_gap};
pub use scalarize::{scalarize, ScalarizedSpec};
