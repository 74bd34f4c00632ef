//! Tote-consolidation floor simulator: a cursor walks the floor slots and
//! each decision sends the tote under it to a human or robot station as a
//! source or destination, or leaves it. Stations empty source totes into
//! destination totes; days end with picks, new stows and a shuffle.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod config;
pub mod sim;
pub mod state;
pub mod trace;

pub use action::{Action, Role, StationKind};
pub use config::{KpiThresholds, SimConfig, CONSTRAINT_LABELS};
pub use sim::{WarehouseEnv, FEATURE_DIM, FEATURE_NAMES, REWARD_DIM};
pub use state::{FloorState, Occupancy, ToteSlot};
