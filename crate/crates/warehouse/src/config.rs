use serde::{Deserialize, Serialize};

use morl_core::regulator::ConstraintSpec;
use morl_core::{Error, Result};

/// KPI thresholds the four constraint rewards are measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KpiThresholds {
    /// Upper bound on the fraction of floor slots holding a large tote.
    pub large_fraction: f64,
    /// Lower bound on `sources / (1 + destinations)` across both stations.
    pub sd_ratio: f64,
    /// Upper bound on the human station's queue (sources plus destinations).
    pub manual_cap: f64,
    /// Upper bound on the robot station's queue.
    pub robot_cap: f64,
}

impl Default for KpiThresholds {
    fn default() -> Self {
        Self { large_fraction: 0.5, sd_ratio: 0.1, manual_cap: 3.0, robot_cap: 3.0 }
    }
}

impl KpiThresholds {
    pub fn as_array(&self) -> [f64; 4] {
        [self.large_fraction, self.sd_ratio, self.manual_cap, self.robot_cap]
    }
}

pub const CONSTRAINT_LABELS: [&str; 4] = ["n_large", "sd_ratio", "manual_cap", "robot_cap"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub floor_max: usize,
    pub steps_per_day: usize,
    pub n_days: usize,
    pub etph_window_hours: f64,
    /// Source totes one worker finishes per hour.
    pub human_rate: f64,
    pub robot_rate: f64,
    /// Parallel workers per station; each holds one source tote at a time.
    pub human_workers: u32,
    pub robot_workers: u32,
    /// Service speed multiplier while a station has no destination tote.
    pub no_dest_rate_factor: f64,
    /// Mean number of totes stowed at the end of each day.
    pub stow_rate: f64,
    pub pick_fraction: f64,
    /// Probability that an item is requested by a pick on a given day.
    pub pick_demand: f64,
    pub init_fill: f64,
    pub init_large_fraction: f64,
    /// Item counts are uniform on `1..=max_items`.
    pub max_items: u32,
    pub large_capacity: u32,
    pub small_capacity: u32,
    /// Destination totes leave their station once this full.
    pub eject_gcu: f64,
    /// Expose the 5 distinct behaviours instead of all 8 action indices.
    pub collapse_actions: bool,
    /// Queue length mapped to 1.0 by the observation scaling.
    pub queue_scale: f64,
    pub thresholds: KpiThresholds,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            floor_max: 1000,
            steps_per_day: 288,
            n_days: 1,
            etph_window_hours: 1.0,
            human_rate: 2.0,
            robot_rate: 6.0,
            human_workers: 16,
            robot_workers: 1,
            no_dest_rate_factor: 1.0,
            stow_rate: 150.0,
            pick_fraction: 0.5,
            pick_demand: 0.1,
            init_fill: 0.9,
            init_large_fraction: 0.5,
            max_items: 12,
            large_capacity: 24,
            small_capacity: 12,
            eject_gcu: 0.95,
            collapse_actions: false,
            queue_scale: 20.0,
            thresholds: KpiThresholds::default(),
        }
    }
}

impl SimConfig {
    /// One-minute decisions over ten days.
    pub fn paper_scale() -> Self {
        Self { steps_per_day: 1440, n_days: 10, ..Self::default() }
    }

    pub fn horizon(&self) -> usize {
        self.steps_per_day * self.n_days
    }

    pub fn step_hours(&self) -> f64 {
        24.0 / self.steps_per_day as f64
    }

    pub fn n_actions(&self) -> usize {
        if self.collapse_actions {
            5
        } else {
            8
        }
    }

    /// Game constraints for this simulator: every constraint reward is
    /// already a slack (positive when satisfied), so thresholds are zero and
    /// the orientation reads `-v <= 0`.
    pub fn constraint_spec(&self, cap: f64) -> Result<ConstraintSpec> {
        ConstraintSpec::new(vec![0.0; 4], vec![-1.0; 4], cap, CONSTRAINT_LABELS.map(String::from).to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.floor_max == 0 {
            return bad("floor_max must be positive".into());
        }
        if self.horizon() == 0 {
            return bad("steps_per_day and n_days must be positive".into());
        }
        for (name, v) in [
            ("etph_window_hours", self.etph_window_hours),
            ("queue_scale", self.queue_scale),
            ("eject_gcu", self.eject_gcu),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("human_rate", self.human_rate), ("robot_rate", self.robot_rate), ("stow_rate", self.stow_rate)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        for (name, v) in [
            ("no_dest_rate_factor", self.no_dest_rate_factor),
            ("pick_fraction", self.pick_fraction),
            ("pick_demand", self.pick_demand),
            ("init_fill", self.init_fill),
            ("init_large_fraction", self.init_large_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.human_workers == 0 || self.robot_workers == 0 {
            return bad("each station needs at least one worker".into());
        }
        if self.max_items == 0 || self.small_capacity == 0 || self.large_capacity == 0 {
            return bad("item counts and capacities must be positive".into());
        }
        if self.max_items > self.small_capacity.min(self.large_capacity) {
            return bad(format!("max_items {} exceeds a tote capacity", self.max_items));
        }
        if self.thresholds.as_array().iter().any(|a| !a.is_finite()) {
            return bad("non-finite KPI threshold".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SimConfig::default().validate().unwrap();
        let p = SimConfig::paper_scale();
        p.validate().unwrap();
        assert_eq!(p.horizon(), 14_400);
        assert_eq!(SimConfig::default().horizon(), 288);
    }

    #[test]
    fn rejects_empty_floor_and_horizon() {
        let c = SimConfig { floor_max: 0, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = SimConfig { n_days: 0, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c: SimConfig = toml::from_str("floor_max = 50\n[thresholds]\nmanual_cap = 4.0\n").unwrap();
        assert_eq!(c.floor_max, 50);
        assert_eq!(c.thresholds.manual_cap, 4.0);
        assert_eq!(c.thresholds.robot_cap, KpiThresholds::default().robot_cap);
        assert!(toml::from_str::<SimConfig>("flor_max = 50").is_err());
    }
}
