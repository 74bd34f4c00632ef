use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use morl_core::rng::SimRng;

use crate::config::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Occupancy {
    Empty,
    Small,
    Large,
}

impl Occupancy {
    /// 0 for empty, 1 for small, 2 for large.
    pub fn code(self) -> f64 {
        match self {
            Occupancy::Empty => 0.0,
            Occupancy::Small => 1.0,
            Occupancy::Large => 2.0,
        }
    }
}

/// One floor position and the tote in it, if any.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToteSlot {
    pub occupancy: Occupancy,
    pub n_item: u32,
    /// Items of this tote requested by scheduled picks.
    pub n_pick: u32,
    pub gcu: f64,
}

impl ToteSlot {
    pub const EMPTY: ToteSlot = ToteSlot { occupancy: Occupancy::Empty, n_item: 0, n_pick: 0, gcu: 0.0 };

    pub fn new(large: bool, n_item: u32, n_pick: u32, cfg: &SimConfig) -> Self {
        let occupancy = if large { Occupancy::Large } else { Occupancy::Small };
        let gcu = n_item as f64 / capacity(large, cfg) as f64;
        ToteSlot { occupancy, n_item, n_pick: n_pick.min(n_item), gcu }
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy == Occupancy::Empty
    }

    pub fn is_large(&self) -> bool {
        self.occupancy == Occupancy::Large
    }

    /// Paper's lookup-table estimate of a robot emptying this tote: `1 / n_item`,
    /// and 1 for an empty slot.
    pub fn lte(&self) -> f64 {
        if self.n_item == 0 {
            1.0
        } else {
            1.0 / self.n_item as f64
        }
    }
}

pub fn capacity(large: bool, cfg: &SimConfig) -> u32 {
    if large {
        cfg.large_capacity
    } else {
        cfg.small_capacity
    }
}

/// A tote waiting at a station to be emptied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceTote {
    pub large: bool,
    pub n_item: u32,
}

/// A tote at a station receiving consolidated items.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DestTote {
    pub large: bool,
    pub n_item: u32,
    pub capacity: u32,
}

impl DestTote {
    pub fn gcu(&self) -> f64 {
        self.n_item as f64 / self.capacity as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub sources: VecDeque<SourceTote>,
    pub dests: VecDeque<DestTote>,
    /// Fractional service progress; one unit finishes one source tote.
    pub credit: f64,
}

impl Station {
    pub fn items(&self) -> u64 {
        self.sources.iter().map(|t| t.n_item as u64).sum::<u64>() + self.dests.iter().map(|t| t.n_item as u64).sum::<u64>()
    }

    pub fn len(&self) -> usize {
        self.sources.len() + self.dests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Running totals, mostly for conservation checks and reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub emptied: u64,
    pub robot_failures: u64,
    pub ejected_totes: u64,
    pub items_ejected: u64,
    /// Items consolidated while no destination tote was present.
    pub items_overflow: u64,
    pub items_picked: u64,
    pub totes_stowed: u64,
}

#[derive(Debug, Clone)]
pub struct FloorState {
    pub slots: Vec<ToteSlot>,
    pub cursor: usize,
    pub human: Station,
    pub robot: Station,
    pub etph: f64,
    pub n_large: usize,
    pub t: usize,
    pub day_step: usize,
    pub day: usize,
    /// Simulated hours since reset.
    pub clock: f64,
    /// Times (hours) at which source totes were emptied.
    pub emptied_log: Vec<f64>,
    pub counters: Counters,
    pub rng: SimRng,
}

impl FloorState {
    /// `[L^H_S, L^H_D, L^R_S, L^R_D]`.
    pub fn queues(&self) -> [usize; 4] {
        [self.human.sources.len(), self.human.dests.len(), self.robot.sources.len(), self.robot.dests.len()]
    }

    pub fn count_large(&self) -> usize {
        self.slots.iter().filter(|s| s.is_large()).count()
    }

    pub fn occupied(&self) -> usize {
        self.slots.iter().filter(|s| !s.is_empty()).count()
    }

    /// Emptied totes per hour over the trailing window, from the event log.
    pub fn etph_from_log(&self, window_hours: f64) -> f64 {
        let from = self.clock - window_hours;
        self.emptied_log.iter().rev().take_while(|&&t| t > from).count() as f64 / window_hours
    }

    /// Items on the floor and at both stations.
    pub fn total_items(&self) -> u64 {
        self.slots.iter().map(|s| s.n_item as u64).sum::<u64>() + self.human.items() + self.robot.items()
    }

    pub fn current_slot(&self) -> &ToteSlot {
        &self.slots[self.cursor]
    }
}
