//! Floor dynamics: station service, dispatch, end-of-day stow/pick/shuffle
//! and the reward vector.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use morl_core::mdp::{EpisodicMdp, Observation};
use morl_core::rng::seeded;
use morl_core::{Error, Result};

use crate::action::{Action, Role, StationKind};
use crate::config::SimConfig;
use crate::state::{capacity, Counters, DestTote, FloorState, SourceTote, Station, ToteSlot};

pub const REWARD_DIM: usize = 5;
pub const FEATURE_DIM: usize = 12;

/// Feature names in observation order.
pub const FEATURE_NAMES: [&str; FEATURE_DIM] =
    ["n_large", "etph", "human_sources", "human_dests", "robot_sources", "robot_dests", "occupancy", "lte", "n_item", "n_pick", "gcu", "t"];

#[derive(Debug, Clone)]
pub struct WarehouseEnv {
    cfg: SimConfig,
}

impl WarehouseEnv {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    fn new_tote(&self, rng: &mut impl Rng) -> ToteSlot {
        let large = rng.random_bool(self.cfg.init_large_fraction);
        let n_item = rng.random_range(1..=self.cfg.max_items);
        let n_pick = Binomial::new(n_item as u64, self.cfg.pick_demand).expect("valid binomial").sample(rng) as u32;
        ToteSlot::new(large, n_item, n_pick, &self.cfg)
    }

    pub fn reset_state(&self, seed: u64) -> FloorState {
        let mut rng = seeded(seed);
        let slots: Vec<ToteSlot> = (0..self.cfg.floor_max)
            .map(|_| if rng.random_bool(self.cfg.init_fill) { self.new_tote(&mut rng) } else { ToteSlot::EMPTY })
            .collect();
        let n_large = slots.iter().filter(|s| s.is_large()).count();
        FloorState {
            slots,
            cursor: 0,
            human: Station::default(),
            robot: Station::default(),
            etph: 0.0,
            n_large,
            t: 0,
            day_step: 0,
            day: 0,
            clock: 0.0,
            emptied_log: Vec::new(),
            counters: Counters::default(),
            rng,
        }
    }

    /// Decodes an action index of this environment's action space.
    pub fn decode(&self, index: usize) -> Result<Action> {
        if self.cfg.collapse_actions {
            Action::from_collapsed(index)
        } else {
            Action::from_index(index)
        }
    }

    /// One decision step: stations work through the elapsed interval, then
    /// the tote under the cursor is dispatched (or not) and the cursor moves
    /// on. Returns `(r_0, ..., r_4)`.
    pub fn step_action(&self, s: &mut FloorState, action: Action) -> Result<[f64; REWARD_DIM]> {
        let horizon = self.cfg.horizon();
        if s.t >= horizon {
            return Err(Error::EpisodeOver { t: s.t, horizon });
        }
        let dt = self.cfg.step_hours();
        let now = s.clock + dt;
        self.serve(s, dt, now);
        s.clock = now;

        let slot = s.slots[s.cursor];
        if !action.ignore && !slot.is_empty() {
            let station = match action.station {
                StationKind::Human => &mut s.human,
                StationKind::Robot => &mut s.robot,
            };
            match action.role {
                Role::Source => station.sources.push_back(SourceTote { large: slot.is_large(), n_item: slot.n_item }),
                Role::Destination => station.dests.push_back(DestTote {
                    large: slot.is_large(),
                    n_item: slot.n_item,
                    capacity: capacity(slot.is_large(), &self.cfg),
                }),
            }
            if slot.is_large() {
                s.n_large -= 1;
            }
            s.slots[s.cursor] = ToteSlot::EMPTY;
        }
        s.cursor = (s.cursor + 1) % self.cfg.floor_max;
        s.t += 1;
        s.day_step += 1;
        s.etph = s.etph_from_log(self.cfg.etph_window_hours);
        let reward = self.rewards(s);
        if s.day_step == self.cfg.steps_per_day && s.t < horizon {
            self.end_of_day(s)?;
        }
        Ok(reward)
    }

    /// Reward vector of the current levels.
    pub fn rewards(&self, s: &FloorState) -> [f64; REWARD_DIM] {
        let h = self.cfg.horizon() as f64;
        let a = &self.cfg.thresholds;
        let [hs, hd, rs, rd] = s.queues().map(|q| q as f64);
        [
            s.etph,
            (a.large_fraction - s.n_large as f64 / self.cfg.floor_max as f64) / h,
            (-a.sd_ratio + (hs + rs) / (1.0 + hd + rd)) / h,
            (a.manual_cap - (hs + hd)) / h,
            (a.robot_cap - (rs + rd)) / h,
        ]
    }

    /// Both stations work for `dt` hours. Robot failures join the human
    /// source queue after the robot's turn, so they are served from the next
    /// interval on.
    fn serve(&self, s: &mut FloorState, dt: f64, now: f64) {
        let cfg = &self.cfg;
        let failed = serve_station(&mut s.robot, cfg.robot_rate, cfg.robot_workers, dt, cfg, now, true, &mut s.rng, &mut s.counters, &mut s.emptied_log);
        serve_station(&mut s.human, cfg.human_rate, cfg.human_workers, dt, cfg, now, false, &mut s.rng, &mut s.counters, &mut s.emptied_log);
        s.human.sources.extend(failed);
    }

    /// Executes scheduled picks, stows new totes into empty slots and
    /// shuffles the floor.
    pub fn end_of_day(&self, s: &mut FloorState) -> Result<()> {
        if s.day_step != self.cfg.steps_per_day {
            return Err(Error::Contract(format!("end of day called at step {} of {}", s.day_step, self.cfg.steps_per_day)));
        }
        for slot in s.slots.iter_mut().filter(|x| !x.is_empty()) {
            let k = (self.cfg.pick_fraction * slot.n_pick as f64).round() as u32;
            s.counters.items_picked += k as u64;
            let left = slot.n_item - k;
            *slot = if left == 0 { ToteSlot::EMPTY } else { ToteSlot::new(slot.is_large(), left, slot.n_pick - k, &self.cfg) };
        }
        let arrivals = if self.cfg.stow_rate > 0.0 {
            Poisson::new(self.cfg.stow_rate).expect("positive rate").sample(&mut s.rng) as usize
        } else {
            0
        };
        let mut stowed = 0;
        for i in 0..s.slots.len() {
            if stowed == arrivals {
                break;
            }
            if s.slots[i].is_empty() {
                s.slots[i] = self.new_tote(&mut s.rng);
                stowed += 1;
            }
        }
        s.counters.totes_stowed += stowed as u64;
        s.slots.shuffle(&mut s.rng);
        s.n_large = s.count_large();
        s.day_step = 0;
        s.day += 1;
        s.cursor = 0;
        Ok(())
    }

    /// Unscaled observation components in order (see [`FEATURE_NAMES`]).
    pub fn raw_features(&self, s: &FloorState) -> [f64; FEATURE_DIM] {
        let slot = s.current_slot();
        let [hs, hd, rs, rd] = s.queues().map(|q| q as f64);
        [
            s.n_large as f64,
            s.etph,
            hs,
            hd,
            rs,
            rd,
            slot.occupancy.code(),
            slot.lte(),
            slot.n_item as f64,
            slot.n_pick as f64,
            slot.gcu,
            s.t as f64,
        ]
    }

    /// Raw features min-max scaled to `[0, 1]` by config bounds.
    pub fn scaled_features(&self, s: &FloorState) -> [f64; FEATURE_DIM] {
        let raw = self.raw_features(s);
        let cfg = &self.cfg;
        let item_max = cfg.large_capacity.max(cfg.small_capacity) as f64;
        let etph_max = (cfg.human_rate * cfg.human_workers as f64 + cfg.robot_rate * cfg.robot_workers as f64).max(1.0);
        let upper = [
            cfg.floor_max as f64,
            etph_max,
            cfg.queue_scale,
            cfg.queue_scale,
            cfg.queue_scale,
            cfg.queue_scale,
            2.0,
            1.0,
            item_max,
            item_max,
            1.0,
            cfg.horizon() as f64,
        ];
        let mut out = [0.0; FEATURE_DIM];
        for ((o, r), u) in out.iter_mut().zip(raw).zip(upper) {
            *o = (r / u).clamp(0.0, 1.0);
        }
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn serve_station(
    st: &mut Station,
    rate: f64,
    workers: u32,
    dt: f64,
    cfg: &SimConfig,
    now: f64,
    robot: bool,
    rng: &mut impl Rng,
    counters: &mut Counters,
    log: &mut Vec<f64>,
) -> Vec<SourceTote> {
    let factor = if st.dests.is_empty() { cfg.no_dest_rate_factor } else { 1.0 };
    let busy = st.sources.len().min(workers as usize).max(1) as f64;
    st.credit += rate * busy * dt * factor;
    let mut failed = Vec::new();
    while st.credit >= 1.0 {
        let Some(tote) = st.sources.pop_front() else { break };
        st.credit -= 1.0;
        if robot && !rng.random_bool(1.0 / tote.n_item.max(1) as f64) {
            counters.robot_failures += 1;
            failed.push(tote);
            continue;
        }
        counters.emptied += 1;
        log.push(now);
        consolidate(st, tote.n_item, cfg, counters);
    }
    if st.sources.is_empty() {
        st.credit = st.credit.min(1.0);
    }
    failed
}

/// Moves `items` into the front destination totes, ejecting each one that
/// reaches the fill threshold.
fn consolidate(st: &mut Station, mut items: u32, cfg: &SimConfig, counters: &mut Counters) {
    while items > 0 {
        let Some(dest) = st.dests.front_mut() else {
            counters.items_overflow += items as u64;
            return;
        };
        let moved = items.min(dest.capacity - dest.n_item.min(dest.capacity));
        dest.n_item += moved;
        items -= moved;
        if dest.gcu() >= cfg.eject_gcu || dest.n_item >= dest.capacity {
            counters.ejected_totes += 1;
            counters.items_ejected += dest.n_item as u64;
            st.dests.pop_front();
        }
    }
}

impl EpisodicMdp for WarehouseEnv {
    type State = FloorState;

    fn horizon(&self) -> usize {
        self.cfg.horizon()
    }

    fn n_actions(&self) -> usize {
        self.cfg.n_actions()
    }

    fn reward_dim(&self) -> usize {
        REWARD_DIM
    }

    fn feature_dim(&self) -> usize {
        FEATURE_DIM
    }

    fn reset(&self, seed: u64) -> Result<FloorState> {
        Ok(self.reset_state(seed))
    }

    fn observe_into(&self, state: &FloorState, obs: &mut Observation) {
        obs.state = None;
        obs.step = state.t;
        obs.features.clear();
        obs.features.extend_from_slice(&self.scaled_features(state));
    }

    fn step(&self, state: &mut FloorState, action: usize, reward: &mut [f64]) -> Result<()> {
        let a = self.decode(action)?;
        let r = self.step_action(state, a)?;
        reward.copy_from_slice(&r);
        Ok(())
    }
}
