//! Finite tabular MDPs: exact occupancy measures, values and backward induction.
//!
//! Tables are dense and row-major. A state-action table is indexed
//! `s * n_actions + a`; per-step quantities add a leading `h` dimension.

use std::fmt::Write as _;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{EpisodicMdp, Observation, Policy};
use crate::rng::{seeded, SimRng};

const ROW_TOL: f64 = 1e-12;

/// A dense `(state, action) -> f64` table.
#[derive(Debug, Clone, PartialEq)]
pub struct SaTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl SaTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, values: vec![0.0; n_states * n_actions] }
    }

    pub fn constant(n_states: usize, n_actions: usize, v: f64) -> Self {
        Self { n_states, n_actions, values: vec![v; n_states * n_actions] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::Shape("ragged reward rows".into()));
        }
        Ok(Self { n_states, n_actions, values: rows.concat() })
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    /// `self + scale * other`, elementwise.
    pub fn add_scaled(&self, other: &SaTable, scale: f64) -> SaTable {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + scale * b).collect();
        SaTable { n_states: self.n_states, n_actions: self.n_actions, values }
    }

    pub fn dot(&self, other: &SaTable) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

/// Finite-horizon tabular MDP with step-dependent transitions and stationary
/// reward tables, one per objective.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    /// `[h][s][a][s']`
    transitions: Vec<f64>,
    rewards: Vec<SaTable>,
    initial: Vec<f64>,
}

impl TabularMdp {
    /// Builds and validates an MDP whose transitions are the same at every step.
    /// `transitions[s][a]` is the next-state distribution.
    pub fn stationary(
        horizon: usize,
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<SaTable>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let n_states = transitions.len();
        let n_actions = transitions.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(horizon * n_states * n_actions * n_states);
        for _ in 0..horizon.max(1) {
            for row_s in &transitions {
                if row_s.len() != n_actions {
                    return Err(Error::Shape("ragged transition tensor".into()));
                }
                for row in row_s {
                    if row.len() != n_states {
                        return Err(Error::Shape(format!(
                            "transition row has {} entries, expected {n_states}",
                            row.len()
                        )));
                    }
                    flat.extend_from_slice(row);
                }
            }
        }
        if horizon == 0 {
            flat.clear();
        }
        Self::from_parts(n_states, n_actions, horizon, flat, rewards, initial)
    }

    pub fn from_parts(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        transitions: Vec<f64>,
        rewards: Vec<SaTable>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let mdp = Self { n_states, n_actions, horizon, transitions, rewards, initial };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Checks shapes, row-stochastic transitions and the initial distribution.
    pub fn validate(&self) -> Result<()> {
        let (s, a, h) = (self.n_states, self.n_actions, self.horizon);
        if s == 0 || a == 0 {
            return Err(Error::Shape("empty state or action space".into()));
        }
        if self.transitions.len() != h * s * a * s {
            return Err(Error::Shape(format!(
                "transition tensor has {} entries, expected {}",
                self.transitions.len(),
                h * s * a * s
            )));
        }
        if self.initial.len() != s {
            return Err(Error::Shape("initial distribution length".into()));
        }
        if self.rewards.is_empty() {
            return Err(Error::Shape("at least the objective reward is required".into()));
        }
        for (i, r) in self.rewards.iter().enumerate() {
            if r.n_states != s || r.n_actions != a || r.values.len() != s * a {
                return Err(Error::Shape(format!("reward table {i} has the wrong shape")));
            }
        }
        check_distribution(&self.initial, "initial distribution")?;
        for (k, row) in self.transitions.chunks(s).enumerate() {
            let (hh, rest) = (k / (s * a), k % (s * a));
            check_distribution(row, &format!("P_{hh}(.|s={}, a={})", rest / a, rest % a))?;
        }
        Ok(())
    }

    /// Random instance with Dirichlet(1)-like transitions and U[0,1] rewards.
    pub fn random(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        n_objectives: usize,
        seed: u64,
    ) -> Self {
        let mut rng = seeded(seed);
        let mut transitions = Vec::with_capacity(horizon * n_states * n_actions * n_states);
        for _ in 0..horizon * n_states * n_actions {
            let raw: Vec<f64> = (0..n_states).map(|_| -rng.random::<f64>().max(1e-12).ln()).collect();
            let total: f64 = raw.iter().sum();
            transitions.extend(raw.iter().map(|x| x / total));
        }
        let rewards = (0..n_objectives)
            .map(|_| SaTable {
                n_states,
                n_actions,
                values: (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect(),
            })
            .collect();
        let raw: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 0.05).collect();
        let total: f64 = raw.iter().sum();
        let initial = raw.iter().map(|x| x / total).collect();
        Self { n_states, n_actions, horizon, transitions, rewards, initial }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_objectives(&self) -> usize {
        self.rewards.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn reward(&self, i: usize) -> &SaTable {
        &self.rewards[i]
    }

    pub fn rewards(&self) -> &[SaTable] {
        &self.rewards
    }

    /// Next-state distribution `P_h(. | s, a)`.
    #[inline]
    pub fn next_dist(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let n = self.n_states;
        let start = ((h * n + s) * self.n_actions + a) * n;
        &self.transitions[start..start + n]
    }

    /// Shortens (or keeps) the horizon; used to build edge cases in tests.
    pub fn truncate_horizon(&mut self, horizon: usize) {
        let per_step = self.n_states * self.n_actions * self.n_states;
        self.transitions.truncate(horizon.min(self.horizon) * per_step);
        self.horizon = horizon.min(self.horizon);
    }

    /// Serializes to the plain-text matrix format read by [`TabularMdp::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tabular-mdp 1");
        let _ = writeln!(out, "states {}", self.n_states);
        let _ = writeln!(out, "actions {}", self.n_actions);
        let _ = writeln!(out, "horizon {}", self.horizon);
        let _ = writeln!(out, "objectives {}", self.rewards.len());
        let _ = writeln!(out, "initial");
        let _ = writeln!(out, "{}", join(&self.initial));
        let _ = writeln!(out, "transitions per-step");
        for row in self.transitions.chunks(self.n_states) {
            let _ = writeln!(out, "{}", join(row));
        }
        for (i, r) in self.rewards.iter().enumerate() {
            let _ = writeln!(out, "reward {i}");
            for row in r.values.chunks(self.n_actions) {
                let _ = writeln!(out, "{}", join(row));
            }
        }
        out
    }

    /// Parses the plain-text matrix format.
    ///
    /// ```text
    /// tabular-mdp 1
    /// states 2
    /// actions 2
    /// horizon 3
    /// objectives 2
    /// initial
    /// 1 0
    /// transitions stationary      # or `per-step`: horizon blocks of rows
    /// 0.5 0.5                     # one row of next-state probabilities
    /// ...                         # per (s, a), in that order
    /// reward 0
    /// 1 0                         # one row of action rewards per state
    /// 0 1
    /// reward 1
    /// ...
    /// ```
    ///
    /// `#` starts a comment; blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        let mut cur = Cursor { lines: &lines, pos: 0 };

        let (line, header) = cur.take("header")?;
        if header != "tabular-mdp 1" {
            return Err(Error::Parse { line, msg: format!("unknown header `{header}`") });
        }
        let n_states = cur.keyed("states")?;
        let n_actions = cur.keyed("actions")?;
        let horizon = cur.keyed("horizon")?;
        let n_objectives = cur.keyed("objectives")?;

        cur.expect("initial")?;
        let initial = cur.row("initial", n_states)?;
        let (line, mode) = cur.take("transitions")?;
        let blocks = match mode {
            "transitions stationary" => 1,
            "transitions per-step" => horizon,
            other => return Err(Error::Parse { line, msg: format!("unknown transitions mode `{other}`") }),
        };
        let mut block = Vec::with_capacity(blocks * n_states * n_actions * n_states);
        for _ in 0..blocks * n_states * n_actions {
            block.extend(cur.row("transition row", n_states)?);
        }
        let transitions = if blocks == 1 { block.repeat(horizon) } else { block };
        let mut rewards = Vec::with_capacity(n_objectives);
        for i in 0..n_objectives {
            cur.expect(&format!("reward {i}"))?;
            let mut values = Vec::with_capacity(n_states * n_actions);
            for _ in 0..n_states {
                values.extend(cur.row("reward row", n_actions)?);
            }
            rewards.push(SaTable { n_states, n_actions, values });
        }
        if let Some(&(line, l)) = lines.get(cur.pos) {
            return Err(Error::Parse { line, msg: format!("trailing content `{l}`") });
        }
        Self::from_parts(n_states, n_actions, horizon, transitions, rewards, initial)
    }
}

struct Cursor<'a> {
    lines: &'a [(usize, &'a str)],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let item = self.lines.get(self.pos).copied().ok_or_else(|| Error::Parse {
            line: self.lines.last().map_or(0, |l| l.0),
            msg: format!("unexpected end of input, expected {what}"),
        })?;
        self.pos += 1;
        Ok(item)
    }

    fn expect(&mut self, want: &str) -> Result<()> {
        let (line, got) = self.take(want)?;
        if got != want {
            return Err(Error::Parse { line, msg: format!("expected `{want}`, got `{got}`") });
        }
        Ok(())
    }

    fn keyed(&mut self, key: &str) -> Result<usize> {
        let (line, l) = self.take(key)?;
        let mut it = l.split_whitespace();
        if it.next() != Some(key) {
            return Err(Error::Parse { line, msg: format!("expected `{key} <n>`") });
        }
        it.next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Parse { line, msg: format!("bad value for `{key}`") })
    }

    fn row(&mut self, what: &str, len: usize) -> Result<Vec<f64>> {
        let (line, l) = self.take(what)?;
        let vals: std::result::Result<Vec<f64>, _> = l.split_whitespace().map(str::parse).collect();
        let vals = vals.map_err(|e| Error::Parse { line, msg: format!("{what}: {e}") })?;
        if vals.len() != len {
            return Err(Error::Parse { line, msg: format!("{what}: expected {len} numbers, got {}", vals.len()) });
        }
        Ok(vals)
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::Validation(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > ROW_TOL {
        return Err(Error::Validation(format!("{what} sums to {total}")));
    }
    Ok(())
}

fn sample_index(p: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// Episode state of a tabular MDP.
#[derive(Debug, Clone)]
pub struct TabularState {
    pub s: usize,
    pub h: usize,
    rng: SimRng,
}

impl EpisodicMdp for TabularMdp {
    type State = TabularState;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn reward_dim(&self) -> usize {
        self.rewards.len()
    }

    /// One-hot state followed by one-hot step.
    fn feature_dim(&self) -> usize {
        self.n_states + self.horizon
    }

    fn reset(&self, seed: u64) -> Result<TabularState> {
        let mut rng = seeded(seed);
        let s = sample_index(&self.initial, &mut rng);
        Ok(TabularState { s, h: 0, rng })
    }

    fn observe_into(&self, state: &TabularState, obs: &mut Observation) {
        obs.state = Some(state.s);
        obs.step = state.h;
        obs.features.clear();
        obs.features.resize(self.feature_dim(), 0.0);
        obs.features[state.s] = 1.0;
        if state.h < self.horizon {
            obs.features[self.n_states + state.h] = 1.0;
        }
    }

    fn step(&self, state: &mut TabularState, action: usize, reward: &mut [f64]) -> Result<()> {
        if state.h >= self.horizon {
            return Err(Error::EpisodeOver { t: state.h, horizon: self.horizon });
        }
        if action >= self.n_actions {
            return Err(Error::InvalidAction { action, n_actions: self.n_actions });
        }
        for (r, table) in reward.iter_mut().zip(&self.rewards) {
            *r = table.get(state.s, action);
        }
        let next = sample_index(self.next_dist(state.h, state.s, action), &mut state.rng);
        state.s = next;
        state.h += 1;
        Ok(())
    }

    fn as_tabular(&self) -> Option<&TabularMdp> {
        Some(self)
    }
}

/// Non-stationary Markov policy `pi_h(a | s)` stored as `[h][s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn from_probs(n_states: usize, n_actions: usize, horizon: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != horizon * n_states * n_actions {
            return Err(Error::Shape("policy table size".into()));
        }
        for (k, row) in probs.chunks(n_actions).enumerate() {
            check_distribution(row, &format!("pi_{}(.|s={})", k / n_states, k % n_states))?;
        }
        Ok(Self { n_states, n_actions, horizon, probs })
    }

    pub fn uniform(mdp: &TabularMdp) -> Self {
        let n = mdp.n_actions;
        Self {
            n_states: mdp.n_states,
            n_actions: n,
            horizon: mdp.horizon,
            probs: vec![1.0 / n as f64; mdp.horizon * mdp.n_states * n],
        }
    }

    pub fn constant(mdp: &TabularMdp, action: usize) -> Self {
        Self::deterministic(mdp, &vec![vec![action; mdp.n_states]; mdp.horizon])
    }

    /// `actions[h][s]` is the action played in state `s` at step `h`.
    pub fn deterministic(mdp: &TabularMdp, actions: &[Vec<usize>]) -> Self {
        let (s, a) = (mdp.n_states, mdp.n_actions);
        let mut probs = vec![0.0; mdp.horizon * s * a];
        for (h, row) in actions.iter().enumerate().take(mdp.horizon) {
            for (st, &act) in row.iter().enumerate() {
                probs[(h * s + st) * a + act] = 1.0;
            }
        }
        Self { n_states: s, n_actions: a, horizon: mdp.horizon, probs }
    }

    /// Queries an arbitrary policy at every `(h, s)` with the MDP's observation.
    /// Stochastic policies are approximated by `samples` draws per cell.
    pub fn from_policy(mdp: &TabularMdp, policy: &dyn Policy, samples: usize, seed: u64) -> Self {
        let (ns, na) = (mdp.n_states, mdp.n_actions);
        let mut rng = seeded(seed);
        let mut probs = vec![0.0; mdp.horizon * ns * na];
        let mut obs = Observation::default();
        let samples = samples.max(1);
        for h in 0..mdp.horizon {
            for s in 0..ns {
                let st = TabularState { s, h, rng: seeded(0) };
                mdp.observe_into(&st, &mut obs);
                for _ in 0..samples {
                    let a = policy.act(&obs, &mut rng);
                    probs[(h * ns + s) * na + a] += 1.0 / samples as f64;
                }
            }
        }
        Self { n_states: ns, n_actions: na, horizon: mdp.horizon, probs }
    }

    #[inline]
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.probs[(h * self.n_states + s) * self.n_actions + a]
    }

    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let start = (h * self.n_states + s) * self.n_actions;
        &self.probs[start..start + self.n_actions]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// The action with probability one at `(h, s)`, if the row is deterministic.
    pub fn deterministic_action(&self, h: usize, s: usize) -> Option<usize> {
        self.row(h, s).iter().position(|&p| p == 1.0)
    }
}

impl Policy for TabularPolicy {
    fn act(&self, obs: &Observation, rng: &mut dyn RngCore) -> usize {
        let s = obs.state.expect("tabular policy needs a discrete state");
        let h = obs.step.min(self.horizon.saturating_sub(1));
        sample_index(self.row(h, s), rng)
    }
}

/// Per-step occupancy tables `q_h(s, a)`; the summed measure is
/// `d = sum_h q_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    /// `[h][s][a]`
    pub per_step: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn step_table(&self, h: usize) -> &[f64] {
        let n = self.n_states * self.n_actions;
        &self.per_step[h * n..(h + 1) * n]
    }

    /// `d(s, a) = sum_h q_h(s, a)`.
    pub fn summed(&self) -> SaTable {
        let n = self.n_states * self.n_actions;
        let mut values = vec![0.0; n];
        for chunk in self.per_step.chunks(n) {
            for (v, q) in values.iter_mut().zip(chunk) {
                *v += q;
            }
        }
        SaTable { n_states: self.n_states, n_actions: self.n_actions, values }
    }

    pub fn total(&self) -> f64 {
        self.per_step.iter().sum()
    }

    /// `(1 - w) * self + w * other`.
    pub fn mix(&self, other: &OccupancyMeasure, w: f64) -> OccupancyMeasure {
        let per_step = self.per_step.iter().zip(&other.per_step).map(|(a, b)| (1.0 - w) * a + w * b).collect();
        OccupancyMeasure { per_step, ..*self }
    }

    /// Convex combination of several measures with the given weights.
    pub fn combine(parts: &[(&OccupancyMeasure, f64)]) -> Result<OccupancyMeasure> {
        let (first, _) = parts.first().ok_or(Error::Empty("occupancy parts"))?;
        let mut per_step = vec![0.0; first.per_step.len()];
        for (m, w) in parts {
            if m.per_step.len() != per_step.len() {
                return Err(Error::Shape("occupancy measures of different shapes".into()));
            }
            for (acc, q) in per_step.iter_mut().zip(&m.per_step) {
                *acc += w * q;
            }
        }
        Ok(OccupancyMeasure { per_step, ..**first })
    }

    /// `<r, d>`.
    pub fn value(&self, reward: &SaTable) -> f64 {
        let n = self.n_states * self.n_actions;
        self.per_step.chunks(n).map(|q| q.iter().zip(&reward.values).map(|(a, b)| a * b).sum::<f64>()).sum()
    }

    /// Largest absolute violation of the flow constraints of the occupancy
    /// polytope: `sum_a q_0(s,a) = mu(s)` and
    /// `sum_a q_{h+1}(s',a) = sum_{s,a} P_h(s'|s,a) q_h(s,a)`; nonnegativity
    /// violations count too.
    pub fn flow_residual(&self, mdp: &TabularMdp) -> f64 {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut worst = self.per_step.iter().fold(0.0f64, |w, &q| w.max(-q));
        let marginal = |h: usize, s: usize| -> f64 { (0..na).map(|a| self.per_step[(h * ns + s) * na + a]).sum() };
        for s in 0..ns {
            worst = worst.max((marginal(0, s) - mdp.initial[s]).abs());
        }
        for h in 0..self.horizon.saturating_sub(1) {
            let mut inflow = vec![0.0; ns];
            for s in 0..ns {
                for a in 0..na {
                    let q = self.per_step[(h * ns + s) * na + a];
                    if q != 0.0 {
                        for (f, p) in inflow.iter_mut().zip(mdp.next_dist(h, s, a)) {
                            *f += q * p;
                        }
                    }
                }
            }
            for (s2, f) in inflow.iter().enumerate() {
                worst = worst.max((marginal(h + 1, s2) - f).abs());
            }
        }
        worst
    }
}

fn check_policy_shape(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<()> {
    if policy.n_states != mdp.n_states || policy.n_actions != mdp.n_actions || policy.horizon != mdp.horizon {
        return Err(Error::Shape(format!(
            "policy is {}x{}x{}, MDP is {}x{}x{}",
            policy.horizon, policy.n_states, policy.n_actions, mdp.horizon, mdp.n_states, mdp.n_actions
        )));
    }
    Ok(())
}

/// Forward dynamic programming: `q_0 = mu * pi_0`, then push each step's
/// state-action mass through `P_h` and `pi_{h+1}`.
pub fn occupancy_of_policy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<OccupancyMeasure> {
    mdp.validate()?;
    check_policy_shape(mdp, policy)?;
    let (ns, na, hz) = (mdp.n_states, mdp.n_actions, mdp.horizon);
    let mut per_step = vec![0.0; hz * ns * na];
    let mut state_mass = mdp.initial.clone();
    for h in 0..hz {
        for s in 0..ns {
            for a in 0..na {
                per_step[(h * ns + s) * na + a] = state_mass[s] * policy.prob(h, s, a);
            }
        }
        if h + 1 < hz {
            let mut next = vec![0.0; ns];
            for s in 0..ns {
                for a in 0..na {
                    let q = per_step[(h * ns + s) * na + a];
                    if q != 0.0 {
                        for (n, p) in next.iter_mut().zip(mdp.next_dist(h, s, a)) {
                            *n += q * p;
                        }
                    }
                }
            }
            state_mass = next;
        }
    }
    Ok(OccupancyMeasure { n_states: ns, n_actions: na, horizon: hz, per_step })
}

/// `<r, d>` with a shape check.
pub fn value_from_occupancy(d: &OccupancyMeasure, reward: &SaTable) -> Result<f64> {
    if reward.n_states != d.n_states || reward.n_actions != d.n_actions {
        return Err(Error::Shape(format!(
            "reward is {}x{}, occupancy is {}x{}",
            reward.n_states, reward.n_actions, d.n_states, d.n_actions
        )));
    }
    Ok(d.value(reward))
}

/// Exact episodic value of every objective of `mdp` under `policy`.
pub fn policy_values(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    let d = occupancy_of_policy(mdp, policy)?;
    Ok(mdp.rewards.iter().map(|r| d.value(r)).collect())
}

/// Optimal deterministic non-stationary policy for a single reward table.
#[derive(Debug, Clone)]
pub struct BackwardInduction {
    pub policy: TabularPolicy,
    /// Expected optimal return from the initial distribution.
    pub value: f64,
    /// `V_h(s)` for `h in 0..=H`.
    pub state_values: Vec<Vec<f64>>,
}

/// Backward induction on `reward`; ties go to the lowest action index.
pub fn backward_induction(mdp: &TabularMdp, reward: &SaTable) -> Result<BackwardInduction> {
    if reward.n_states != mdp.n_states || reward.n_actions != mdp.n_actions {
        return Err(Error::Shape("reward table does not match the MDP".into()));
    }
    let (ns, na, hz) = (mdp.n_states, mdp.n_actions, mdp.horizon);
    let mut v = vec![vec![0.0; ns]; hz + 1];
    let mut actions = vec![vec![0usize; ns]; hz];
    for h in (0..hz).rev() {
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..na {
                let cont: f64 = mdp.next_dist(h, s, a).iter().zip(&v[h + 1]).map(|(p, x)| p * x).sum();
                let q = reward.get(s, a) + cont;
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            v[h][s] = best;
            actions[h][s] = best_a;
        }
    }
    let value = mdp.initial.iter().zip(&v[0]).map(|(m, x)| m * x).sum();
    Ok(BackwardInduction { policy: TabularPolicy::deterministic(mdp, &actions), value, state_values: v })
}
