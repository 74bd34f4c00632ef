//! Newline-delimited JSON step log.

use std::io::Write;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use morl_core::mdp::{EpisodicMdp, Policy};
use morl_core::rng::{derive_seed, seeded};
use morl_core::{Error, Result};

use crate::sim::{WarehouseEnv, REWARD_DIM};

pub const TRACE_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub schema: u32,
    pub t: usize,
    pub action_index: usize,
    pub reward_vector: [f64; REWARD_DIM],
    pub etph: f64,
    pub n_large: usize,
    /// `[human sources, human destinations, robot sources, robot destinations]`
    pub queues: [usize; 4],
}

pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, record: &TraceRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record).map_err(|e| Error::Io(e.into()))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Parses a trace, rejecting unknown schema versions.
pub fn read_trace(text: &str) -> Result<Vec<TraceRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: TraceRecord = serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
            if rec.schema != TRACE_SCHEMA {
                return Err(Error::Parse { line: i + 1, msg: format!("unsupported trace schema {}", rec.schema) });
            }
            Ok(rec)
        })
        .collect()
}

/// Plays one episode with the same random streams as
/// [`morl_core::mdp::rollout`] and logs every step.
pub fn traced_episode<W: Write>(env: &WarehouseEnv, policy: &dyn Policy, seed: u64, writer: &mut TraceWriter<W>) -> Result<[f64; REWARD_DIM]> {
    let mut state = env.reset(derive_seed(seed, 0))?;
    let mut rng = seeded(derive_seed(seed, 1));
    let rng_dyn: &mut dyn RngCore = &mut rng;
    let policy = policy.sample_member(rng_dyn).unwrap_or(policy);
    let mut obs = Default::default();
    let mut reward = [0.0; REWARD_DIM];
    let mut totals = [0.0; REWARD_DIM];
    for _ in 0..env.horizon() {
        env.observe_into(&state, &mut obs);
        let action = policy.act(&obs, &mut rng);
        let t = state.t;
        env.step(&mut state, action, &mut reward)?;
        for (acc, r) in totals.iter_mut().zip(&reward) {
            *acc += r;
        }
        writer.write(&TraceRecord {
            schema: TRACE_SCHEMA,
            t,
            action_index: action,
            reward_vector: reward,
            etph: state.etph,
            n_large: state.n_large,
            queues: state.queues(),
        })?;
    }
    Ok(totals)
}
