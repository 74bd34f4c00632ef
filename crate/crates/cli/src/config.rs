//! One TOML file drives every subcommand. Missing keys take the defaults
//! below; `--set section.key=value` overrides are applied on top.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use morl_core::learner::LearnerConfig;
use morl_core::regulator::{ConstraintSpec, StepSize};
use warehouse_sim::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameSection {
    pub rounds: usize,
    /// l1 bound on the multipliers.
    pub cap: f64,
    /// Bound on the slack-vector norm in `eta = D / (G sqrt(T))`.
    pub grad_bound: f64,
    /// Fixed step size; overrides the theoretical one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Margins subtracted from the thresholds the players see.
    pub tightening: Vec<f64>,
    /// Fresh greedy episodes per round evaluation.
    pub eval_episodes: usize,
    /// Episodes per evaluation of the running mixture.
    pub mixture_episodes: usize,
}

impl Default for GameSection {
    fn default() -> Self {
        Self {
            rounds: 20,
            cap: 2000.0,
            grad_bound: 30.0,
            eta: None,
            tightening: vec![0.01, 0.05, 0.5, 0.5],
            eval_episodes: 10,
            mixture_episodes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Episodes per seed when building the comparison table.
    pub episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { episodes: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    pub epsilon: f64,
    pub delta: f64,
    /// Episode budget per iterate on the simulator, where the Hoeffding
    /// count is far out of reach.
    pub max_episodes: usize,
}

impl Default for ExtractSection {
    fn default() -> Self {
        Self { epsilon: 0.5, delta: 0.05, max_episodes: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestbedSection {
    pub fw_epsilon: f64,
    pub concentration_reps: usize,
    pub concentration_policies: usize,
    pub toy_horizon: usize,
    pub toy_rounds: usize,
    pub toy_cap: f64,
    pub demo_horizon: usize,
}

impl Default for TestbedSection {
    fn default() -> Self {
        Self {
            fw_epsilon: 1e-3,
            concentration_reps: 200,
            concentration_policies: 4,
            toy_horizon: 10,
            toy_rounds: 40,
            toy_cap: 2.0,
            demo_horizon: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// First seed of a batch.
    pub seed: u64,
    /// Number of consecutive seeds in a batch.
    pub seeds: usize,
    pub sim: SimConfig,
    pub learner: LearnerConfig,
    pub game: GameSection,
    pub eval: EvalSection,
    pub extract: ExtractSection,
    pub testbed: TestbedSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: 1,
            sim: SimConfig::default(),
            learner: LearnerConfig { reward_scale: 0.1, ..LearnerConfig::default() },
            game: GameSection::default(),
            eval: EvalSection::default(),
            extract: ExtractSection::default(),
            testbed: TestbedSection::default(),
        }
    }
}

impl RunConfig {
    /// One-minute decisions over ten days and the larger multiplier cap.
    pub fn paper_scale() -> Self {
        let mut cfg = Self { sim: SimConfig::paper_scale(), ..Self::default() };
        cfg.game.cap = 20_000.0;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.learner.validate()?;
        let g = &self.game;
        if g.rounds == 0 || g.eval_episodes == 0 || g.mixture_episodes == 0 {
            bail!("game.rounds, game.eval_episodes and game.mixture_episodes must be positive");
        }
        if !(g.cap > 0.0) || !(g.grad_bound > 0.0) {
            bail!("game.cap and game.grad_bound must be positive");
        }
        if g.tightening.len() != warehouse_sim::CONSTRAINT_LABELS.len() {
            bail!("game.tightening needs {} entries", warehouse_sim::CONSTRAINT_LABELS.len());
        }
        if self.seeds == 0 || self.eval.episodes == 0 || self.extract.max_episodes == 0 {
            bail!("seeds, eval.episodes and extract.max_episodes must be positive");
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed + i).collect()
    }

    pub fn constraint_spec(&self) -> Result<ConstraintSpec> {
        Ok(self.sim.constraint_spec(self.game.cap)?)
    }

    pub fn step_size(&self) -> StepSize {
        match self.game.eta {
            Some(eta) => StepSize::Constant { eta },
            None => StepSize::Theoretical { rounds: self.game.rounds, grad_bound: self.game.grad_bound },
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the serialized config.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    /// Raw digest, stamped into network checkpoints.
    pub fn digest(&self) -> Result<[u8; 32]> {
        Ok(Sha256::digest(self.to_toml()?.as_bytes()).into())
    }
}

/// Defaults (or the paper-scale preset), then the file, then overrides.
pub fn load(path: Option<&Path>, overrides: &[String], paper_scale: bool) -> Result<RunConfig> {
    let base = if paper_scale { RunConfig::paper_scale() } else { RunConfig::default() };
    let mut root = toml::Table::try_from(&base)?;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let file: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        merge(&mut root, file);
    }
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let cfg: RunConfig = toml::Value::Table(root).try_into().context("invalid configuration")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(into: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => merge(dst, src),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

/// `a.b.c=value`; the value is read as a TOML literal, falling back to a
/// bare string.
pub fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        bail!("override {spec:?} is not of the form key=value");
    };
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("bad override key {key:?}");
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override {key:?}: {p} is not a section"),
        };
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
        assert_eq!(cfg.hash().unwrap().len(), 64);
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = load(None, &["game.rounds=3".into(), "sim.thresholds.manual_cap=4.5".into(), "seed=9".into()], false).unwrap();
        assert_eq!(cfg.game.rounds, 3);
        assert_eq!(cfg.sim.thresholds.manual_cap, 4.5);
        assert_eq!(cfg.seed, 9);
        assert!(load(None, &["game.nope=1".into()], false).is_err());
        assert!(load(None, &["game.rounds=0".into()], false).is_err());
        assert!(load(None, &["rounds".into()], false).is_err());
    }

    #[test]
    fn paper_scale_preset() {
        let cfg = load(None, &[], true).unwrap();
        assert_eq!(cfg.sim.steps_per_day, 1440);
        assert_eq!(cfg.sim.n_days, 10);
        assert_eq!(cfg.game.cap, 20_000.0);
    }
}
