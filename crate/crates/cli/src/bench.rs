//! KPI reports, baselines, feasible-round counting and the comparison
//! table (ETPH and slacks per policy column).
//!
//! Slacks are in level units: the simulator's constraint rewards are per-step
//! slack levels divided by `H`, so an episode return is the time-averaged
//! slack. ETPH is likewise reported as the episode return over `H`.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use morl_core::game::GameTrace;
use morl_core::learner::{train_best_response, LearnerConfig, QPolicy, ScalarizedSpec, TrainingCurve};
use morl_core::mdp::{estimate_values, EpisodicMdp, Observation, Policy, UniformPolicy};
use morl_core::regulator::{compute_slacks, ConstraintSpec};
use morl_core::rng::derive_seed;
use warehouse_sim::WarehouseEnv;

/// Stream used for every evaluation batch of a seed, so all columns of the
/// table see the same episodes.
pub const EVAL_STREAM: u64 = 0xB_E4C4;

/// Mean with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl Stat {
    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    /// Intervals do not overlap and `self` lies above.
    pub fn clearly_above(&self, other: &Stat) -> bool {
        self.lower() > other.upper()
    }
}

/// `1.96 s / sqrt(n)` around the sample mean; infinite width below two samples.
pub fn ci95(samples: &[f64]) -> Stat {
    let n = samples.len();
    if n == 0 {
        return Stat { mean: f64::NAN, half_width: f64::INFINITY, n };
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Stat { mean, half_width: f64::INFINITY, n };
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Stat { mean, half_width: 1.96 * (var / n as f64).sqrt(), n }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    pub policy: String,
    /// Mean over seeds of the per-seed mean ETPH.
    pub etph: f64,
    pub per_seed_etph: Vec<f64>,
    pub slacks: Vec<f64>,
    pub per_seed_slacks: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    pub feasible: bool,
    /// Episodes per seed.
    pub episodes: usize,
    pub seeds: Vec<u64>,
}

/// Runs `episodes` fresh episodes per seed and averages ETPH and slack
/// levels; slacks go through the regulator's own slack map.
pub fn evaluate_policy(
    env: &WarehouseEnv,
    spec: &ConstraintSpec,
    policy: &dyn Policy,
    name: &str,
    episodes: usize,
    seeds: &[u64],
) -> Result<KpiReport> {
    if episodes == 0 || seeds.is_empty() {
        bail!("evaluation needs at least one episode and one seed");
    }
    let h = env.horizon() as f64;
    let mut per_seed_etph = Vec::with_capacity(seeds.len());
    let mut per_seed_slacks = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let v = estimate_values(env, policy, episodes, derive_seed(seed, EVAL_STREAM))?;
        per_seed_etph.push(v.objective() / h);
        per_seed_slacks.push(compute_slacks(v.constraints(), spec)?);
    }
    let k = seeds.len() as f64;
    let etph = per_seed_etph.iter().sum::<f64>() / k;
    let slacks: Vec<f64> = (0..spec.m()).map(|i| per_seed_slacks.iter().map(|s| s[i]).sum::<f64>() / k).collect();
    Ok(KpiReport {
        policy: name.to_string(),
        etph,
        per_seed_etph,
        feasible: slacks.iter().all(|&s| s >= 0.0),
        slacks,
        per_seed_slacks,
        labels: spec.labels.clone(),
        episodes,
        seeds: seeds.to_vec(),
    })
}

/// Cumulative feasible-round counts per seed plus best/mean/worst curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityCurves {
    pub per_seed: Vec<Vec<usize>>,
    pub best: Vec<usize>,
    pub mean: Vec<f64>,
    pub worst: Vec<usize>,
}

impl FeasibilityCurves {
    pub fn rounds(&self) -> usize {
        self.best.len()
    }

    pub fn final_counts(&self) -> Vec<usize> {
        self.per_seed.iter().map(|c| c.last().copied().unwrap_or(0)).collect()
    }

    pub fn median_final(&self) -> f64 {
        let mut v = self.final_counts();
        v.sort_unstable();
        let n = v.len();
        if n == 0 {
            return f64::NAN;
        }
        if n % 2 == 1 {
            v[n / 2] as f64
        } else {
            (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
        }
    }

    /// Columns: `round, best, mean, worst`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,best,mean,worst\n");
        for t in 0..self.rounds() {
            let _ = writeln!(out, "{},{},{},{}", t + 1, self.best[t], self.mean[t], self.worst[t]);
        }
        out
    }
}

pub fn count_feasible_rounds(traces: &[&GameTrace]) -> Result<FeasibilityCurves> {
    let Some(first) = traces.first() else { bail!("no traces to count") };
    let rounds = first.rounds();
    if traces.iter().any(|t| t.rounds() != rounds) {
        bail!("traces cover different numbers of rounds");
    }
    let per_seed: Vec<Vec<usize>> = traces
        .iter()
        .map(|t| {
            t.records
                .iter()
                .scan(0usize, |acc, r| {
                    *acc += r.feasible as usize;
                    Some(*acc)
                })
                .collect()
        })
        .collect();
    let column = |t: usize| per_seed.iter().map(move |c| c[t]);
    Ok(FeasibilityCurves {
        best: (0..rounds).map(|t| column(t).max().unwrap_or(0)).collect(),
        worst: (0..rounds).map(|t| column(t).min().unwrap_or(0)).collect(),
        mean: (0..rounds).map(|t| column(t).sum::<usize>() as f64 / per_seed.len() as f64).collect(),
        per_seed,
    })
}

/// The feasible round with the highest evaluated objective (earliest on
/// ties), 1-based.
pub fn best_feasible_round(trace: &GameTrace) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for r in trace.records.iter().filter(|r| r.feasible) {
        if best.is_none_or(|(_, v)| r.values.mean[0] > v) {
            best = Some((r.round, r.values.mean[0]));
        }
    }
    best.map(|(t, _)| t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    Random,
    Unconstrained,
}

#[derive(Debug, Clone)]
pub enum Baseline {
    Random(UniformPolicy),
    Unconstrained { policy: QPolicy, curve: TrainingCurve },
}

impl Policy for Baseline {
    fn act(&self, obs: &Observation, rng: &mut dyn RngCore) -> usize {
        match self {
            Baseline::Random(p) => p.act(obs, rng),
            Baseline::Unconstrained { policy, .. } => policy.act(obs, rng),
        }
    }
}

/// Random: uniform over every action index each step. Unconstrained: greedy
/// policy of a fresh learner trained at zero multipliers.
pub fn make_baseline(kind: BaselineKind, env: &WarehouseEnv, spec: &ConstraintSpec, learner: &LearnerConfig) -> Result<Baseline> {
    Ok(match kind {
        BaselineKind::Random => Baseline::Random(UniformPolicy { n_actions: env.n_actions() }),
        BaselineKind::Unconstrained => {
            let scal = ScalarizedSpec::unconstrained(spec, env.horizon());
            let (policy, curve) = train_best_response(env, &scal, learner)?;
            Baseline::Unconstrained { policy, curve }
        }
    })
}

/// One column of the comparison table, summarized over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    pub etph: Stat,
    pub slacks: Vec<Stat>,
    /// All mean slacks nonnegative.
    pub feasible: bool,
}

impl ColumnSummary {
    /// Pools per-seed values of reports that share a policy kind.
    pub fn from_reports(name: &str, reports: &[&KpiReport]) -> Self {
        let etph: Vec<f64> = reports.iter().flat_map(|r| r.per_seed_etph.iter().copied()).collect();
        let m = reports.first().map_or(0, |r| r.labels.len());
        let slacks: Vec<Stat> = (0..m)
            .map(|i| ci95(&reports.iter().flat_map(|r| r.per_seed_slacks.iter().map(move |s| s[i])).collect::<Vec<_>>()))
            .collect();
        Self { name: name.to_string(), etph: ci95(&etph), feasible: !slacks.is_empty() && slacks.iter().all(|s| s.mean >= 0.0), slacks }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub columns: Vec<ColumnSummary>,
}

impl Comparison {
    pub fn column(&self, name: &str) -> Option<&ColumnSummary> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Columns: `metric`, then `<name>_mean, <name>_ci95` per policy column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for c in &self.columns {
            let _ = write!(out, ",{0}_mean,{0}_ci95", c.name);
        }
        out.push('\n');
        for (metric, pick) in self.rows() {
            out.push_str(&metric);
            for c in &self.columns {
                let s = pick(c);
                let _ = write!(out, ",{},{}", s.mean, s.half_width);
            }
            out.push('\n');
        }
        out.push_str("feasible");
        for c in &self.columns {
            let _ = write!(out, ",{},", c.feasible as u8);
        }
        out.push('\n');
        out
    }

    /// Aligned plain text: one row per metric, `mean ± half-width` cells.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = vec![std::iter::once(String::new()).chain(self.columns.iter().map(|c| c.name.clone())).collect()];
        for (metric, pick) in self.rows() {
            let mut row = vec![metric];
            row.extend(self.columns.iter().map(|c| {
                let s = pick(c);
                format!("{:.2} ± {:.2}", s.mean, s.half_width)
            }));
            rows.push(row);
        }
        let mut last = vec!["satisfies all constraints".to_string()];
        last.extend(self.columns.iter().map(|c| if c.feasible { "yes" } else { "no" }.to_string()));
        rows.push(last);
        let widths: Vec<usize> =
            (0..rows[0].len()).map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            for (j, cell) in r.iter().enumerate() {
                let pad = widths[j] - cell.chars().count();
                if j == 0 {
                    let _ = write!(out, "{cell}{}", " ".repeat(pad));
                } else {
                    let _ = write!(out, "  {}{cell}", " ".repeat(pad));
                }
            }
            out.push('\n');
        }
        out
    }

    #[allow(clippy::type_complexity)]
    fn rows(&self) -> Vec<(String, Box<dyn Fn(&ColumnSummary) -> Stat + '_>)> {
        let mut rows: Vec<(String, Box<dyn Fn(&ColumnSummary) -> Stat>)> = vec![("etph".into(), Box::new(|c: &ColumnSummary| c.etph))];
        for (i, l) in self.labels.iter().enumerate() {
            rows.push((format!("slack_{l}"), Box::new(move |c: &ColumnSummary| c.slacks[i])));
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_of_constant_samples_is_a_point() {
        let s = ci95(&[2.0, 2.0, 2.0]);
        assert_eq!((s.mean, s.half_width), (2.0, 0.0));
        let s = ci95(&[1.0, 3.0]);
        assert!((s.half_width - 1.96).abs() < 1e-12);
        assert!(ci95(&[1.0]).half_width.is_infinite());
        let a = Stat { mean: 5.0, half_width: 1.0, n: 3 };
        let b = Stat { mean: 2.0, half_width: 1.5, n: 3 };
        assert!(a.clearly_above(&b));
        assert!(!b.clearly_above(&a));
    }
}
