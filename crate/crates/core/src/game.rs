//! The repeated game: the learner best-responds to the current multipliers,
//! the regulator takes a projected gradient step on the measured slacks.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{DqnLearner, QPolicy, ScalarizedSpec, TrainingCurve};
use crate::mdp::{estimate_values, EpisodicMdp, Policy, PolicyMixture, ValueVector};
use crate::regulator::{compute_slacks, ogd_step, realized_regret, ConstraintSpec, LagrangeWeights, StepSize};
use crate::rng::derive_seed;
use crate::tabular::{backward_induction, occupancy_of_policy, OccupancyMeasure, TabularMdp, TabularPolicy};

/// `v_0 + lambda . slacks(v)`, for a full value vector `(v_0, ..., v_m)`.
pub fn lagrangian(values: &[f64], lambda: &[f64], spec: &ConstraintSpec) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("value vector"));
    }
    if lambda.len() != spec.m() {
        return Err(Error::Shape("multiplier length".into()));
    }
    let g = compute_slacks(&values[1..], spec)?;
    Ok(values[0] + lambda.iter().zip(&g).map(|(l, s)| l * s).sum::<f64>())
}

/// Produces a policy for the current multipliers.
pub trait BestResponder {
    type Policy: Policy + Clone + 'static;

    fn best_response(&mut self, spec: &ScalarizedSpec, round: usize) -> Result<(Self::Policy, Option<TrainingCurve>)>;
}

/// Estimates the value vector of a round policy.
pub trait PolicyEvaluator<P> {
    fn evaluate(&self, policy: &P, round: usize) -> Result<ValueVector>;
}

/// Deep Q-learning best responses; parameters carry over between rounds
/// unless `warm_start` is off in the learner config.
pub struct DqnResponder<'a, M: EpisodicMdp + ?Sized> {
    pub env: &'a M,
    pub learner: DqnLearner,
}

impl<'a, M: EpisodicMdp + ?Sized> DqnResponder<'a, M> {
    pub fn new(env: &'a M, cfg: crate::learner::LearnerConfig) -> Result<Self> {
        Ok(Self { learner: DqnLearner::for_env(cfg, env)?, env })
    }
}

impl<M: EpisodicMdp + ?Sized> BestResponder for DqnResponder<'_, M> {
    type Policy = QPolicy;

    fn best_response(&mut self, spec: &ScalarizedSpec, round: usize) -> Result<(QPolicy, Option<TrainingCurve>)> {
        if round > 1 && !self.learner.config().warm_start {
            self.learner.reinitialize()?;
        }
        let episodes = self.learner.config().episodes_per_round;
        let curve = self.learner.train(self.env, spec, episodes)?;
        Ok((self.learner.greedy_policy(), Some(curve)))
    }
}

/// Exact best response on a tabular MDP by backward induction.
pub struct ExactTabularResponder<'a> {
    pub mdp: &'a TabularMdp,
}

impl BestResponder for ExactTabularResponder<'_> {
    type Policy = TabularPolicy;

    fn best_response(&mut self, spec: &ScalarizedSpec, _round: usize) -> Result<(TabularPolicy, Option<TrainingCurve>)> {
        Ok((backward_induction(self.mdp, &spec.table(self.mdp)?)?.policy, None))
    }
}

/// Fresh Monte Carlo episodes of the (greedy) policy; objective and
/// constraint values come from the same episodes.
pub struct MonteCarloEvaluator<'a, M: EpisodicMdp + ?Sized> {
    pub env: &'a M,
    pub episodes: usize,
    pub seed: u64,
}

impl<M: EpisodicMdp + ?Sized, P: Policy> PolicyEvaluator<P> for MonteCarloEvaluator<'_, M> {
    fn evaluate(&self, policy: &P, round: usize) -> Result<ValueVector> {
        estimate_values(self.env, policy, self.episodes, derive_seed(self.seed, 0xE7A1_0000 + round as u64))
    }
}

/// Exact values through the occupancy measure.
pub struct ExactTabularEvaluator<'a> {
    pub mdp: &'a TabularMdp,
}

impl PolicyEvaluator<TabularPolicy> for ExactTabularEvaluator<'_> {
    fn evaluate(&self, policy: &TabularPolicy, _round: usize) -> Result<ValueVector> {
        let d = occupancy_of_policy(self.mdp, policy)?;
        Ok(ValueVector::exact(self.mdp.rewards().iter().map(|r| d.value(r)).collect()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub rounds: usize,
    pub step: StepSize,
    /// Initial multipliers; zero when absent.
    pub lambda0: Option<Vec<f64>>,
    /// Per-constraint margin subtracted from the thresholds the regulator
    /// and learner see; feasibility is still judged on the original ones.
    pub tightening: Option<Vec<f64>>,
}

impl GameConfig {
    pub fn validate(&self, spec: &ConstraintSpec) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("game needs at least one round".into()));
        }
        self.step.eta(spec)?;
        if let Some(l) = &self.lambda0 {
            LagrangeWeights::new(l.clone(), spec.cap)?;
            if l.len() != spec.m() {
                return Err(Error::Config("lambda0 length".into()));
            }
        }
        if let Some(d) = &self.tightening {
            if d.len() != spec.m() {
                return Err(Error::Config("tightening length".into()));
            }
        }
        Ok(())
    }
}

/// What happened in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub checkpoint: String,
    /// Multipliers the round policy responded to.
    pub lambda: Vec<f64>,
    /// Regulator output after seeing this round's slacks.
    pub lambda_next: Vec<f64>,
    /// Running mean of `lambda` over rounds `1..=round`.
    pub lambda_bar: Vec<f64>,
    pub values: ValueVector,
    pub slacks: Vec<f64>,
    /// `L(D_t, lambda_t)`.
    pub lagrangian: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameTrace {
    pub spec: ConstraintSpec,
    pub eta: f64,
    pub records: Vec<RoundRecord>,
}

impl GameTrace {
    pub fn rounds(&self) -> usize {
        self.records.len()
    }

    pub fn lambda_bar(&self) -> Option<&[f64]> {
        self.records.last().map(|r| r.lambda_bar.as_slice())
    }

    /// Mean of the played multipliers over rounds `1..=t`, from scratch.
    pub fn lambda_bar_recomputed(&self, t: usize) -> Vec<f64> {
        let m = self.spec.m();
        let mut acc = vec![0.0; m];
        for r in &self.records[..t] {
            for (a, l) in acc.iter_mut().zip(&r.lambda) {
                *a += l;
            }
        }
        acc.iter().map(|a| a / t as f64).collect()
    }

    pub fn feasible_rounds(&self) -> Vec<usize> {
        self.records.iter().filter(|r| r.feasible).map(|r| r.round).collect()
    }

    pub fn realized_regret(&self) -> Result<f64> {
        let played: Vec<Vec<f64>> = self.records.iter().map(|r| r.lambda.clone()).collect();
        let slacks: Vec<Vec<f64>> = self.records.iter().map(|r| r.slacks.clone()).collect();
        realized_regret(&played, &slacks, self.spec.cap)
    }

    /// Columns: `round, v_0, g_<label>.., lambda_<label>.., lambda_bar_<label>.., lagrangian, feasible`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,v_0");
        for prefix in ["g", "lambda", "lambda_bar"] {
            for l in &self.spec.labels {
                let _ = write!(out, ",{prefix}_{l}");
            }
        }
        out.push_str(",lagrangian,feasible\n");
        for r in &self.records {
            let _ = write!(out, "{},{}", r.round, r.values.mean[0]);
            for x in r.slacks.iter().chain(&r.lambda).chain(&r.lambda_bar) {
                let _ = write!(out, ",{x}");
            }
            let _ = writeln!(out, ",{},{}", r.lagrangian, r.feasible as u8);
        }
        out
    }

    /// Columns: `round, lambda_<label>.., lambda_bar_<label>..`.
    pub fn multipliers_csv(&self) -> String {
        let mut out = String::from("round");
        for prefix in ["lambda", "lambda_bar"] {
            for l in &self.spec.labels {
                let _ = write!(out, ",{prefix}_{l}");
            }
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{}", r.round);
            for x in r.lambda.iter().chain(&r.lambda_bar) {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
        out
    }
}

/// Trace plus the round policies; the uniform mixture over `policies` is the
/// time-averaged learner strategy.
#[derive(Debug, Clone)]
pub struct GameOutcome<P> {
    pub trace: GameTrace,
    pub policies: Vec<P>,
    pub curves: Vec<Option<TrainingCurve>>,
}

impl<P> GameOutcome<P> {
    pub fn lambda_bar(&self) -> Option<&[f64]> {
        self.trace.lambda_bar()
    }
}

/// A game stopped early; `partial` holds every completed round.
#[derive(Debug)]
pub struct GameAborted<P> {
    pub partial: GameOutcome<P>,
    pub round: usize,
    pub cause: Error,
}

impl<P: std::fmt::Debug> std::fmt::Display for GameAborted<P> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "game aborted in round {} after {} completed rounds: {}", self.round, self.partial.trace.rounds(), self.cause)
    }
}

impl<P: std::fmt::Debug> std::error::Error for GameAborted<P> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.cause)
    }
}

/// Runs `cfg.rounds` rounds. Round `t` trains against `lambda_{t-1}`,
/// evaluates the resulting policy, computes slacks and updates the
/// multipliers by projected gradient descent.
pub fn run_repeated_game<R, E>(
    responder: &mut R,
    evaluator: &E,
    spec: &ConstraintSpec,
    horizon: usize,
    cfg: &GameConfig,
) -> std::result::Result<GameOutcome<R::Policy>, Box<GameAborted<R::Policy>>>
where
    R: BestResponder,
    E: PolicyEvaluator<R::Policy>,
{
    let empty = |cause: Error| {
        Box::new(GameAborted {
            partial: GameOutcome {
                trace: GameTrace { spec: spec.clone(), eta: f64::NAN, records: vec![] },
                policies: vec![],
                curves: vec![],
            },
            round: 0,
            cause,
        })
    };
    if let Err(e) = spec.validate().and_then(|_| cfg.validate(spec)) {
        return Err(empty(e));
    }
    let eta = cfg.step.eta(spec).map_err(empty)?;
    let regulator_spec = match &cfg.tightening {
        Some(d) => spec.tightened(d).map_err(empty)?,
        None => spec.clone(),
    };
    let mut lambda = match &cfg.lambda0 {
        Some(l) => LagrangeWeights::new(l.clone(), spec.cap).map_err(empty)?,
        None => LagrangeWeights::zeros(spec.m()),
    };
    let mut outcome = GameOutcome {
        trace: GameTrace { spec: spec.clone(), eta, records: Vec::with_capacity(cfg.rounds) },
        policies: Vec::with_capacity(cfg.rounds),
        curves: Vec::with_capacity(cfg.rounds),
    };
    let mut lambda_bar = vec![0.0; spec.m()];
    for t in 1..=cfg.rounds {
        let step = (|| -> Result<_> {
            let scal = ScalarizedSpec::from_constraints(&lambda, &regulator_spec, horizon)?;
            let (policy, curve) = responder.best_response(&scal, t)?;
            let values = evaluator.evaluate(&policy, t)?;
            let slacks = compute_slacks(values.constraints(), spec)?;
            let regulator_slacks = compute_slacks(values.constraints(), &regulator_spec)?;
            let next = ogd_step(&lambda, &regulator_slacks, eta, spec)?;
            Ok((policy, curve, values, slacks, next))
        })();
        let (policy, curve, values, slacks, next) = match step {
            Ok(x) => x,
            Err(cause) => return Err(Box::new(GameAborted { partial: outcome, round: t, cause })),
        };
        for (b, l) in lambda_bar.iter_mut().zip(lambda.iter()) {
            *b += (l - *b) / t as f64;
        }
        let lag = values.mean[0] + lambda.iter().zip(&slacks).map(|(l, s)| l * s).sum::<f64>();
        let feasible = slacks.iter().all(|&s| s >= 0.0);
        outcome.trace.records.push(RoundRecord {
            round: t,
            checkpoint: format!("round-{t:04}"),
            lambda: lambda.to_vec(),
            lambda_next: next.to_vec(),
            lambda_bar: lambda_bar.clone(),
            values,
            slacks,
            lagrangian: lag,
            feasible,
        });
        outcome.policies.push(policy);
        outcome.curves.push(curve);
        lambda = next;
    }
    Ok(outcome)
}

/// Monte Carlo value of the uniform mixture over round policies `1..=upto`,
/// sampling one member per episode.
pub fn evaluate_mixture<M, P>(env: &M, policies: &[P], upto: usize, episodes: usize, seed: u64) -> Result<ValueVector>
where
    M: EpisodicMdp + ?Sized,
    P: Policy + Clone + 'static,
{
    if upto == 0 || upto > policies.len() {
        return Err(Error::MissingCheckpoint(upto));
    }
    let members: Vec<Arc<dyn Policy>> = policies[..upto].iter().map(|p| Arc::new(p.clone()) as Arc<dyn Policy>).collect();
    let mixture = PolicyMixture::uniform(members)?;
    estimate_values(env, &mixture, episodes, seed)
}

/// Exact occupancy of the uniform mixture over tabular round policies.
pub fn mixture_occupancy(mdp: &TabularMdp, policies: &[TabularPolicy]) -> Result<OccupancyMeasure> {
    let occs = policies.iter().map(|p| occupancy_of_policy(mdp, p)).collect::<Result<Vec<_>>>()?;
    let w = 1.0 / occs.len().max(1) as f64;
    OccupancyMeasure::combine(&occs.iter().map(|o| (o, w)).collect::<Vec<_>>())
}

/// The two equilibrium gaps of `(D, lambda)` on a tabular game, computed
/// exactly: how much the learner could gain by deviating
/// (`max_D' L(D', lambda) - L(D, lambda)`) and how much the regulator could
/// (`L(D, lambda) - min_l L(D, l)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumGaps {
    pub value: f64,
    pub learner: f64,
    pub regulator: f64,
}

impl EquilibriumGaps {
    pub fn nu(&self) -> f64 {
        self.learner.max(self.regulator)
    }
}

pub fn equilibrium_gaps(mdp: &TabularMdp, spec: &ConstraintSpec, occupancy: &OccupancyMeasure, lambda: &[f64]) -> Result<EquilibriumGaps> {
    let values: Vec<f64> = mdp.rewards().iter().map(|r| occupancy.value(r)).collect();
    let value = lagrangian(&values, lambda, spec)?;
    let scal = ScalarizedSpec::from_constraints(lambda, spec, mdp.horizon())?;
    let best = backward_induction(mdp, &scal.table(mdp)?)?.value;
    let g = compute_slacks(&values[1..], spec)?;
    let min_over_lambda = values[0] + g.iter().fold(0.0f64, |acc, &s| acc.min(spec.cap * s));
    Ok(EquilibriumGaps { value, learner: best - value, regulator: value - min_over_lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::tabular::policy_values;

    fn table1_spec() -> ConstraintSpec {
        ConstraintSpec::new(
            vec![0.0; 4],
            vec![-1.0; 4],
            20_000.0,
            ["n_large", "sd_ratio", "manual_cap", "robot_cap"].map(String::from).to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn lagrangian_hand_sums() {
        let spec = table1_spec();
        let v = [20.52, 362.62, 10.81, 83.21, 258.23];
        assert_eq!(lagrangian(&v, &[0.0; 4], &spec).unwrap(), 20.52);
        let l = lagrangian(&v, &[1.0; 4], &spec).unwrap();
        assert!((l - 735.39).abs() < 1e-9);
        let zero = [7.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(lagrangian(&zero, &[3.0, 1.0, 4.0, 1.0], &spec).unwrap(), 7.0);
    }

    #[test]
    fn table1_slacks_flag_violations() {
        let spec = table1_spec();
        let unconstrained = compute_slacks(&[100.0, -0.37, -563.23, 50.0], &spec).unwrap();
        assert!(unconstrained[1] < 0.0 && unconstrained[2] < 0.0);
        let morl = compute_slacks(&[362.62, 10.81, 83.21, 258.23], &spec).unwrap();
        assert_eq!(morl, vec![362.62, 10.81, 83.21, 258.23]);
    }

    fn toy_run(rounds: usize) -> GameOutcome<TabularPolicy> {
        let toy = fixtures::toy_game(1, 2.0);
        let mut responder = ExactTabularResponder { mdp: &toy.mdp };
        let evaluator = ExactTabularEvaluator { mdp: &toy.mdp };
        let cfg = GameConfig {
            rounds,
            step: StepSize::Theoretical { rounds, grad_bound: 0.5 },
            lambda0: None,
            tightening: None,
        };
        run_repeated_game(&mut responder, &evaluator, &toy.spec, 1, &cfg).unwrap()
    }

    #[test]
    fn running_average_matches_recomputation() {
        let out = toy_run(200);
        for t in 1..=out.trace.rounds() {
            let inc = &out.trace.records[t - 1].lambda_bar;
            let scratch = out.trace.lambda_bar_recomputed(t);
            for (a, b) in inc.iter().zip(&scratch) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn feasible_flag_is_min_slack_sign() {
        let out = toy_run(50);
        for r in &out.trace.records {
            assert_eq!(r.feasible, r.slacks.iter().cloned().fold(f64::INFINITY, f64::min) >= 0.0);
        }
    }

    #[test]
    fn one_round_is_the_unconstrained_problem() {
        let out = toy_run(1);
        let r = &out.trace.records[0];
        assert_eq!(r.lambda, vec![0.0]);
        assert_eq!(r.lagrangian, r.values.mean[0]);
        assert_eq!(r.values.mean[0], 1.0);
    }

    #[test]
    fn emitted_multipliers_stay_in_the_set() {
        let out = toy_run(300);
        for r in &out.trace.records {
            assert!(r.lambda_next.iter().all(|&x| x >= 0.0));
            assert!(r.lambda_next.iter().sum::<f64>() <= out.trace.spec.cap);
        }
        let csv = out.trace.to_csv();
        assert_eq!(csv.lines().count(), 301);
        assert!(csv.starts_with("round,v_0,g_usage,lambda_usage,lambda_bar_usage,lagrangian,feasible"));
    }

    #[test]
    fn sandwich_holds_at_measured_regret() {
        let toy = fixtures::toy_game(1, 2.0);
        let out = toy_run(400);
        let d_bar = mixture_occupancy(&toy.mdp, &out.policies).unwrap();
        let gaps = equilibrium_gaps(&toy.mdp, &toy.spec, &d_bar, out.lambda_bar().unwrap()).unwrap();
        let nu = out.trace.realized_regret().unwrap() / 400.0;
        assert!(gaps.learner <= nu + 1e-9, "{gaps:?} nu {nu}");
        assert!(gaps.regulator <= nu + 1e-9, "{gaps:?} nu {nu}");
    }

    #[test]
    fn mixture_evaluation_matches_average_of_exact_values() {
        let mdp = TabularMdp::random(4, 3, 5, 2, 70);
        let policies = vec![TabularPolicy::constant(&mdp, 0), TabularPolicy::constant(&mdp, 2)];
        let v: Vec<Vec<f64>> = policies.iter().map(|p| policy_values(&mdp, p).unwrap()).collect();
        let est = evaluate_mixture(&mdp, &policies, 2, 20_000, 3).unwrap();
        for i in 0..2 {
            let expected = 0.5 * (v[0][i] + v[1][i]);
            assert!((est.mean[i] - expected).abs() <= 3.0 * est.std_err[i]);
        }
        let first = evaluate_mixture(&mdp, &policies, 1, 500, 3).unwrap();
        let alone = estimate_values(&mdp, &policies[0], 500, 3).unwrap();
        assert_eq!(first.mean, alone.mean);
        assert!(matches!(evaluate_mixture(&mdp, &policies, 3, 10, 0), Err(Error::MissingCheckpoint(3))));
    }

    #[test]
    fn mixture_lagrangian_at_final_average_multiplier_is_nondecreasing() {
        let toy = fixtures::toy_game(1, 2.0);
        let out = toy_run(400);
        let lbar = out.lambda_bar().unwrap().to_vec();
        let mut prev = f64::NEG_INFINITY;
        let mut drops = 0;
        for t in (10..=400).step_by(10) {
            let d = mixture_occupancy(&toy.mdp, &out.policies[..t]).unwrap();
            let v: Vec<f64> = toy.mdp.rewards().iter().map(|r| d.value(r)).collect();
            let l = lagrangian(&v, &lbar, &toy.spec).unwrap();
            if l < prev - 0.05 {
                drops += 1;
            }
            prev = prev.max(l);
        }
        assert_eq!(drops, 0);
    }

    #[derive(Clone, Debug)]
    struct Failing;
    impl BestResponder for Failing {
        type Policy = TabularPolicy;
        fn best_response(&mut self, _: &ScalarizedSpec, round: usize) -> Result<(TabularPolicy, Option<TrainingCurve>)> {
            if round == 3 {
                return Err(Error::Diverged { episode: 7 });
            }
            let toy = fixtures::toy_game(1, 2.0);
            Ok((TabularPolicy::constant(&toy.mdp, 0), None))
        }
    }

    #[test]
    fn divergence_keeps_the_partial_trace() {
        let toy = fixtures::toy_game(1, 2.0);
        let evaluator = ExactTabularEvaluator { mdp: &toy.mdp };
        let cfg = GameConfig { rounds: 5, step: StepSize::Constant { eta: 0.1 }, lambda0: None, tightening: None };
        let err = run_repeated_game(&mut Failing, &evaluator, &toy.spec, 1, &cfg).unwrap_err();
        assert_eq!(err.round, 3);
        assert_eq!(err.partial.trace.rounds(), 2);
        assert!(matches!(err.cause, Error::Diverged { episode: 7 }));
    }
}
