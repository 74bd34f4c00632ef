//! The computations behind each subcommand, free of any file I/O.

use anyhow::{anyhow, bail, Result};
use serde::Serialize;

use morl_core::extraction::{
    cancellation_demo, concentration_coverage, extraction_certificate, required_samples, run_reformulated_game,
    select_best_iterate, CancellationDemo, Certificate, CoverageReport, ReformGame, ReformGameConfig, ReformSpec,
    Selection,
};
use morl_core::fixtures;
use morl_core::frank_wolfe::{fw_best_response, FwResult};
use morl_core::game::{
    evaluate_mixture, run_repeated_game, DqnResponder, GameConfig, GameOutcome, GameTrace, MonteCarloEvaluator,
};
use morl_core::learner::{train_best_response, LearnerConfig, QPolicy, ScalarizedSpec, TrainingCurve};
use morl_core::mdp::{EpisodicMdp, Observation, ValueVector};
use morl_core::oracle::{deterministic_value_points, max_reformulated_over_hull};
use morl_core::regulator::ConstraintSpec;
use morl_core::rng::derive_seed;
use warehouse_sim::WarehouseEnv;

use crate::bench::{
    best_feasible_round, count_feasible_rounds, evaluate_policy, make_baseline, BaselineKind, ColumnSummary, Comparison,
    FeasibilityCurves, KpiReport,
};
use crate::config::{RunConfig, TestbedSection};
use crate::pool::run_indexed;

pub const ROUND_EVAL_STREAM: u64 = 0x0E7A_15EE;
pub const MIXTURE_STREAM: u64 = 0x0313_7000;
const EXTRACT_STREAM: u64 = 0x0E87_AC70;

pub const UNCONSTRAINED: &str = "unconstrained";
pub const MORL: &str = "morl";
pub const RANDOM: &str = "random";

pub fn learner_config(cfg: &RunConfig, seed: u64) -> LearnerConfig {
    LearnerConfig { seed, ..cfg.learner.clone() }
}

/// Reward labels in environment order: the objective, then the constraints.
pub fn reward_labels(spec: &ConstraintSpec) -> Vec<String> {
    std::iter::once("etph".to_string()).chain(spec.labels.iter().cloned()).collect()
}

/// Training at zero multipliers for one seed.
pub struct SingleObjectiveRun {
    pub seed: u64,
    pub policy: QPolicy,
    pub curve: TrainingCurve,
}

impl SingleObjectiveRun {
    /// `(mean of the first k, mean of the last k)` scalarized returns.
    pub fn head_tail(&self, k: usize) -> (f64, f64) {
        let r = self.curve.scalarized();
        let k = k.min(r.len()).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        (mean(&r[..k]), mean(&r[r.len() - k..]))
    }

    /// Relative gain of the tail over the head.
    pub fn improvement(&self, k: usize) -> f64 {
        let (head, tail) = self.head_tail(k);
        (tail - head) / head.abs().max(1e-12)
    }
}

pub fn single_objective_seed(cfg: &RunConfig, seed: u64) -> Result<SingleObjectiveRun> {
    let env = WarehouseEnv::new(cfg.sim.clone())?;
    let spec = cfg.constraint_spec()?;
    let scal = ScalarizedSpec::unconstrained(&spec, env.horizon());
    let (policy, curve) = train_best_response(&env, &scal, &learner_config(cfg, seed))?;
    Ok(SingleObjectiveRun { seed, policy, curve })
}

/// One seed of the repeated game. On abort `outcome` holds the completed
/// rounds and `aborted` the reason.
pub struct SeedGame {
    pub seed: u64,
    pub outcome: GameOutcome<QPolicy>,
    /// Value of the uniform mixture over rounds `1..=t`, per round.
    pub mixture: Vec<ValueVector>,
    pub aborted: Option<String>,
}

pub fn game_config(cfg: &RunConfig) -> GameConfig {
    GameConfig { rounds: cfg.game.rounds, step: cfg.step_size(), lambda0: None, tightening: Some(cfg.game.tightening.clone()) }
}

pub fn run_game_seed(cfg: &RunConfig, seed: u64, with_mixture: bool) -> Result<SeedGame> {
    let env = WarehouseEnv::new(cfg.sim.clone())?;
    let spec = cfg.constraint_spec()?;
    let mut responder = DqnResponder::new(&env, learner_config(cfg, seed))?;
    let evaluator = MonteCarloEvaluator { env: &env, episodes: cfg.game.eval_episodes, seed: derive_seed(seed, ROUND_EVAL_STREAM) };
    let (outcome, aborted) = match run_repeated_game(&mut responder, &evaluator, &spec, env.horizon(), &game_config(cfg)) {
        Ok(o) => (o, None),
        Err(a) => {
            let msg = a.to_string();
            (a.partial, Some(msg))
        }
    };
    let mut mixture = Vec::new();
    if with_mixture {
        for t in 1..=outcome.policies.len() {
            let s = derive_seed(seed, MIXTURE_STREAM + t as u64);
            mixture.push(evaluate_mixture(&env, &outcome.policies, t, cfg.game.mixture_episodes, s)?);
        }
    }
    Ok(SeedGame { seed, outcome, mixture, aborted })
}

/// Columns: `t, v0, c1..cm` with values as episode returns.
pub fn mixture_csv(mixture: &[ValueVector], labels: &[String]) -> String {
    let mut out = String::from("t");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (i, v) in mixture.iter().enumerate() {
        out.push_str(&(i + 1).to_string());
        for x in &v.mean {
            out.push(',');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    out
}

/// The three table columns evaluated on one seed.
#[derive(Debug, Clone, Serialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub unconstrained: KpiReport,
    /// Best feasible round and its fresh evaluation; `None` when no round
    /// of the seed's game was feasible.
    pub morl: Option<(usize, KpiReport)>,
    pub random: KpiReport,
}

pub fn compare_seed(cfg: &RunConfig, seed: u64, trace: &GameTrace, policies: &[QPolicy]) -> Result<SeedComparison> {
    let env = WarehouseEnv::new(cfg.sim.clone())?;
    let spec = cfg.constraint_spec()?;
    let seeds = [seed];
    let episodes = cfg.eval.episodes;
    let unconstrained = make_baseline(BaselineKind::Unconstrained, &env, &spec, &learner_config(cfg, seed))?;
    let random = make_baseline(BaselineKind::Random, &env, &spec, &learner_config(cfg, seed))?;
    let morl = match best_feasible_round(trace) {
        Some(t) => {
            let p = policies.get(t - 1).ok_or_else(|| anyhow!("seed {seed}: missing checkpoint for round {t}"))?;
            Some((t, evaluate_policy(&env, &spec, p, MORL, episodes, &seeds)?))
        }
        None => None,
    };
    Ok(SeedComparison {
        seed,
        unconstrained: evaluate_policy(&env, &spec, &unconstrained, UNCONSTRAINED, episodes, &seeds)?,
        morl,
        random: evaluate_policy(&env, &spec, &random, RANDOM, episodes, &seeds)?,
    })
}

pub struct Table {
    pub comparison: Comparison,
    pub per_seed: Vec<SeedComparison>,
    pub curves: FeasibilityCurves,
}

impl Table {
    /// One row per seed and column: `seed, policy, round, etph, <slacks>, feasible`.
    pub fn kpis_csv(&self) -> String {
        let mut out = String::from("seed,policy,round,etph");
        for l in &self.comparison.labels {
            out.push_str(&format!(",slack_{l}"));
        }
        out.push_str(",feasible\n");
        for s in &self.per_seed {
            let mut rows: Vec<(&KpiReport, String)> = vec![(&s.unconstrained, String::new())];
            if let Some((t, r)) = &s.morl {
                rows.push((r, t.to_string()));
            }
            rows.push((&s.random, String::new()));
            for (r, round) in rows {
                out.push_str(&format!("{},{},{},{}", s.seed, r.policy, round, r.etph));
                for x in &r.slacks {
                    out.push_str(&format!(",{x}"));
                }
                out.push_str(&format!(",{}\n", r.feasible as u8));
            }
        }
        out
    }
}

/// Builds the comparison from finished games, evaluating seeds in parallel.
pub fn build_table(cfg: &RunConfig, games: &[(u64, &GameTrace, &[QPolicy])], jobs: usize) -> Result<Table> {
    let per_seed: Vec<SeedComparison> =
        run_indexed(games.len(), jobs, |i| compare_seed(cfg, games[i].0, games[i].1, games[i].2)).into_iter().collect::<Result<_>>()?;
    let traces: Vec<&GameTrace> = games.iter().map(|g| g.1).collect();
    let curves = count_feasible_rounds(&traces)?;
    let pick = |f: fn(&SeedComparison) -> Option<&KpiReport>| per_seed.iter().filter_map(f).collect::<Vec<_>>();
    let labels = cfg.constraint_spec()?.labels;
    let columns = vec![
        ColumnSummary::from_reports(UNCONSTRAINED, &pick(|s| Some(&s.unconstrained))),
        ColumnSummary::from_reports(MORL, &pick(|s| s.morl.as_ref().map(|m| &m.1))),
        ColumnSummary::from_reports(RANDOM, &pick(|s| Some(&s.random))),
    ];
    Ok(Table { comparison: Comparison { labels, columns }, per_seed, curves })
}

/// Presents constraint rewards in `value <= threshold` orientation by
/// multiplying reward `i + 1` by `sign[i]`.
pub struct Oriented<'a, M: ?Sized> {
    pub inner: &'a M,
    pub sign: Vec<f64>,
}

impl<M: EpisodicMdp + ?Sized> EpisodicMdp for Oriented<'_, M> {
    type State = M::State;

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    fn reward_dim(&self) -> usize {
        self.inner.reward_dim()
    }

    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    fn reset(&self, seed: u64) -> morl_core::Result<Self::State> {
        self.inner.reset(seed)
    }

    fn observe_into(&self, state: &Self::State, obs: &mut Observation) {
        self.inner.observe_into(state, obs)
    }

    fn step(&self, state: &mut Self::State, action: usize, reward: &mut [f64]) -> morl_core::Result<()> {
        self.inner.step(state, action, reward)?;
        for (r, s) in reward[1..].iter_mut().zip(&self.sign) {
            *r *= s;
        }
        Ok(())
    }
}

/// Best-iterate selection on a finished warehouse game.
#[derive(Debug, Clone, Serialize)]
pub struct RunExtraction {
    pub spec: ReformSpec,
    /// Hoeffding count, when representable.
    pub required: Option<usize>,
    /// Episodes actually run per iterate: the Hoeffding count capped by
    /// `extract.max_episodes`.
    pub used: usize,
    pub selection: Selection,
}

impl RunExtraction {
    pub fn report(&self) -> String {
        let required = self.required.map_or("unrepresentable".to_string(), |n| n.to_string());
        let mut s = String::new();
        s.push_str(&format!(
            "epsilon = {}  delta = {}  required n = {}  used n = {}\n",
            self.spec.epsilon, self.spec.delta, required, self.used
        ));
        if self.required.is_none_or(|n| n > self.used) {
            s.push_str("sample budget capped: the concentration guarantee does not apply at this n\n");
        }
        s.push_str(&format!("lambda_bar = {}  rounds = {}\n", self.spec.lambda_bar, self.spec.rounds));
        let best = self.selection.best();
        s.push_str(&format!("selected round t* = {}\n", self.selection.best_round));
        s.push_str(&format!("L_hat = {}  v0_hat = {}  g_hat = {}\n", best.lagrangian, best.v0, best.g));
        s
    }
}

pub fn extract_from_run(cfg: &RunConfig, seed: u64, trace: &GameTrace, policies: &[QPolicy]) -> Result<RunExtraction> {
    let Some(lambda_bar) = trace.lambda_bar() else { bail!("run has no completed rounds") };
    if policies.len() != trace.rounds() {
        bail!("run has {} rounds but {} checkpoints", trace.rounds(), policies.len());
    }
    let env = WarehouseEnv::new(cfg.sim.clone())?;
    let spec = &trace.spec;
    let reform = ReformSpec::from_constraints(spec, lambda_bar, env.horizon(), cfg.extract.epsilon, cfg.extract.delta, trace.rounds())?;
    let required = required_samples(&reform).ok();
    let used = required.map_or(cfg.extract.max_episodes, |n| n.min(cfg.extract.max_episodes));
    let oriented = Oriented { inner: &env, sign: spec.sign.clone() };
    let selection = select_best_iterate(&oriented, policies, &reform, used, derive_seed(seed, EXTRACT_STREAM))?;
    Ok(RunExtraction { spec: reform, required, used, selection })
}

/// Positive-part game on the tabular toy instance, then selection at the
/// full Hoeffding count and the exact certificate.
pub struct TabularExtraction {
    pub game: ReformGame,
    pub spec: ReformSpec,
    pub selection: Selection,
    pub certificate: Certificate,
}

impl TabularExtraction {
    pub fn report(&self) -> String {
        format!(
            "epsilon = {}  delta = {}  required n = {}  used n = {}\n{}",
            self.spec.epsilon,
            self.spec.delta,
            self.certificate.episodes,
            self.certificate.episodes,
            self.certificate.to_text()
        )
    }

    /// Columns: `t, lambda, lambda_next, v0, g, fw_gap`.
    pub fn rounds_csv(&self) -> String {
        let mut out = String::from("t,lambda,lambda_next,v0,g,fw_gap\n");
        for r in &self.game.rounds {
            out.push_str(&format!("{},{},{},{},{},{}\n", r.round, r.lambda, r.lambda_next, r.v0, r.g, r.fw_gap));
        }
        out
    }
}

pub fn tabular_extraction(tb: &TestbedSection, epsilon: f64, delta: f64, seed: u64) -> Result<TabularExtraction> {
    let toy = fixtures::toy_game(tb.toy_horizon, tb.toy_cap);
    let alpha: Vec<f64> = toy.spec.alpha.iter().zip(&toy.spec.sign).map(|(a, s)| a * s).collect();
    let game = run_reformulated_game(&toy.mdp, &alpha, &ReformGameConfig { rounds: tb.toy_rounds, cap: tb.toy_cap, ..Default::default() })?;
    let spec = ReformSpec::new(alpha, game.lambda_bar(), tb.toy_horizon, epsilon, delta, tb.toy_rounds)?;
    let n = required_samples(&spec)?;
    let selection = select_best_iterate(&toy.mdp, &game.policies, &spec, n, derive_seed(seed, EXTRACT_STREAM))?;
    let certificate = extraction_certificate(&toy.mdp, &game, &selection, &spec)?;
    Ok(TabularExtraction { game, spec, selection, certificate })
}

#[derive(Debug, Clone, Serialize)]
pub struct FwCheck {
    pub name: String,
    pub iterations: usize,
    pub max_iterations: usize,
    pub gap: f64,
    pub value: f64,
    pub oracle: f64,
    pub passed: bool,
}

pub struct Testbed {
    pub fw: Vec<(FwCheck, FwResult)>,
    pub demo: CancellationDemo,
    pub coverage: CoverageReport,
}

impl Testbed {
    pub fn passed(&self) -> bool {
        self.fw.iter().all(|(c, _)| c.passed) && self.demo.holds() && self.coverage.passes()
    }

    /// Columns: `name, iterations, max_iterations, gap, value, oracle, passed`.
    pub fn fw_csv(&self) -> String {
        let mut out = String::from("name,iterations,max_iterations,gap,value,oracle,passed\n");
        for (c, _) in &self.fw {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.name, c.iterations, c.max_iterations, c.gap, c.value, c.oracle, c.passed as u8
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let mut s = String::new();
        for (c, _) in &self.fw {
            s.push_str(&format!(
                "{} frank-wolfe {}: gap {:.3e} after {} iterations, |value - oracle| = {:.3e}\n",
                verdict(c.passed),
                c.name,
                c.gap,
                c.iterations,
                (c.value - c.oracle).abs()
            ));
        }
        let d = &self.demo;
        s.push_str(&format!(
            "{} cancellation: mixture signed violation {:.3e}, left [g]+ {}, right [g]+ {}, floor {}\n",
            verdict(d.holds()),
            d.mixture_signed_violation,
            d.left_violation,
            d.right_violation,
            d.floor
        ));
        let c = &self.coverage;
        s.push_str(&format!(
            "{} concentration: {}/{} repetitions within epsilon at n = {} (target {}, p = {:.3})\n",
            verdict(c.passes()),
            c.hits,
            c.repetitions,
            c.episodes,
            c.target,
            c.p_value
        ));
        s
    }
}

pub fn fw_suite_checks(epsilon: f64) -> Result<Vec<(FwCheck, FwResult)>> {
    let max_iterations = (10.0 / epsilon).ceil() as usize;
    fixtures::fw_suite()
        .into_iter()
        .map(|inst| {
            let res = fw_best_response(&inst.mdp, inst.lambda, &inst.alpha, max_iterations, epsilon)?;
            let oracle = max_reformulated_over_hull(&deterministic_value_points(&inst.mdp), inst.lambda, &inst.alpha);
            let check = FwCheck {
                name: inst.name.to_string(),
                iterations: res.state.w,
                max_iterations,
                gap: res.state.gap,
                value: res.value,
                oracle,
                passed: res.state.gap <= epsilon && (res.value - oracle).abs() <= epsilon,
            };
            Ok((check, res))
        })
        .collect()
}

pub fn concentration(tb: &TestbedSection, epsilon: f64, delta: f64, seed: u64) -> Result<CoverageReport> {
    let f = fixtures::concentration_fixture(tb.concentration_policies);
    let spec = ReformSpec::new(f.alpha.clone(), 1.0, f.mdp.horizon(), epsilon, delta, f.policies.len())?;
    Ok(concentration_coverage(&f.mdp, &f.policies, &spec, tb.concentration_reps, seed)?)
}

pub fn testbed(cfg: &RunConfig) -> Result<Testbed> {
    let tb = &cfg.testbed;
    Ok(Testbed {
        fw: fw_suite_checks(tb.fw_epsilon)?,
        demo: cancellation_demo(tb.demo_horizon)?,
        coverage: concentration(tb, cfg.extract.epsilon, cfg.extract.delta, cfg.seed)?,
    })
}
