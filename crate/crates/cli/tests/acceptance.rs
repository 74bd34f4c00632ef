//! End-to-end acceptance gates. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::io::Write;
use std::time::Instant;

use rand::Rng;

use morl_cli::config::RunConfig;
use morl_cli::experiments::{self, MORL, RANDOM, UNCONSTRAINED};
use morl_cli::pool::run_indexed;
use morl_core::extraction::{cancellation_demo, required_samples, ReformSpec};
use morl_core::fixtures;
use morl_core::game::{
    equilibrium_gaps, lagrangian, mixture_occupancy, run_repeated_game, ExactTabularEvaluator, ExactTabularResponder,
    GameConfig,
};
use morl_core::learner::ScalarizedSpec;
use morl_core::mdp::estimate_values;
use morl_core::oracle::project_bruteforce;
use morl_core::regulator::{ogd_step, project_lambda, realized_regret, ConstraintSpec, LagrangeWeights, StepSize};
use morl_core::rng::seeded;
use morl_core::tabular::{backward_induction, occupancy_of_policy, value_from_occupancy, TabularMdp, TabularPolicy};

type Check = (bool, String);

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn single_objective_improvement() -> Check {
    let cfg = RunConfig::default();
    let seeds: Vec<u64> = (0..20).collect();
    let runs = run_indexed(seeds.len(), jobs(), |i| {
        let t0 = Instant::now();
        let run = experiments::single_objective_seed(&cfg, seeds[i]).expect("training");
        (run.improvement(5), t0.elapsed().as_secs_f64())
    });
    let improved = runs.iter().filter(|(g, _)| *g >= 0.2).count();
    let slowest = runs.iter().map(|r| r.1).fold(0.0, f64::max);
    let gains: Vec<String> = runs.iter().map(|(g, _)| format!("{:.0}%", 100.0 * g)).collect();
    (
        improved >= 16 && slowest <= 300.0,
        format!("{improved}/20 seeds improve by >= 20% (gains {}); slowest seed {slowest:.1}s", gains.join(" ")),
    )
}

/// Criteria 2 and 3 share one 20-seed batch at the default desk config.
fn table_and_feasibility() -> (Check, Check) {
    let cfg = RunConfig { seeds: 20, ..RunConfig::default() };
    let seeds = cfg.seed_list();
    let games: Vec<_> = run_indexed(seeds.len(), jobs(), |i| experiments::run_game_seed(&cfg, seeds[i], false).expect("game"));
    for g in &games {
        assert!(g.aborted.is_none(), "seed {} aborted: {:?}", g.seed, g.aborted);
    }
    let refs: Vec<_> = games.iter().map(|g| (g.seed, &g.outcome.trace, g.outcome.policies.as_slice())).collect();
    let table = experiments::build_table(&cfg, &refs, jobs()).expect("table");
    let c = &table.comparison;
    let (unc, morl, rnd) = (c.column(UNCONSTRAINED).unwrap(), c.column(MORL).unwrap(), c.column(RANDOM).unwrap());
    let manual = c.labels.iter().position(|l| l == "manual_cap").unwrap();
    let ordering = unc.etph.clearly_above(&morl.etph) && morl.etph.clearly_above(&rnd.etph);
    let signs = unc.slacks[manual].mean < 0.0 && rnd.slacks[manual].mean < 0.0 && morl.feasible;
    let fmt = |s: &morl_cli::bench::Stat| format!("{:.2} ± {:.2}", s.mean, s.half_width);
    let morl_slacks: Vec<String> = morl.slacks.iter().map(|s| format!("{:.3}", s.mean)).collect();
    let table_check = (
        ordering && signs && morl.etph.n == 20,
        format!(
            "ETPH unconstrained {} > morl {} > random {} (morl seeds {}); manual-cap slack unconstrained {:.2}, random {:.2}; morl slacks [{}]",
            fmt(&unc.etph),
            fmt(&morl.etph),
            fmt(&rnd.etph),
            morl.etph.n,
            unc.slacks[manual].mean,
            rnd.slacks[manual].mean,
            morl_slacks.join(", ")
        ),
    );
    let finals = table.curves.final_counts();
    let median = table.curves.median_final();
    let feas_check = (median >= 1.0, format!("median cumulative feasible rounds at T = 20: {median} (per seed {finals:?})"));
    (table_check, feas_check)
}

fn ogd_regret() -> Check {
    let mut details = Vec::new();
    let mut ok = true;
    let spec = ConstraintSpec::new(vec![0.0; 3], vec![1.0; 3], 10.0, vec!["a".into(), "b".into(), "c".into()]).unwrap();
    let g_bound = 1.0;
    let d = spec.diameter();
    for &t in &[10usize, 100, 1000] {
        let eta = StepSize::Theoretical { rounds: t, grad_bound: g_bound }.eta(&spec).unwrap();
        let mut rng = seeded(t as u64);
        let sequences: Vec<Vec<Vec<f64>>> = vec![
            // random directions with norm at most G
            (0..t)
                .map(|_| {
                    let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
                    v.iter().map(|x| g_bound * x / n).collect()
                })
                .collect(),
            // one constraint always violated
            vec![vec![-g_bound, 0.0, 0.0]; t],
            // violations switching between constraints
            (0..t).map(|i| if (i / 3) % 2 == 0 { vec![-0.6, 0.8, 0.0] } else { vec![0.8, 0.0, -0.6] }).collect(),
        ];
        for seq in sequences {
            let mut lambda = LagrangeWeights::zeros(3);
            let mut played = Vec::with_capacity(t);
            for g in &seq {
                played.push(lambda.to_vec());
                lambda = ogd_step(&lambda, g, eta, &spec).unwrap();
            }
            let regret = realized_regret(&played, &seq, spec.cap).unwrap();
            let bound = d * g_bound * (t as f64).sqrt();
            ok &= regret <= bound;
            details.push(format!("T={t}: {regret:.3} <= {bound:.3}"));
        }
    }
    (ok, details.join("; "))
}

fn minimax_convergence() -> Check {
    let t0 = Instant::now();
    let horizon = 10;
    let toy = fixtures::toy_game(horizon, 2.0);
    let rounds = 1000;
    let g_bound = horizon as f64 / 2.0;
    let cfg = GameConfig { rounds, step: StepSize::Theoretical { rounds, grad_bound: g_bound }, lambda0: None, tightening: None };
    let mut responder = ExactTabularResponder { mdp: &toy.mdp };
    let evaluator = ExactTabularEvaluator { mdp: &toy.mdp };
    let out = run_repeated_game(&mut responder, &evaluator, &toy.spec, horizon, &cfg).expect("game");
    let d_bar = mixture_occupancy(&toy.mdp, &out.policies).unwrap();
    let lambda_bar = out.lambda_bar().unwrap().to_vec();
    let gaps = equilibrium_gaps(&toy.mdp, &toy.spec, &d_bar, &lambda_bar).unwrap();
    let bound = toy.spec.diameter() * g_bound / (rounds as f64).sqrt() + 1e-6;
    // brute-force L* = min over a lambda grid of the exact best-response value
    let l_star = (0..=20_000)
        .map(|k| {
            let l = toy.spec.cap * k as f64 / 20_000.0;
            let scal = ScalarizedSpec::from_constraints(&[l], &toy.spec, horizon).unwrap();
            backward_induction(&toy.mdp, &scal.table(&toy.mdp).unwrap()).unwrap().value
        })
        .fold(f64::INFINITY, f64::min);
    let values: Vec<f64> = toy.mdp.rewards().iter().map(|r| d_bar.value(r)).collect();
    let l_bar = lagrangian(&values, &lambda_bar, &toy.spec).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    (
        gaps.learner <= bound && gaps.regulator <= bound && (l_bar - l_star).abs() <= bound && secs <= 60.0,
        format!(
            "learner gap {:.2e}, regulator gap {:.2e}, |L(D_bar, lambda_bar) - L*| = {:.2e} (L* = {l_star:.4}), bound {bound:.4}; {secs:.1}s",
            gaps.learner,
            gaps.regulator,
            (l_bar - l_star).abs()
        ),
    )
}

fn frank_wolfe() -> Check {
    let t0 = Instant::now();
    let checks = experiments::fw_suite_checks(1e-3).expect("fw suite");
    let secs = t0.elapsed().as_secs_f64();
    let ok = checks.iter().all(|(c, _)| c.passed && c.iterations <= 10_000) && checks.len() == 5 && secs <= 120.0;
    let parts: Vec<String> = checks
        .iter()
        .map(|(c, _)| format!("{} gap {:.1e} in {} it, |L - oracle| {:.1e}", c.name, c.gap, c.iterations, (c.value - c.oracle).abs()))
        .collect();
    (ok, format!("{}; {secs:.2}s", parts.join("; ")))
}

fn concentration() -> Check {
    let tb = RunConfig::default().testbed;
    let cov = experiments::concentration(&tb, 0.5, 0.05, 0).expect("coverage");
    let n_ref = required_samples(&ReformSpec::new(vec![1.0], 1.0, 10, 1.0, 0.05, 10).unwrap()).unwrap();
    (
        cov.passes() && cov.repetitions == 200 && n_ref == 2697,
        format!(
            "{}/{} repetitions within epsilon at n = {} (binomial p = {:.3}); reference budget {n_ref}",
            cov.hits, cov.repetitions, cov.episodes, cov.p_value
        ),
    )
}

fn extraction() -> Check {
    let tb = RunConfig::default().testbed;
    let certs: Vec<_> = (0..20u64).map(|s| experiments::tabular_extraction(&tb, 0.5, 0.05, s).expect("extraction").certificate).collect();
    let holding = certs.iter().filter(|c| c.holds).count();
    let min_slack = certs.iter().map(|c| c.slack()).fold(f64::INFINITY, f64::min);
    let c = &certs[0];
    (
        holding == 20,
        format!(
            "inequality holds on {holding}/20 seeds; smallest margin {min_slack:.3}; seed 0: nu {:.3}, J {:.3}, eps {}, L* {:.3}",
            c.nu, c.jensen, c.epsilon, c.l_star
        ),
    )
}

fn cancellation() -> Check {
    let d = cancellation_demo(4).expect("demo");
    (
        d.holds(),
        format!(
            "mixture signed violation {:.1e}; left [g]+ {}, right [g]+ {} against floor {}",
            d.mixture_signed_violation, d.left_violation, d.right_violation, d.floor
        ),
    )
}

fn core_identities() -> Check {
    let mut worst_mass = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = seeded(1000 + seed);
        let (s, a, h) = (rng.random_range(1..6), rng.random_range(1..4), rng.random_range(1..8));
        let mdp = TabularMdp::random(s, a, h, 2, seed);
        let probs: Vec<f64> = (0..h * s)
            .flat_map(|_| {
                let raw: Vec<f64> = (0..a).map(|_| rng.random::<f64>() + 1e-3).collect();
                let z: f64 = raw.iter().sum();
                raw.into_iter().map(move |x| x / z)
            })
            .collect();
        let pi = TabularPolicy::from_probs(s, a, h, probs).unwrap();
        let d = occupancy_of_policy(&mdp, &pi).unwrap();
        worst_mass = worst_mass.max((d.total() - h as f64).abs());
    }
    let mut worst_z = 0.0f64;
    for seed in 0..10u64 {
        let mdp = TabularMdp::random(4, 3, 6, 2, 500 + seed);
        let pi = TabularPolicy::uniform(&mdp);
        let d = occupancy_of_policy(&mdp, &pi).unwrap();
        let mc = estimate_values(&mdp, &pi, 10_000, seed).unwrap();
        for (i, r) in mdp.rewards().iter().enumerate() {
            let exact = value_from_occupancy(&d, r).unwrap();
            worst_z = worst_z.max((mc.mean[i] - exact).abs() / mc.std_err[i].max(1e-12));
        }
    }
    let mut worst_proj = 0.0f64;
    for m in 1..=3usize {
        let grid: Vec<f64> = (-8..=8).map(|k| k as f64 * 0.75).collect();
        let mut idx = vec![0usize; m];
        loop {
            let v: Vec<f64> = idx.iter().map(|&k| grid[k]).collect();
            for cap in [0.5, 2.0, 5.0] {
                let fast = project_lambda(&v, cap);
                let slow = project_bruteforce(&v, cap);
                worst_proj = fast.iter().zip(&slow).map(|(x, y)| (x - y).abs()).fold(worst_proj, f64::max);
            }
            let mut j = 0;
            while j < m && idx[j] + 1 == grid.len() {
                idx[j] = 0;
                j += 1;
            }
            if j == m {
                break;
            }
            idx[j] += 1;
        }
    }
    (
        worst_mass <= 1e-9 && worst_z <= 3.0 && worst_proj <= 1e-9,
        format!("max |sum d - H| {worst_mass:.1e}; max MC z-score {worst_z:.2}; max projection error {worst_proj:.1e}"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, (ok, detail): Check| {
        let line = format!("criterion {n:>2}: {} {detail}\n", if ok { "PASS" } else { "FAIL" });
        let mut out = std::io::stdout().lock();
        let _ = out.write_all(line.as_bytes());
        let _ = out.flush();
        failed += (!ok) as usize;
    };
    report(1, single_objective_improvement());
    let (c2, c3) = table_and_feasibility();
    report(2, c2);
    report(3, c3);
    report(4, ogd_regret());
    report(5, minimax_convergence());
    report(6, frank_wolfe());
    report(7, concentration());
    report(8, extraction());
    report(9, cancellation());
    report(10, core_identities());
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
