//! Subcommands: run an experiment, then write its artifacts and manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use morl_core::game::GameTrace;
use morl_core::learner::QPolicy;

use crate::config::{self, RunConfig};
use crate::experiments::{self, SeedGame, SingleObjectiveRun, Table, TabularExtraction, Testbed};
use crate::manifest::{self, Artifacts};
use crate::pool::run_indexed;

pub const TRACE_FILE: &str = "trace.json";

pub struct Ctx {
    pub cfg: RunConfig,
    pub jobs: usize,
    pub out: PathBuf,
}

pub fn seed_dir_name(seed: u64) -> String {
    format!("seed-{seed:04}")
}

fn collect<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Per seed: `seed-XXXX/curve.csv` (`episode, scalarized_return, etph,
/// <constraint labels>`) and `seed-XXXX/checkpoint.qnet`; plus `summary.csv`
/// (`seed, head_mean, tail_mean, improvement` over five episodes).
pub fn single_objective(ctx: &Ctx) -> Result<Vec<SingleObjectiveRun>> {
    let cfg = &ctx.cfg;
    let seeds = cfg.seed_list();
    let runs = collect(run_indexed(seeds.len(), ctx.jobs, |i| experiments::single_objective_seed(cfg, seeds[i])))?;
    let labels = experiments::reward_labels(&cfg.constraint_spec()?);
    let digest = cfg.digest()?;
    let mut art = Artifacts::create(&ctx.out)?;
    let mut summary = String::from("seed,head_mean,tail_mean,improvement\n");
    for r in &runs {
        let dir = seed_dir_name(r.seed);
        art.write(&format!("{dir}/curve.csv"), r.curve.to_csv(&labels))?;
        art.write(&format!("{dir}/checkpoint.qnet"), r.policy.to_bytes(&digest))?;
        let (head, tail) = r.head_tail(5);
        summary.push_str(&format!("{},{},{},{}\n", r.seed, head, tail, r.improvement(5)));
    }
    art.write("summary.csv", summary)?;
    art.finish("single-objective", cfg, seeds)?;
    Ok(runs)
}

/// Writes one seed's game into its own directory and manifest.
pub fn write_seed_game(parent: &Path, cfg: &RunConfig, game: &SeedGame) -> Result<()> {
    let mut art = Artifacts::create(parent.join(seed_dir_name(game.seed)))?;
    let trace = &game.outcome.trace;
    let digest = cfg.digest()?;
    let labels = experiments::reward_labels(&trace.spec);
    art.write("rounds.csv", trace.to_csv())?;
    art.write("multipliers.csv", trace.multipliers_csv())?;
    art.write("mixture.csv", experiments::mixture_csv(&game.mixture, &labels))?;
    art.write(TRACE_FILE, serde_json::to_string_pretty(trace)?)?;
    for (rec, policy) in trace.records.iter().zip(&game.outcome.policies) {
        art.write(&format!("checkpoints/{}.qnet", rec.checkpoint), policy.to_bytes(&digest))?;
    }
    for (rec, curve) in trace.records.iter().zip(&game.outcome.curves) {
        if let Some(c) = curve {
            art.write(&format!("curves/{}.csv", rec.checkpoint), c.to_csv(&labels))?;
        }
    }
    if let Some(msg) = &game.aborted {
        art.write("aborted.txt", format!("{msg}\n"))?;
    }
    art.finish("repeated-game", cfg, vec![game.seed])?;
    Ok(())
}

/// One directory per seed (`rounds.csv`, `multipliers.csv`, `mixture.csv`,
/// `trace.json`, `checkpoints/`, `curves/`), plus `feasibility.csv`
/// (`round, best, mean, worst` cumulative feasible counts) and
/// `summary.txt` at the top. Fails after writing if any seed aborted.
pub fn repeated_game(ctx: &Ctx) -> Result<Vec<SeedGame>> {
    let cfg = &ctx.cfg;
    let seeds = cfg.seed_list();
    let games = collect(run_indexed(seeds.len(), ctx.jobs, |i| experiments::run_game_seed(cfg, seeds[i], true)))?;
    let mut art = Artifacts::create(&ctx.out)?;
    for g in &games {
        write_seed_game(&ctx.out, cfg, g)?;
    }
    let mut summary = String::from("seed,rounds,feasible_rounds,lambda_bar,aborted\n");
    for g in &games {
        let t = &g.outcome.trace;
        let feas: Vec<String> = t.feasible_rounds().iter().map(usize::to_string).collect();
        let lb: Vec<String> = t.lambda_bar().unwrap_or(&[]).iter().map(f64::to_string).collect();
        summary.push_str(&format!("{},{},{},{},{}\n", g.seed, t.rounds(), feas.join(";"), lb.join(";"), g.aborted.is_some() as u8));
    }
    art.write("summary.csv", summary)?;
    let complete: Vec<&GameTrace> = games.iter().filter(|g| g.aborted.is_none()).map(|g| &g.outcome.trace).collect();
    if !complete.is_empty() {
        art.write("feasibility.csv", crate::bench::count_feasible_rounds(&complete)?.to_csv())?;
    }
    art.finish("repeated-game", cfg, seeds)?;
    if let Some(g) = games.iter().find(|g| g.aborted.is_some()) {
        bail!("seed {}: {}", g.seed, g.aborted.as_deref().unwrap_or_default());
    }
    Ok(games)
}

/// A finished seed directory read back from disk.
pub struct LoadedRun {
    pub cfg: RunConfig,
    pub seed: u64,
    pub trace: GameTrace,
    pub policies: Vec<QPolicy>,
}

pub fn load_seed_run(dir: &Path) -> Result<LoadedRun> {
    let m = manifest::read_manifest(dir)?;
    let [seed] = m.seeds[..] else { bail!("{} is not a single-seed run directory", dir.display()) };
    let cfg = config::parse(&std::fs::read_to_string(dir.join(manifest::CONFIG_FILE))?)?;
    let trace: GameTrace = serde_json::from_str(&std::fs::read_to_string(dir.join(TRACE_FILE))?)
        .with_context(|| format!("reading {}", dir.join(TRACE_FILE).display()))?;
    let digest = cfg.digest()?;
    let mut policies = Vec::with_capacity(trace.rounds());
    for rec in &trace.records {
        let path = dir.join("checkpoints").join(format!("{}.qnet", rec.checkpoint));
        let bytes = std::fs::read(&path).with_context(|| format!("missing checkpoint {}", path.display()))?;
        let (policy, stamp) = QPolicy::from_bytes(&bytes)?;
        if stamp != digest {
            bail!("{} was written under a different config", path.display());
        }
        policies.push(policy);
    }
    Ok(LoadedRun { cfg, seed, trace, policies })
}

/// A seed directory itself, or every `seed-*` directory under a batch.
pub fn seed_run_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(TRACE_FILE).exists() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(TRACE_FILE).exists() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seed-")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no repeated-game runs under {}", dir.display());
    }
    Ok(dirs)
}

pub enum Extraction {
    Tabular(Box<TabularExtraction>),
    Runs(Vec<(u64, experiments::RunExtraction)>),
}

/// Without a run directory: the tabular toy game with its exact certificate
/// (`report.txt`, `estimates.csv` as `t, v0_hat, g_hat, l_hat, n`,
/// `rounds.csv`, `certificate.json`); fails when the inequality does not
/// hold. With one: per seed `seed-XXXX/report.txt` and `estimates.csv`.
pub fn extract(ctx: &Ctx, run_dir: Option<&Path>) -> Result<Extraction> {
    let cfg = &ctx.cfg;
    let mut art = Artifacts::create(&ctx.out)?;
    let Some(run_dir) = run_dir else {
        let ex = experiments::tabular_extraction(&cfg.testbed, cfg.extract.epsilon, cfg.extract.delta, cfg.seed)?;
        art.write("report.txt", ex.report())?;
        art.write("estimates.csv", ex.selection.to_csv())?;
        art.write("rounds.csv", ex.rounds_csv())?;
        art.write("certificate.json", serde_json::to_string_pretty(&ex.certificate)?)?;
        art.finish("extract", cfg, vec![cfg.seed])?;
        if !ex.certificate.holds {
            bail!("extraction inequality does not hold");
        }
        return Ok(Extraction::Tabular(Box::new(ex)));
    };
    let mut out = Vec::new();
    let mut seeds = Vec::new();
    for dir in seed_run_dirs(run_dir)? {
        let run = load_seed_run(&dir)?;
        let run_cfg = RunConfig { extract: cfg.extract.clone(), ..run.cfg.clone() };
        let ex = experiments::extract_from_run(&run_cfg, run.seed, &run.trace, &run.policies)?;
        let name = seed_dir_name(run.seed);
        art.write(&format!("{name}/report.txt"), ex.report())?;
        art.write(&format!("{name}/estimates.csv"), ex.selection.to_csv())?;
        seeds.push(run.seed);
        out.push((run.seed, ex));
    }
    art.finish("extract", cfg, seeds)?;
    Ok(Extraction::Runs(out))
}

/// `summary.txt` (one PASS/FAIL line per check), `frank_wolfe.csv`,
/// `frank_wolfe/<instance>.csv` iteration logs, `cancellation.json`,
/// `concentration.json`.
pub fn testbed(ctx: &Ctx) -> Result<Testbed> {
    let cfg = &ctx.cfg;
    let tb = experiments::testbed(cfg)?;
    let mut art = Artifacts::create(&ctx.out)?;
    art.write("summary.txt", tb.summary())?;
    art.write("frank_wolfe.csv", tb.fw_csv())?;
    for (c, res) in &tb.fw {
        art.write(&format!("frank_wolfe/{}.csv", c.name), res.log_csv())?;
    }
    art.write("cancellation.json", serde_json::to_string_pretty(&tb.demo)?)?;
    art.write("concentration.json", serde_json::to_string_pretty(&tb.coverage)?)?;
    art.finish("testbed", cfg, vec![cfg.seed])?;
    Ok(tb)
}

/// `table1.csv` (`metric, <policy>_mean, <policy>_ci95, ...`), `table1.txt`,
/// `kpis.csv` (per seed and policy) and `feasibility.csv`. Games come from
/// `run_dir` when given, otherwise they are run here.
pub fn evaluate(ctx: &Ctx, run_dir: Option<&Path>) -> Result<Table> {
    let cfg = &ctx.cfg;
    let (eval_cfg, games): (RunConfig, Vec<(u64, GameTrace, Vec<QPolicy>)>) = match run_dir {
        Some(dir) => {
            let runs = seed_run_dirs(dir)?.iter().map(|d| load_seed_run(d)).collect::<Result<Vec<_>>>()?;
            let base = RunConfig { eval: cfg.eval.clone(), ..runs[0].cfg.clone() };
            (base, runs.into_iter().map(|r| (r.seed, r.trace, r.policies)).collect())
        }
        None => {
            let seeds = cfg.seed_list();
            let games = collect(run_indexed(seeds.len(), ctx.jobs, |i| experiments::run_game_seed(cfg, seeds[i], false)))?;
            let mut out = Vec::new();
            for g in games {
                if let Some(msg) = g.aborted {
                    bail!("seed {}: {msg}", g.seed);
                }
                out.push((g.seed, g.outcome.trace, g.outcome.policies));
            }
            (cfg.clone(), out)
        }
    };
    let refs: Vec<(u64, &GameTrace, &[QPolicy])> = games.iter().map(|(s, t, p)| (*s, t, p.as_slice())).collect();
    let table = experiments::build_table(&eval_cfg, &refs, ctx.jobs)?;
    let mut art = Artifacts::create(&ctx.out)?;
    art.write("table1.csv", table.comparison.to_csv())?;
    art.write("table1.txt", table.comparison.to_text())?;
    art.write("kpis.csv", table.kpis_csv())?;
    art.write("feasibility.csv", table.curves.to_csv())?;
    art.finish("evaluate", &eval_cfg, games.iter().map(|g| g.0).collect())?;
    Ok(table)
}
