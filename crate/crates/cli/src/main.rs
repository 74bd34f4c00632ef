use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use morl_cli::commands::{self, Ctx, Extraction};
use morl_cli::{config, manifest};

#[derive(Parser)]
#[command(name = "morl", version, about = "Constrained multi-objective RL on a warehouse floor simulator")]
struct Cli {
    /// TOML config; missing keys take the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set game.rounds=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Start from the full-size preset (1440 steps per day, 10 days, C = 20000).
    #[arg(long, global = true)]
    paper_scale: bool,
    /// Worker threads for seed-level parallelism.
    #[arg(long, default_value_t = 1, global = true)]
    jobs: usize,
    /// Output directory. Defaults to `$MORL_OUTPUT_ROOT/<subcommand>-<config hash>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, env = "MORL_OUTPUT_ROOT", default_value = "runs", global = true)]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train at zero multipliers and write the training curve and checkpoint.
    SingleObjective,
    /// Run the learner/regulator game for every seed of the batch.
    RepeatedGame,
    /// Select the best single iterate of a finished game, or certify the
    /// tabular toy game when no run directory is given.
    Extract {
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Frank–Wolfe suite, cancellation demo and concentration repetitions.
    Testbed,
    /// Compare unconstrained, best feasible and random policies over seeds.
    Evaluate {
        /// Reuse a repeated-game batch instead of running the games.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Re-hash an output directory against its manifest.
    Verify { dir: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SingleObjective => "single-objective",
            Command::RepeatedGame => "repeated-game",
            Command::Extract { .. } => "extract",
            Command::Testbed => "testbed",
            Command::Evaluate { .. } => "evaluate",
            Command::Verify { .. } => "verify",
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    if let Command::Verify { dir } = &cli.command {
        let r = manifest::verify(dir)?;
        println!("checked {} files", r.checked);
        for f in &r.mismatched {
            println!("mismatch: {f}");
        }
        for f in &r.missing {
            println!("missing: {f}");
        }
        if !r.config_hash_ok {
            println!("config hash does not match");
        }
        return Ok(r.ok());
    }
    let cfg = config::load(cli.config.as_deref(), &cli.overrides, cli.paper_scale)?;
    let out = match cli.out {
        Some(o) => o,
        None => cli.output_root.join(format!("{}-{}", cli.command.name(), &cfg.hash()?[..12])),
    };
    let ctx = Ctx { cfg, jobs: cli.jobs.max(1), out };
    let ok = match &cli.command {
        Command::SingleObjective => {
            for r in commands::single_objective(&ctx)? {
                let (head, tail) = r.head_tail(5);
                println!("seed {}: first-5 mean {head:.3}, last-5 mean {tail:.3}", r.seed);
            }
            true
        }
        Command::RepeatedGame => {
            for g in commands::repeated_game(&ctx)? {
                println!("seed {}: feasible rounds {:?}", g.seed, g.outcome.trace.feasible_rounds());
            }
            true
        }
        Command::Extract { run_dir } => match commands::extract(&ctx, run_dir.as_deref())? {
            Extraction::Tabular(ex) => {
                print!("{}", ex.report());
                ex.certificate.holds
            }
            Extraction::Runs(runs) => {
                for (_, ex) in runs {
                    print!("{}", ex.report());
                }
                true
            }
        },
        Command::Testbed => {
            let tb = commands::testbed(&ctx)?;
            print!("{}", tb.summary());
            tb.passed()
        }
        Command::Evaluate { run_dir } => {
            let table = commands::evaluate(&ctx, run_dir.as_deref())?;
            print!("{}", table.comparison.to_text());
            true
        }
        Command::Verify { .. } => unreachable!("handled above"),
    };
    println!("output: {}", ctx.out.display());
    Ok(ok)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
