use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use implicit_sampling::bench::{
    compare, evaluate, read_json, write_csv, write_json, EnvSpec, ExperimentConfig, Summary,
    TrainJob,
};
use implicit_sampling::geometry::{make_flytrap, Environment, FlytrapParams, Point};
use implicit_sampling::planners::{Problem, SearchTree};
use implicit_sampling::policy::{FeatureMap, SamplingPolicy};
use implicit_sampling::training::{distribution_grid, train_with_checkpoints};
use implicit_sampling::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "implicit-sampling",
    version,
    about = "Train and benchmark learned sampling policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a flytrap environment as JSON.
    GenEnv {
        #[arg(long, value_enum, default_value_t = Preset::Train)]
        preset: Preset,
        /// Flytrap parameter JSON, overriding the preset.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy and write it with its training log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Episode cap in samples.
        #[arg(long)]
        budget: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run seeded trials and write per-trial CSV plus a JSON summary.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Base seed; trial i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        budget: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Ratio table of two evaluation summaries.
    Compare {
        #[arg(long)]
        learned: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        /// Optional JSON output; the table is always printed.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Implicit sampling density on a grid, for a policy and tree snapshot.
    DistGrid {
        #[arg(long)]
        policy: PathBuf,
        /// Environment JSON; defaults to the training flytrap.
        #[arg(long)]
        env: Option<PathBuf>,
        /// Tree snapshot JSON (`{"nodes": [{"x": .., "y": ..}, ..]}`);
        /// defaults to the start configuration alone.
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Train,
    Test,
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeSnapshot {
    nodes: Vec<Point>,
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn gen_env(preset: Preset, params: Option<PathBuf>, out: &Path) -> Result<()> {
    let p: FlytrapParams = match params {
        Some(path) => read_json(&path)?,
        None => match preset {
            Preset::Train => FlytrapParams::train(),
            Preset::Test => FlytrapParams::test(),
        },
    };
    let env = make_flytrap(&p)?;
    env.save(out)?;
    println!(
        "{}",
        json!({"environment": env.name, "out": out, "start": p.default_start(), "goal": p.default_goal()})
    );
    Ok(())
}

fn train_cmd(config: &Path, seed: Option<u64>, budget: Option<u64>, out: &Path) -> Result<()> {
    let mut job: TrainJob = read_json(config)?;
    if let Some(s) = seed {
        job.train.seed = s;
    }
    if let Some(b) = budget {
        job.planner_config.sample_budget = b;
    }
    let tasks = job.tasks(&base_dir(config))?;
    std::fs::create_dir_all(out)?;
    let ckpt_dir = out.join("checkpoints");
    if job.train.checkpoint_every > 0 {
        std::fs::create_dir_all(&ckpt_dir)?;
    }
    let outcome = train_with_checkpoints(&job.train, &tasks, |ev| {
        ev.policy.save(&ckpt_dir.join(format!(
            "restart{}_iter{:05}.json",
            ev.restart, ev.iteration
        )))
    })?;
    outcome.policy.save(&out.join("policy.json"))?;
    write_csv(&out.join("training_log.csv"), &outcome.log)?;
    write_json(
        &out.join("train_summary.json"),
        &json!({
            "planner": job.planner,
            "best_restart": outcome.best_restart,
            "restarts": outcome.restarts,
        }),
    )?;
    println!(
        "{}",
        json!({"policy": out.join("policy.json"), "best_restart": outcome.best_restart})
    );
    Ok(())
}

fn eval_cmd(
    config: &Path,
    seed: Option<u64>,
    trials: Option<usize>,
    budget: Option<u64>,
    out: &Path,
) -> Result<()> {
    let mut cfg: ExperimentConfig = read_json(config)?;
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(b) = budget {
        cfg.planner_config.sample_budget = b;
    }
    let stats = evaluate(&cfg, &base_dir(config))?;
    std::fs::create_dir_all(out)?;
    write_csv(&out.join("trials.csv"), &stats.records)?;
    write_json(&out.join("summary.json"), &stats.summary)?;
    println!("{}", serde_json::to_string(&stats.summary)?);
    Ok(())
}

fn compare_cmd(learned: &Path, baseline: &Path, out: Option<PathBuf>) -> Result<()> {
    let l: Summary = read_json(learned)?;
    let b: Summary = read_json(baseline)?;
    let c = compare(&l, &b)?;
    println!(
        "{:<18} {:>14} {:>14} {:>10}",
        "metric", "learned", "baseline", "ratio%"
    );
    for r in &c.rows {
        let ratio = r
            .ratio_percent
            .map_or_else(|| "-".to_string(), |v| format!("{v:.1}"));
        println!(
            "{:<18} {:>14.2} {:>14.2} {:>10}",
            r.metric, r.learned, r.baseline, ratio
        );
    }
    println!(
        "{:<18} {:>14.3} {:>14.3}",
        "success_rate", c.learned_success_rate, c.baseline_success_rate
    );
    if let Some(path) = out {
        write_json(&path, &c)?;
    }
    Ok(())
}

fn dist_grid_cmd(
    policy: &Path,
    env: Option<PathBuf>,
    tree: Option<PathBuf>,
    resolution: usize,
    out: &Path,
) -> Result<()> {
    let policy = SamplingPolicy::load(policy)?;
    if !matches!(policy.feature_map, FeatureMap::Rrt | FeatureMap::Birrt) {
        return Err(Error::PolicyMismatch(format!(
            "dist-grid needs an RRT-Connect or BiRRT policy, checkpoint was trained for {:?}",
            policy.feature_map
        )));
    }
    let (env, start): (Environment, Point) = match env {
        Some(path) => {
            let env = Environment::load(&path)?;
            let c = env.bounds.center();
            (env, c)
        }
        None => match EnvSpec::train_flytrap().problem(Path::new(""))? {
            Problem::Geometric { env, start, .. } => (env, start),
            Problem::Pendulum(_) => unreachable!("flytrap is geometric"),
        },
    };
    let nodes = match tree {
        Some(path) => read_json::<TreeSnapshot>(&path)?.nodes,
        None => vec![start],
    };
    let Some((&root, rest)) = nodes.split_first() else {
        return Err(Error::InvalidInput("tree snapshot has no nodes".into()));
    };
    let mut t = SearchTree::new(root, env.distance_to_obstacles(root));
    for (i, &q) in rest.iter().enumerate() {
        t.push(q, i, env.distance_to_obstacles(q));
    }
    let grid = distribution_grid(&policy, &env, &t, resolution)?;
    write_csv(out, &grid.cells)?;
    println!("{}", json!({"cells": grid.cells.len(), "out": out}));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenEnv {
            preset,
            params,
            out,
        } => gen_env(preset, params, &out),
        Command::Train {
            config,
            seed,
            budget,
            out,
        } => train_cmd(&config, seed, budget, &out),
        Command::Eval {
            config,
            seed,
            trials,
            budget,
            out,
        } => eval_cmd(&config, seed, trials, budget, &out),
        Command::Compare {
            learned,
            baseline,
            out,
        } => compare_cmd(&learned, &baseline, out),
        Command::DistGrid {
            policy,
            env,
            tree,
            resolution,
            out,
        } => dist_grid_cmd(&policy, env, tree, resolution, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!(
                "{}",
                json!({"error": {"kind": "usage", "message": e.to_string()}})
            );
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                json!({"error": {"kind": e.kind(), "message": e.to_string()}})
            );
            ExitCode::from(1)
        }
    }
}
