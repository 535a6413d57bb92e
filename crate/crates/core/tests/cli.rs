use implicit_sampling::bench::{
    read_trials_csv, EnvSpec, ExperimentConfig, PolicySpec, Summary, TrainJob,
};
use implicit_sampling::geometry::{Environment, Point};
use implicit_sampling::planners::{run_planner, PlannerConfig, PlannerKind};
use implicit_sampling::policy::SamplingPolicy;
use implicit_sampling::training::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_implicit-sampling"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn eval_config(dir: &Path, name: &str, policy: PolicySpec, trials: usize) -> PathBuf {
    let cfg = ExperimentConfig {
        planner: PlannerKind::RrtConnect,
        environment: EnvSpec::train_flytrap(),
        policy,
        trials,
        base_seed: 40,
        planner_config: PlannerConfig {
            sample_budget: 4000,
            ..Default::default()
        },
    };
    let path = dir.join(name);
    write_json(&path, &cfg);
    path
}

fn small_train_config(dir: &Path) -> PathBuf {
    let job = TrainJob {
        planner: PlannerKind::RrtConnect,
        environments: vec![EnvSpec::train_flytrap()],
        planner_config: PlannerConfig {
            sample_budget: 500,
            ..Default::default()
        },
        reward_weights: Default::default(),
        train: TrainConfig {
            iterations: 2,
            rollouts_per_env: 2,
            restarts: 2,
            warmup_rollouts: 2,
            value_warmup_steps: 3,
            eval_rollouts: 2,
            checkpoint_every: 1,
            ..Default::default()
        },
    };
    let path = dir.join("train.json");
    write_json(&path, &job);
    path
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

#[test]
fn gen_env_writes_loadable_presets() {
    let dir = tempfile::tempdir().unwrap();
    for preset in ["train", "test"] {
        let path = dir.path().join(format!("{preset}.json"));
        ok(&["gen-env", "--preset", preset, "--out", s(&path)]);
        let env = Environment::load(&path).unwrap();
        assert_eq!(env.obstacles.len(), 4);
    }
    let a = Environment::load(&dir.path().join("train.json")).unwrap();
    let b = Environment::load(&dir.path().join("test.json")).unwrap();
    assert_eq!(b.bounds.w, 2.0 * a.bounds.w);
}

#[test]
fn eval_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = eval_config(dir.path(), "eval.json", PolicySpec::AlwaysAccept, 6);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["eval", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["eval", "--config", s(&cfg), "--out", s(&b)]);
    let ca = std::fs::read(a.join("trials.csv")).unwrap();
    assert_eq!(ca, std::fs::read(b.join("trials.csv")).unwrap());
    let records = read_trials_csv(&a.join("trials.csv")).unwrap();
    assert_eq!(records.len(), 6);
    assert_eq!(
        records.iter().map(|r| r.seed).collect::<Vec<_>>(),
        (40..46).collect::<Vec<_>>()
    );
    let summary: Summary =
        serde_json::from_slice(&std::fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.trials, 6);
}

#[test]
fn single_trial_eval_matches_a_direct_planner_call() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = eval_config(dir.path(), "eval.json", PolicySpec::AlwaysAccept, 5);
    let out = dir.path().join("one");
    ok(&[
        "eval",
        "--config",
        s(&cfg),
        "--trials",
        "1",
        "--seed",
        "123",
        "--budget",
        "3000",
        "--out",
        s(&out),
    ]);
    let rec = read_trials_csv(&out.join("trials.csv")).unwrap();
    assert_eq!(rec.len(), 1);

    let problem = EnvSpec::train_flytrap().problem(Path::new("")).unwrap();
    let policy = SamplingPolicy::always_accept(PlannerKind::RrtConnect.feature_map());
    let pc = PlannerConfig {
        sample_budget: 3000,
        ..Default::default()
    };
    let direct = run_planner(
        PlannerKind::RrtConnect,
        &problem,
        &policy,
        &pc,
        &mut ChaCha8Rng::seed_from_u64(123),
        false,
    )
    .unwrap();
    assert_eq!(rec[0].seed, 123);
    assert_eq!(rec[0].samples_drawn, direct.counters.samples_drawn);
    assert_eq!(rec[0].collision_checks, direct.counters.collision_checks);
    assert_eq!(rec[0].nodes_added, direct.counters.nodes_added);
    assert_eq!(rec[0].success, direct.success);
}

#[test]
fn train_is_reproducible_and_feeds_eval_and_dist_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_train_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["train", "--config", s(&cfg), "--seed", "5", "--out", s(&a)]);
    ok(&["train", "--config", s(&cfg), "--seed", "5", "--out", s(&b)]);
    for f in ["training_log.csv", "policy.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let ckpts = std::fs::read_dir(a.join("checkpoints")).unwrap().count();
    assert_eq!(ckpts, 4);
    let log = std::fs::read_to_string(a.join("training_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 4);

    let policy = a.join("policy.json");
    let ecfg = eval_config(
        dir.path(),
        "learned.json",
        PolicySpec::Checkpoint {
            path: policy.clone(),
        },
        3,
    );
    ok(&[
        "eval",
        "--config",
        s(&ecfg),
        "--out",
        s(&dir.path().join("e")),
    ]);

    let grid = dir.path().join("grid.csv");
    ok(&[
        "dist-grid",
        "--policy",
        s(&policy),
        "--resolution",
        "20",
        "--out",
        s(&grid),
    ]);
    let mut rdr = csv::Reader::from_path(&grid).unwrap();
    let probs: Vec<f64> = rdr
        .records()
        .map(|r| r.unwrap()[2].parse().unwrap())
        .collect();
    assert_eq!(probs.len(), 400);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn compare_against_itself_is_one_hundred_percent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = eval_config(dir.path(), "eval.json", PolicySpec::AlwaysAccept, 3);
    let out = dir.path().join("e");
    ok(&["eval", "--config", s(&cfg), "--out", s(&out)]);
    let summary = out.join("summary.json");
    let cmp = dir.path().join("cmp.json");
    let printed = ok(&[
        "compare",
        "--learned",
        s(&summary),
        "--baseline",
        s(&summary),
        "--out",
        s(&cmp),
    ]);
    assert!(String::from_utf8_lossy(&printed.stdout).contains("collision_checks"));
    let v: Value = serde_json::from_slice(&std::fs::read(&cmp).unwrap()).unwrap();
    for row in v["rows"].as_array().unwrap() {
        if let Some(r) = row["ratio_percent"].as_f64() {
            assert!((r - 100.0).abs() < 1e-9, "{row}");
        }
    }
}

#[test]
fn failures_exit_nonzero_with_json_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = run(&[
        "eval",
        "--config",
        s(&missing),
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "io");

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"planner": "rrt_connect", "environment": {"type": "flytrap"}, "policy": {"type": "always_accept"}, "bogus": 1}"#)
        .unwrap();
    let out = run(&[
        "eval",
        "--config",
        s(&bad),
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().len() > 0);

    let env = dir.path().join("env.json");
    std::fs::write(
        &env,
        r#"{"name": "e", "bounds": [0, 0, 10, 10], "obstacles": [[5, 5, 20, 1]]}"#,
    )
    .unwrap();
    let cfg = ExperimentConfig {
        planner: PlannerKind::RrtConnect,
        environment: EnvSpec::File {
            path: env.clone(),
            start: Point::new(1.0, 1.0),
            goal: Point::new(9.0, 9.0),
        },
        policy: PolicySpec::AlwaysAccept,
        trials: 1,
        base_seed: 0,
        planner_config: PlannerConfig::default(),
    };
    let cpath = dir.path().join("file_env.json");
    write_json(&cpath, &cfg);
    let out = run(&[
        "eval",
        "--config",
        s(&cpath),
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_json(&out)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("obstacles[0]"));

    let out = run(&["eval", "--trials", "many"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "usage");
}
