//! Seeded evaluation of planners and policies, and the file formats the CLI
//! reads and writes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::PendulumModel;
use crate::error::{Error, Result};
use crate::geometry::{make_flytrap, Environment, FlytrapParams, Point};
use crate::planners::{run_planner, PlannerConfig, PlannerKind, Problem};
use crate::policy::SamplingPolicy;
use crate::training::{LogRow, PlannerTask, RewardWeights, TrainConfig};

/// Where an experiment's world comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    /// Environment JSON file; start and goal are required.
    File {
        path: PathBuf,
        start: Point,
        goal: Point,
    },
    /// Generated flytrap with its default start and goal unless overridden.
    Flytrap {
        #[serde(flatten)]
        params: FlytrapParams,
        #[serde(default)]
        start: Option<Point>,
        #[serde(default)]
        goal: Option<Point>,
    },
    Pendulum {
        #[serde(default)]
        model: PendulumModel,
    },
}

impl EnvSpec {
    pub fn train_flytrap() -> Self {
        EnvSpec::Flytrap {
            params: FlytrapParams::train(),
            start: None,
            goal: None,
        }
    }

    pub fn test_flytrap() -> Self {
        EnvSpec::Flytrap {
            params: FlytrapParams::test(),
            start: None,
            goal: None,
        }
    }

    /// Resolves relative file paths against `base`.
    pub fn problem(&self, base: &Path) -> Result<Problem> {
        Ok(match self {
            EnvSpec::File { path, start, goal } => Problem::Geometric {
                env: Environment::load(&base.join(path))?,
                start: *start,
                goal: *goal,
            },
            EnvSpec::Flytrap {
                params,
                start,
                goal,
            } => Problem::Geometric {
                env: make_flytrap(params)?,
                start: start.unwrap_or(params.default_start()),
                goal: goal.unwrap_or(params.default_goal()),
            },
            EnvSpec::Pendulum { model } => {
                model.validate()?;
                Problem::Pendulum(*model)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Checkpoint { path: PathBuf },
    AlwaysAccept,
    DynamicDomain,
    BallTree,
}

impl PolicySpec {
    pub fn load(&self, planner: PlannerKind, base: &Path) -> Result<SamplingPolicy> {
        let map = planner.feature_map();
        match self {
            PolicySpec::Checkpoint { path } => {
                let p = SamplingPolicy::load(&base.join(path))?;
                if p.feature_map != map {
                    return Err(Error::PolicyMismatch(format!(
                        "checkpoint was trained for {:?}, planner {planner:?} needs {map:?}",
                        p.feature_map
                    )));
                }
                Ok(p)
            }
            PolicySpec::AlwaysAccept => Ok(SamplingPolicy::always_accept(map)),
            PolicySpec::DynamicDomain => SamplingPolicy::dynamic_domain(map),
            PolicySpec::BallTree => SamplingPolicy::ball_tree(map),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub planner: PlannerKind,
    pub environment: EnvSpec,
    pub policy: PolicySpec,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub planner_config: PlannerConfig,
}

fn default_trials() -> usize {
    100
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParams("trials must be >= 1".into()));
        }
        self.planner_config.validate()
    }
}

/// One planner run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub samples_drawn: u64,
    pub collision_checks: u64,
    pub nodes_added: u64,
    pub steering_calls: u64,
    /// Empty for failed runs.
    pub path_length: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    /// Mean and sample standard deviation (0 for fewer than two values).
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub planner: PlannerKind,
    pub environment: String,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub samples_drawn: MetricSummary,
    pub collision_checks: MetricSummary,
    pub nodes_added: MetricSummary,
    pub steering_calls: MetricSummary,
    /// Over successful runs only.
    pub path_length: MetricSummary,
    /// Successful runs whose path failed the independent re-check; these
    /// are counted as failures.
    pub audit_failures: usize,
    pub wall_time_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunStats {
    pub records: Vec<TrialRecord>,
    pub summary: Summary,
}

impl RunStats {
    pub fn from_records(
        planner: PlannerKind,
        environment: &str,
        records: Vec<TrialRecord>,
        audit_failures: usize,
        wall_time_seconds: f64,
    ) -> Self {
        let successes = records.iter().filter(|r| r.success).count();
        let m = |f: fn(&TrialRecord) -> u64| MetricSummary::of(records.iter().map(|r| f(r) as f64));
        let summary = Summary {
            planner,
            environment: environment.to_string(),
            trials: records.len(),
            successes,
            success_rate: successes as f64 / records.len().max(1) as f64,
            samples_drawn: m(|r| r.samples_drawn),
            collision_checks: m(|r| r.collision_checks),
            nodes_added: m(|r| r.nodes_added),
            steering_calls: m(|r| r.steering_calls),
            path_length: MetricSummary::of(records.iter().filter_map(|r| r.path_length)),
            audit_failures,
            wall_time_seconds,
        };
        Self { records, summary }
    }
}

/// Runs `trials` planner calls with seeds `base_seed + i`.
pub fn evaluate_policy(
    planner: PlannerKind,
    problem: &Problem,
    policy: &SamplingPolicy,
    cfg: &PlannerConfig,
    trials: usize,
    base_seed: u64,
) -> Result<RunStats> {
    if trials == 0 {
        return Err(Error::InvalidParams("trials must be >= 1".into()));
    }
    let t0 = Instant::now();
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed.wrapping_add(i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_planner(planner, problem, policy, cfg, &mut rng, false).map(|o| (i, seed, o))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut audit_failures = 0;
    let records = outcomes
        .into_iter()
        .map(|(trial, seed, o)| {
            let success = o.success && o.path_valid;
            audit_failures += (o.success && !o.path_valid) as usize;
            TrialRecord {
                trial,
                seed,
                success,
                samples_drawn: o.counters.samples_drawn,
                collision_checks: o.counters.collision_checks,
                nodes_added: o.counters.nodes_added,
                steering_calls: o.counters.steering_calls,
                path_length: success.then_some(o.path_length),
            }
        })
        .collect();
    Ok(RunStats::from_records(
        planner,
        problem.name(),
        records,
        audit_failures,
        t0.elapsed().as_secs_f64(),
    ))
}

/// Evaluates an experiment; relative paths resolve against `base`.
pub fn evaluate(cfg: &ExperimentConfig, base: &Path) -> Result<RunStats> {
    cfg.validate()?;
    let problem = cfg.environment.problem(base)?;
    let policy = cfg.policy.load(cfg.planner, base)?;
    evaluate_policy(
        cfg.planner,
        &problem,
        &policy,
        &cfg.planner_config,
        cfg.trials,
        cfg.base_seed,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub metric: String,
    pub learned: f64,
    pub baseline: f64,
    /// `100 * learned / baseline`; absent when the baseline mean is 0.
    pub ratio_percent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub planner: PlannerKind,
    pub environment: String,
    pub rows: Vec<RatioRow>,
    pub learned_success_rate: f64,
    pub baseline_success_rate: f64,
}

impl Comparison {
    pub fn ratio(&self, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric)
            .and_then(|r| r.ratio_percent)
    }
}

/// Percent ratios of means, learned over baseline.
pub fn compare(learned: &Summary, baseline: &Summary) -> Result<Comparison> {
    if learned.planner != baseline.planner || learned.environment != baseline.environment {
        return Err(Error::InvalidInput(format!(
            "cannot compare {:?} on {} with {:?} on {}",
            learned.planner, learned.environment, baseline.planner, baseline.environment
        )));
    }
    let row = |metric: &str, l: f64, b: f64| RatioRow {
        metric: metric.to_string(),
        learned: l,
        baseline: b,
        ratio_percent: (b != 0.0).then(|| 100.0 * l / b),
    };
    Ok(Comparison {
        planner: learned.planner,
        environment: learned.environment.clone(),
        rows: vec![
            row(
                "samples_drawn",
                learned.samples_drawn.mean,
                baseline.samples_drawn.mean,
            ),
            row(
                "collision_checks",
                learned.collision_checks.mean,
                baseline.collision_checks.mean,
            ),
            row(
                "nodes_added",
                learned.nodes_added.mean,
                baseline.nodes_added.mean,
            ),
            row(
                "steering_calls",
                learned.steering_calls.mean,
                baseline.steering_calls.mean,
            ),
            row(
                "path_length",
                learned.path_length.mean,
                baseline.path_length.mean,
            ),
        ],
        learned_success_rate: learned.success_rate,
        baseline_success_rate: baseline.success_rate,
    })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials_csv(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Training job as read from a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainJob {
    pub planner: PlannerKind,
    pub environments: Vec<EnvSpec>,
    #[serde(default = "TrainJob::default_planner_config")]
    pub planner_config: PlannerConfig,
    #[serde(default)]
    pub reward_weights: RewardWeights,
    #[serde(default)]
    pub train: TrainConfig,
}

impl TrainJob {
    /// Episode cap used while training.
    pub const EPISODE_CAP: u64 = 20_000;

    fn default_planner_config() -> PlannerConfig {
        PlannerConfig {
            sample_budget: Self::EPISODE_CAP,
            ..Default::default()
        }
    }

    pub fn tasks(&self, base: &Path) -> Result<Vec<PlannerTask>> {
        if self.environments.is_empty() {
            return Err(Error::InvalidParams(
                "at least one training environment is required".into(),
            ));
        }
        self.planner_config.validate()?;
        self.reward_weights.validate()?;
        self.environments
            .iter()
            .map(|e| {
                Ok(PlannerTask {
                    planner: self.planner,
                    problem: e.problem(base)?,
                    config: self.planner_config,
                    weights: self.reward_weights,
                })
            })
            .collect()
    }
}

/// Training log rows restricted to the columns of the CSV log.
pub fn training_log_csv(path: &Path, log: &[LogRow]) -> Result<()> {
    write_csv(path, log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(checks: f64, success_rate: f64) -> Summary {
        let m = |mean| MetricSummary { mean, std: 0.0 };
        Summary {
            planner: PlannerKind::RrtConnect,
            environment: "e".into(),
            trials: 10,
            successes: (success_rate * 10.0) as usize,
            success_rate,
            samples_drawn: m(100.0),
            collision_checks: m(checks),
            nodes_added: m(50.0),
            steering_calls: m(0.0),
            path_length: m(80.0),
            audit_failures: 0,
            wall_time_seconds: 0.0,
        }
    }

    #[test]
    fn ratios() {
        let c = compare(&summary(200.0, 0.9), &summary(1000.0, 1.0)).unwrap();
        assert_eq!(c.ratio("collision_checks"), Some(20.0));
        assert_eq!(c.ratio("samples_drawn"), Some(100.0));
        assert_eq!(c.ratio("steering_calls"), None);
        let mut other = summary(1.0, 1.0);
        other.environment = "f".into();
        assert!(compare(&summary(1.0, 1.0), &other).is_err());
    }

    #[test]
    fn metric_summary() {
        let s = MetricSummary::of([1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(MetricSummary::of([]).mean, 0.0);
    }

    #[test]
    fn spec_parsing() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"planner": "rrt_connect",
                "environment": {"type": "flytrap", "arena_side": 100, "trap_side": 40,
                                "wall_thickness": 2, "tunnel_width": 4, "tunnel_side": "right",
                                "trap_center": {"x": 50, "y": 50}},
                "policy": {"type": "dynamic_domain"}, "trials": 3}"#,
        )
        .unwrap();
        assert_eq!(cfg.environment, EnvSpec::train_flytrap());
        assert_eq!(cfg.planner_config, PlannerConfig::default());
        let bad = r#"{"planner": "rrt_connect", "environment": {"type": "pendulum"}, "policy": {"type": "always_accept"}, "tirals": 3}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err());
    }
}
