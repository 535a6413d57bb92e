//! Instrumented sampling-based planners.
//!
//! Every planner draws from the base distribution, asks the sampling policy
//! to accept or reject the draw, and only then spends tree work on it. Each
//! drawn sample is one decision step; with `record` set, each step produces
//! one [`Transition`] with the nodes and collision checks it caused.

mod birrt;
mod est;
mod kinodynamic;
mod rrt;
pub mod tree;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::PendulumModel;
use crate::error::{Error, Result};
use crate::geometry::{segment_in_collision, CountedEnv, Environment, Point, DEFAULT_RESOLUTION};
use crate::policy::{Decision, FeatureMap, FeatureVector, SamplingPolicy};
use crate::training::Transition;

pub use birrt::plan_birrt;
pub use est::{est_weight, plan_est, select_by_inverse_weight, EstWeights};
pub use kinodynamic::plan_kinodynamic_rrt;
pub use rrt::plan_rrt_connect;
pub use tree::{Node, SearchTree};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub step_size: f64,
    pub goal_bias: f64,
    pub goal_tolerance: f64,
    pub sample_budget: u64,
    pub est_radius: f64,
    pub resolution: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            step_size: 2.0,
            goal_bias: 0.05,
            goal_tolerance: 1.0,
            sample_budget: 50_000,
            est_radius: 5.0,
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        // A bias of exactly 1 (goal-only sampling) is allowed for smoke tests.
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return Err(Error::InvalidParams("goal_bias must be in [0, 1]".into()));
        }
        if !(self.step_size > 0.0 && self.resolution > 0.0 && self.est_radius > 0.0) {
            return Err(Error::InvalidParams(
                "step_size, resolution and est_radius must be > 0".into(),
            ));
        }
        if self.sample_budget == 0 {
            return Err(Error::InvalidParams("sample_budget must be > 0".into()));
        }
        if !(self.goal_tolerance >= 0.0) {
            return Err(Error::InvalidParams("goal_tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub samples_drawn: u64,
    pub collision_checks: u64,
    pub nodes_added: u64,
    pub steering_calls: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanResult<C> {
    pub success: bool,
    pub path: Vec<C>,
    pub path_length: f64,
    pub counters: Counters,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub transitions: Vec<Transition>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    RrtConnect,
    Birrt,
    Est,
    KinodynamicRrt,
}

impl PlannerKind {
    pub fn feature_map(self) -> FeatureMap {
        match self {
            PlannerKind::RrtConnect => FeatureMap::Rrt,
            PlannerKind::Birrt => FeatureMap::Birrt,
            PlannerKind::Est => FeatureMap::Est,
            PlannerKind::KinodynamicRrt => FeatureMap::Pendulum,
        }
    }
}

/// A planning query: a 2D environment with endpoints, or the pendulum.
#[derive(Clone, Debug, PartialEq)]
pub enum Problem {
    Geometric {
        env: Environment,
        start: Point,
        goal: Point,
    },
    Pendulum(PendulumModel),
}

impl Problem {
    pub fn name(&self) -> &str {
        match self {
            Problem::Geometric { env, .. } => &env.name,
            Problem::Pendulum(_) => "pendulum",
        }
    }
}

/// Planner result with the path reduced to its validity and length.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutcome {
    pub success: bool,
    /// Whether an independent re-check of the returned path passed. Always
    /// false for failed runs.
    pub path_valid: bool,
    pub path_length: f64,
    pub counters: Counters,
    pub transitions: Vec<Transition>,
}

/// Runs `kind` on `problem`, auditing any returned path.
pub fn run_planner<R: Rng + ?Sized>(
    kind: PlannerKind,
    problem: &Problem,
    policy: &SamplingPolicy,
    cfg: &PlannerConfig,
    rng: &mut R,
    record: bool,
) -> Result<PlanOutcome> {
    match (kind, problem) {
        (PlannerKind::KinodynamicRrt, Problem::Pendulum(model)) => {
            let r = plan_kinodynamic_rrt(model, policy, cfg, rng, record)?;
            let path_valid = r.success
                && r.path.first() == Some(&model.start())
                && r.path.last().is_some_and(|s| model.in_goal(s));
            Ok(PlanOutcome {
                success: r.success,
                path_valid,
                path_length: r.path_length,
                counters: r.counters,
                transitions: r.transitions,
            })
        }
        (PlannerKind::KinodynamicRrt, _) | (_, Problem::Pendulum(_)) => Err(Error::InvalidParams(
            format!("planner {kind:?} cannot solve problem {}", problem.name()),
        )),
        (_, Problem::Geometric { env, start, goal }) => {
            let (start, goal) = (*start, *goal);
            let r = match kind {
                PlannerKind::RrtConnect => {
                    plan_rrt_connect(env, start, goal, policy, cfg, rng, record)?
                }
                PlannerKind::Birrt => plan_birrt(env, start, goal, policy, cfg, rng, record)?,
                _ => plan_est(env, start, goal, policy, cfg, rng, record)?,
            };
            let path_valid = r.success
                && path_is_valid(env, &r.path, cfg.resolution)
                && r.path.first() == Some(&start)
                && r.path
                    .last()
                    .is_some_and(|p| p.dist(goal) <= cfg.goal_tolerance);
            Ok(PlanOutcome {
                success: r.success,
                path_valid,
                path_length: r.path_length,
                counters: r.counters,
                transitions: r.transitions,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtendResult {
    Reached(usize),
    Advanced(usize),
    Trapped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConnectResult {
    Reached(usize),
    /// Last node reached before being blocked (the start node if none was added).
    Trapped(usize),
}

/// One step of at most `step_size` from node `from` toward `target`.
pub fn extend(
    tree: &mut SearchTree<Point>,
    from: usize,
    target: Point,
    cfg: &PlannerConfig,
    env: &Environment,
    counters: &mut Counters,
) -> ExtendResult {
    let q = tree.node(from).config;
    let d = q.dist(target);
    if d == 0.0 {
        return ExtendResult::Reached(from);
    }
    let reaches = d <= cfg.step_size;
    let new = if reaches {
        target
    } else {
        q + (target - q) * (cfg.step_size / d)
    };
    let mut oracle = CountedEnv::new(env);
    let blocked = segment_in_collision(&mut oracle, q, new, cfg.resolution);
    counters.collision_checks += oracle.checks;
    if blocked {
        return ExtendResult::Trapped;
    }
    let idx = tree.push(new, from, env.distance_to_obstacles(new));
    counters.nodes_added += 1;
    if reaches {
        ExtendResult::Reached(idx)
    } else {
        ExtendResult::Advanced(idx)
    }
}

/// Repeated [`extend`] from `from` until the target is reached or blocked.
pub fn connect_from(
    tree: &mut SearchTree<Point>,
    from: usize,
    target: Point,
    cfg: &PlannerConfig,
    env: &Environment,
    counters: &mut Counters,
) -> ConnectResult {
    let mut cur = from;
    loop {
        match extend(tree, cur, target, cfg, env, counters) {
            ExtendResult::Reached(i) => return ConnectResult::Reached(i),
            ExtendResult::Advanced(i) => cur = i,
            ExtendResult::Trapped => return ConnectResult::Trapped(cur),
        }
    }
}

/// [`connect_from`] starting at the node nearest to `target`.
pub fn connect(
    tree: &mut SearchTree<Point>,
    target: Point,
    cfg: &PlannerConfig,
    env: &Environment,
    counters: &mut Counters,
) -> ConnectResult {
    let (near, _) = tree.nearest_point(target);
    connect_from(tree, near, target, cfg, env, counters)
}

/// Draw from the base distribution: the goal with probability `goal_bias`,
/// otherwise uniform over the bounds.
pub(crate) fn sample_uniform_or_goal<R: Rng + ?Sized>(
    env: &Environment,
    goal: Point,
    goal_bias: f64,
    rng: &mut R,
) -> Point {
    if goal_bias > 0.0 && rng.gen::<f64>() < goal_bias {
        return goal;
    }
    let b = env.bounds;
    Point::new(rng.gen_range(b.x..b.x_max()), rng.gen_range(b.y..b.y_max()))
}

/// Uncounted re-check of every edge of a path.
pub fn path_is_valid(env: &Environment, path: &[Point], resolution: f64) -> bool {
    struct Free<'a>(&'a Environment);
    impl crate::geometry::CollisionOracle for Free<'_> {
        fn point_in_collision(&mut self, q: Point) -> bool {
            self.0.point_in_collision(q)
        }
    }
    let mut o = Free(env);
    match path {
        [] => false,
        [p] => !env.point_in_collision(*p),
        _ => path
            .windows(2)
            .all(|w| !segment_in_collision(&mut o, w[0], w[1], resolution)),
    }
}

pub fn polyline_length(path: &[Point]) -> f64 {
    path.windows(2).map(|w| w[0].dist(w[1])).sum()
}

pub(crate) fn check_endpoints(env: &Environment, start: Point, goal: Point) -> Result<()> {
    if env.point_in_collision(start) {
        return Err(Error::InvalidInput(format!(
            "start ({}, {}) is in collision",
            start.x, start.y
        )));
    }
    if env.point_in_collision(goal) {
        return Err(Error::InvalidInput(format!(
            "goal ({}, {}) is in collision",
            goal.x, goal.y
        )));
    }
    Ok(())
}

pub(crate) fn ensure_feature_map(policy: &SamplingPolicy, expected: FeatureMap) -> Result<()> {
    if policy.feature_map != expected {
        return Err(Error::PolicyMismatch(format!(
            "policy was built for {:?} features, planner produces {:?}",
            policy.feature_map, expected
        )));
    }
    Ok(())
}

/// Appends one decision step when recording.
pub(crate) fn record_step(
    out: &mut Vec<Transition>,
    record: bool,
    features: FeatureVector,
    decision: Decision,
    before: &Counters,
    after: &Counters,
) {
    if record {
        out.push(Transition::new(
            features,
            decision.action,
            decision.p_accept,
            after.nodes_added - before.nodes_added,
            after.collision_checks - before.collision_checks,
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;

    fn open() -> Environment {
        Environment::new("open", Rect::new(0.0, 0.0, 50.0, 50.0), vec![]).unwrap()
    }

    fn walled() -> Environment {
        Environment::new(
            "wall",
            Rect::new(0.0, 0.0, 50.0, 50.0),
            vec![Rect::new(11.0, 0.0, 2.0, 50.0)],
        )
        .unwrap()
    }

    #[test]
    fn extend_cases() {
        let cfg = PlannerConfig::default();
        let env = open();
        let mut c = Counters::default();
        let start = Point::new(10.0, 10.0);
        let mut t = SearchTree::new(start, env.distance_to_obstacles(start));
        assert_eq!(
            extend(&mut t, 0, Point::new(11.0, 11.0), &cfg, &env, &mut c),
            ExtendResult::Reached(1)
        );
        assert_eq!(c.nodes_added, 1);

        let mut t = SearchTree::new(start, 0.0);
        let target = Point::new(
            10.0 + 2.5 * cfg.step_size * 0.6,
            10.0 + 2.5 * cfg.step_size * 0.8,
        );
        let r = extend(&mut t, 0, target, &cfg, &env, &mut c);
        assert_eq!(r, ExtendResult::Advanced(1));
        let new = t.node(1).config;
        assert!((new.dist(start) - cfg.step_size).abs() < 1e-12);
        assert!((new.x - (10.0 + 0.6 * cfg.step_size)).abs() < 1e-12);
        assert!((new.y - (10.0 + 0.8 * cfg.step_size)).abs() < 1e-12);
        assert_eq!(t.node(1).clearance, env.distance_to_obstacles(new));

        let env = walled();
        let mut c = Counters::default();
        let mut t = SearchTree::new(start, 0.0);
        assert_eq!(
            extend(&mut t, 0, Point::new(12.0, 10.0), &cfg, &env, &mut c),
            ExtendResult::Trapped
        );
        assert_eq!(c.nodes_added, 0);
        assert_eq!(t.len(), 1);
        assert!(c.collision_checks > 0);
    }

    #[test]
    fn connect_cases() {
        let cfg = PlannerConfig::default();
        let env = open();
        let start = Point::new(5.0, 5.0);
        let mut c = Counters::default();
        let mut t = SearchTree::new(start, 0.0);
        let r = connect(
            &mut t,
            Point::new(5.0 + 5.0 * cfg.step_size, 5.0),
            &cfg,
            &env,
            &mut c,
        );
        assert_eq!(r, ConnectResult::Reached(5));
        assert_eq!(c.nodes_added, 5);

        let mut c = Counters::default();
        assert_eq!(
            connect(&mut t, start, &cfg, &env, &mut c),
            ConnectResult::Reached(0)
        );
        assert_eq!(c.nodes_added, 0);

        let env = walled();
        let start = Point::new(10.5, 10.0);
        let mut t = SearchTree::new(start, 0.0);
        let mut c = Counters::default();
        assert_eq!(
            connect(&mut t, Point::new(30.0, 10.0), &cfg, &env, &mut c),
            ConnectResult::Trapped(0)
        );
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn path_validation() {
        let env = walled();
        assert!(path_is_valid(
            &env,
            &[Point::new(1.0, 1.0), Point::new(5.0, 40.0)],
            0.5
        ));
        assert!(!path_is_valid(
            &env,
            &[Point::new(1.0, 1.0), Point::new(30.0, 1.0)],
            0.5
        ));
        assert!(!path_is_valid(&env, &[], 0.5));
        assert_eq!(
            polyline_length(&[
                Point::new(0.0, 0.0),
                Point::new(3.0, 4.0),
                Point::new(3.0, 5.0)
            ]),
            6.0
        );
    }

    #[test]
    fn config_validation() {
        assert!(PlannerConfig::default().validate().is_ok());
        assert!(PlannerConfig {
            goal_bias: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(PlannerConfig {
            sample_budget: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(PlannerConfig {
            step_size: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
