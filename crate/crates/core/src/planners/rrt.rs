use rand::Rng;

use super::{
    check_endpoints, connect_from, polyline_length, record_step, sample_uniform_or_goal, Counters,
    PlanResult, PlannerConfig, SearchTree,
};
use crate::error::Result;
use crate::geometry::{Environment, Point};
use crate::policy::{features_rrt, Action, FeatureMap, SamplingPolicy};

/// Single-tree RRT with the Connect extension. Accepted samples are
/// connected to from their nearest node; the run succeeds as soon as a node
/// lands within `goal_tolerance` of the goal.
pub fn plan_rrt_connect<R: Rng + ?Sized>(
    env: &Environment,
    start: Point,
    goal: Point,
    policy: &SamplingPolicy,
    cfg: &PlannerConfig,
    rng: &mut R,
    record: bool,
) -> Result<PlanResult<Point>> {
    cfg.validate()?;
    policy.validate()?;
    check_endpoints(env, start, goal)?;
    super::ensure_feature_map(policy, FeatureMap::Rrt)?;

    let mut tree = SearchTree::new(start, env.distance_to_obstacles(start));
    let mut counters = Counters::default();
    let mut transitions = Vec::new();

    if start.dist(goal) <= cfg.goal_tolerance {
        return Ok(PlanResult {
            success: true,
            path: vec![start],
            path_length: 0.0,
            counters,
            transitions,
        });
    }

    let mut reached = None;
    while counters.samples_drawn < cfg.sample_budget {
        let x = sample_uniform_or_goal(env, goal, cfg.goal_bias, rng);
        counters.samples_drawn += 1;
        let (features, ctx, near) = features_rrt(&tree, x);
        let decision = policy.decide(&features, Some(&ctx), rng)?;
        let before = counters;
        if decision.action == Action::Accept {
            let first_new = tree.len();
            connect_from(&mut tree, near, x, cfg, env, &mut counters);
            reached = (first_new..tree.len())
                .find(|&i| tree.node(i).config.dist(goal) <= cfg.goal_tolerance);
        }
        record_step(
            &mut transitions,
            record,
            features,
            decision,
            &before,
            &counters,
        );
        if reached.is_some() {
            break;
        }
    }

    Ok(match reached {
        Some(i) => {
            let path = tree.path_to(i);
            PlanResult {
                success: true,
                path_length: polyline_length(&path),
                path,
                counters,
                transitions,
            }
        }
        None => PlanResult {
            success: false,
            path: Vec::new(),
            path_length: 0.0,
            counters,
            transitions,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_flytrap, FlytrapParams, Rect};
    use crate::planners::path_is_valid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn open() -> Environment {
        Environment::new("open", Rect::new(0.0, 0.0, 50.0, 50.0), vec![]).unwrap()
    }

    #[test]
    fn goal_only_sampling_draws_a_straight_line() {
        let env = open();
        let cfg = PlannerConfig {
            goal_bias: 1.0,
            ..Default::default()
        };
        let policy = SamplingPolicy::always_accept(FeatureMap::Rrt);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s, g) = (Point::new(5.0, 5.0), Point::new(45.0, 35.0));
        let r = plan_rrt_connect(&env, s, g, &policy, &cfg, &mut rng, true).unwrap();
        assert!(r.success);
        assert_eq!(r.counters.samples_drawn, 1);
        assert_eq!(r.transitions.len(), 1);
        assert_eq!(*r.path.first().unwrap(), s);
        assert_eq!(*r.path.last().unwrap(), g);
        assert!((r.path_length - s.dist(g)).abs() < 1e-9);
    }

    #[test]
    fn colliding_endpoints_are_rejected() {
        let env = make_flytrap(&FlytrapParams::train()).unwrap();
        let policy = SamplingPolicy::always_accept(FeatureMap::Rrt);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let wall = env.obstacles[0].center();
        assert!(plan_rrt_connect(
            &env,
            wall,
            Point::new(5.0, 5.0),
            &policy,
            &PlannerConfig::default(),
            &mut rng,
            false
        )
        .is_err());
        assert!(plan_rrt_connect(
            &env,
            Point::new(5.0, 5.0),
            wall,
            &policy,
            &PlannerConfig::default(),
            &mut rng,
            false
        )
        .is_err());
    }

    #[test]
    fn flytrap_paths_are_valid_and_deterministic() {
        let p = FlytrapParams::train();
        let env = make_flytrap(&p).unwrap();
        let cfg = PlannerConfig::default();
        let policy = SamplingPolicy::always_accept(FeatureMap::Rrt);
        for seed in 0..5 {
            let run = |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                plan_rrt_connect(
                    &env,
                    p.default_start(),
                    p.default_goal(),
                    &policy,
                    &cfg,
                    &mut rng,
                    true,
                )
                .unwrap()
            };
            let r = run(seed);
            assert!(r.success);
            assert!(path_is_valid(&env, &r.path, cfg.resolution));
            assert!(r.path.last().unwrap().dist(p.default_goal()) <= cfg.goal_tolerance);
            assert_eq!(r.transitions.len() as u64, r.counters.samples_drawn);
            let nodes: u64 = r.transitions.iter().map(|t| t.nodes_added).sum();
            let checks: u64 = r.transitions.iter().map(|t| t.collision_checks).sum();
            assert_eq!(nodes, r.counters.nodes_added);
            assert_eq!(checks, r.counters.collision_checks);
            assert_eq!(r, run(seed));
        }
    }

    #[test]
    fn budget_is_respected() {
        let p = FlytrapParams::train();
        let env = make_flytrap(&p).unwrap();
        let cfg = PlannerConfig {
            sample_budget: 30,
            goal_bias: 0.0,
            ..Default::default()
        };
        let policy = SamplingPolicy::always_accept(FeatureMap::Rrt);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = plan_rrt_connect(
            &env,
            p.default_start(),
            p.default_goal(),
            &policy,
            &cfg,
            &mut rng,
            false,
        )
        .unwrap();
        assert!(!r.success);
        assert!(r.path.is_empty());
        assert_eq!(r.counters.samples_drawn, 30);
    }
}
