use rand::Rng;

use super::{
    check_endpoints, connect, ensure_feature_map, extend, polyline_length, record_step,
    sample_uniform_or_goal, ConnectResult, Counters, ExtendResult, PlanResult, PlannerConfig,
    SearchTree,
};
use crate::error::Result;
use crate::geometry::{Environment, Point};
use crate::policy::{features_birrt, Action, FeatureMap, SamplingPolicy};

/// Bidirectional RRT. Trees grow from the start and from the goal and swap
/// roles after every drawn sample. The biased draw of the active tree is the
/// root of the other tree.
pub fn plan_birrt<R: Rng + ?Sized>(
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
    ensure_feature_map(policy, FeatureMap::Birrt)?;

    let mut trees = [
        SearchTree::new(start, env.distance_to_obstacles(start)),
        SearchTree::new(goal, env.distance_to_obstacles(goal)),
    ];
    let mut counters = Counters::default();
    let mut transitions = Vec::new();

    if start.dist(goal) <= cfg.goal_tolerance {
        return Ok(PlanResult {
            success: true,
            path: vec![start, goal],
            path_length: start.dist(goal),
            counters,
            transitions,
        });
    }

    let mut active = 0;
    let mut meeting = None;
    while counters.samples_drawn < cfg.sample_budget {
        let other = 1 - active;
        let peak = trees[other].node(0).config;
        let x = sample_uniform_or_goal(env, peak, cfg.goal_bias, rng);
        counters.samples_drawn += 1;
        let (features, ctx, near) = features_birrt(&trees[active], x);
        let decision = policy.decide(&features, Some(&ctx), rng)?;
        let before = counters;
        if decision.action == Action::Accept {
            let [a, b] = &mut trees;
            let (grow, join) = if active == 0 { (a, b) } else { (b, a) };
            let new = match extend(grow, near, x, cfg, env, &mut counters) {
                ExtendResult::Reached(i) | ExtendResult::Advanced(i) => Some(i),
                ExtendResult::Trapped => None,
            };
            if let Some(i) = new {
                let q = grow.node(i).config;
                if let ConnectResult::Reached(j) = connect(join, q, cfg, env, &mut counters) {
                    meeting = Some(if active == 0 { (i, j) } else { (j, i) });
                }
            }
        }
        record_step(
            &mut transitions,
            record,
            features,
            decision,
            &before,
            &counters,
        );
        if meeting.is_some() {
            break;
        }
        active = other;
    }

    Ok(match meeting {
        Some((i, j)) => {
            let mut path = trees[0].path_to(i);
            let mut tail = trees[1].path_to(j);
            tail.reverse();
            if path.last() == tail.first() {
                tail.remove(0);
            }
            path.extend(tail);
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
