use std::f64::consts::TAU;

use rand::Rng;

use super::{
    check_endpoints, ensure_feature_map, polyline_length, record_step, Counters, PlanResult,
    PlannerConfig, SearchTree,
};
use crate::error::Result;
use crate::geometry::{segment_in_collision, CountedEnv, Environment, Point};
use crate::policy::{features_est, Action, FeatureMap, SamplingPolicy};

/// Number of tree nodes within `radius` of node `i`, the node itself included.
pub fn est_weight(tree: &SearchTree<Point>, i: usize, radius: f64) -> u64 {
    let q = tree.node(i).config;
    let r2 = radius * radius;
    tree.nodes()
        .iter()
        .filter(|n| {
            let d = n.config - q;
            d.x * d.x + d.y * d.y <= r2
        })
        .count() as u64
}

/// Neighbour counts kept up to date as nodes are inserted.
#[derive(Clone, Debug, PartialEq)]
pub struct EstWeights {
    radius: f64,
    counts: Vec<u64>,
}

impl EstWeights {
    pub fn new(tree: &SearchTree<Point>, radius: f64) -> Self {
        let counts = (0..tree.len())
            .map(|i| est_weight(tree, i, radius))
            .collect();
        Self { radius, counts }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Registers the most recently pushed node of `tree`.
    pub fn push_last(&mut self, tree: &SearchTree<Point>) {
        let last = tree.len() - 1;
        debug_assert_eq!(last, self.counts.len());
        let q = tree.node(last).config;
        let r2 = self.radius * self.radius;
        let mut own = 1;
        for (i, c) in self.counts.iter_mut().enumerate() {
            let d = tree.node(i).config - q;
            if d.x * d.x + d.y * d.y <= r2 {
                *c += 1;
                own += 1;
            }
        }
        self.counts.push(own);
    }
}

/// Index drawn with probability proportional to `1 / weights[i]`.
pub fn select_by_inverse_weight<R: Rng + ?Sized>(weights: &[u64], rng: &mut R) -> usize {
    assert!(!weights.is_empty());
    let total: f64 = weights.iter().map(|&w| 1.0 / w as f64).sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= 1.0 / w as f64;
        if u < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Expansive-space tree. Each decision is about the candidate node drawn
/// with probability proportional to `1 / w`; an accepted node is expanded to
/// a uniform point in the disk of radius `est_radius` around it. A new node
/// within `est_radius` of the goal also tries a straight edge to the goal.
pub fn plan_est<R: Rng + ?Sized>(
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
    ensure_feature_map(policy, FeatureMap::Est)?;

    let mut tree = SearchTree::new(start, env.distance_to_obstacles(start));
    let mut weights = EstWeights::new(&tree, cfg.est_radius);
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
        let candidate = select_by_inverse_weight(weights.counts(), rng);
        counters.samples_drawn += 1;
        let features = features_est(&tree, candidate, cfg.est_radius);
        let decision = policy.decide(&features, None, rng)?;
        let before = counters;
        if decision.action == Action::Accept {
            let from = tree.node(candidate).config;
            let r = cfg.est_radius * rng.gen::<f64>().sqrt();
            let theta = rng.gen::<f64>() * TAU;
            let q = Point::new(from.x + r * theta.cos(), from.y + r * theta.sin());
            if let Some(i) = try_edge(
                &mut tree,
                &mut weights,
                candidate,
                q,
                env,
                cfg,
                &mut counters,
            ) {
                if q.dist(goal) <= cfg.goal_tolerance {
                    reached = Some(i);
                } else if q.dist(goal) <= cfg.est_radius {
                    reached = try_edge(&mut tree, &mut weights, i, goal, env, cfg, &mut counters);
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

fn try_edge(
    tree: &mut SearchTree<Point>,
    weights: &mut EstWeights,
    from: usize,
    q: Point,
    env: &Environment,
    cfg: &PlannerConfig,
    counters: &mut Counters,
) -> Option<usize> {
    let mut oracle = CountedEnv::new(env);
    let blocked = segment_in_collision(&mut oracle, tree.node(from).config, q, cfg.resolution);
    counters.collision_checks += oracle.checks;
    if blocked {
        return None;
    }
    let i = tree.push(q, from, env.distance_to_obstacles(q));
    weights.push_last(tree);
    counters.nodes_added += 1;
    Some(i)
}
