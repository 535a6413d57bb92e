use rand::Rng;

use super::{ensure_feature_map, record_step, Counters, PlanResult, PlannerConfig, SearchTree};
use crate::dynamics::{PendulumModel, PendulumState, Steering};
use crate::error::Result;
use crate::policy::{features_pendulum, Action, FeatureMap, SamplingPolicy};

/// RRT over pendulum states. Accepted samples pick their nearest node under
/// [`PendulumModel::distance`] and extend it with one random control; the
/// resulting state is always added since the state space has no obstacles.
/// `step_size`, `est_radius` and `resolution` are unused here.
pub fn plan_kinodynamic_rrt<R: Rng + ?Sized>(
    model: &PendulumModel,
    policy: &SamplingPolicy,
    cfg: &PlannerConfig,
    rng: &mut R,
    record: bool,
) -> Result<PlanResult<PendulumState>> {
    model.validate()?;
    cfg.validate()?;
    policy.validate()?;
    ensure_feature_map(policy, FeatureMap::Pendulum)?;

    let start = model.start();
    let goal = model.goal();
    let mut tree = SearchTree::new(start, 0.0);
    let mut steering = Steering::new(model);
    let mut counters = Counters::default();
    let mut transitions = Vec::new();

    let mut reached = model.in_goal(&start).then_some(0);
    while reached.is_none() && counters.samples_drawn < cfg.sample_budget {
        let x = if cfg.goal_bias > 0.0 && rng.gen::<f64>() < cfg.goal_bias {
            goal
        } else {
            PendulumState::new(
                rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                rng.gen_range(-model.omega_max..=model.omega_max),
            )
        };
        counters.samples_drawn += 1;
        let features = features_pendulum(&x, &goal);
        let decision = policy.decide(&features, None, rng)?;
        let before = counters;
        if decision.action == Action::Accept {
            let near = tree.nearest(&x, |a, b| model.distance(a, b));
            let (torque, duration) = model.sample_control(rng);
            let from = tree.node(near).config;
            let next = steering.propagate(&from, torque, duration)?;
            counters.steering_calls = steering.calls;
            let i = tree.push(next, near, 0.0);
            counters.nodes_added += 1;
            if model.in_goal(&next) {
                reached = Some(i);
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
    }

    Ok(match reached {
        Some(i) => {
            let path = tree.path_to(i);
            let path_length = path.windows(2).map(|w| model.distance(&w[0], &w[1])).sum();
            PlanResult {
                success: true,
                path,
                path_length,
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
