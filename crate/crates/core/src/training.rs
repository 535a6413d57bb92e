//! Policy-gradient training of sampling policies.
//!
//! Each planner run is an episode whose steps are the drawn samples. Steps
//! are charged `-(w_sample + w_node * nodes + w_collision * checks)`, the
//! policy follows the likelihood-ratio gradient with a learned per-state
//! baseline, and the baseline regresses onto the returns.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Environment, Point};
use crate::nn::{Adam, Matrix, NeuralNet};
use crate::planners::{run_planner, PlannerConfig, PlannerKind, Problem, SearchTree};
use crate::policy::{
    features_rrt, Action, FeatureMap, FeatureVector, SamplingPolicy, ACCEPT, REJECT,
};

/// Lowest standard deviation used when dividing by running statistics.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub sample: f64,
    pub node: f64,
    pub collision: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            sample: 0.01,
            node: 1.0,
            collision: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.sample, self.node, self.collision]
            .iter()
            .all(|w| *w >= 0.0)
        {
            Ok(())
        } else {
            Err(Error::InvalidParams("reward weights must be >= 0".into()))
        }
    }
}

/// Raw (unnormalized) reward of one decision step.
pub fn compute_reward(nodes_added: u64, collision_checks: u64, w: &RewardWeights) -> f64 {
    -(w.sample + w.node * nodes_added as f64 + w.collision * collision_checks as f64)
}

/// One MDP step. Planners fill in the features, action and counts; rewards,
/// returns and value estimates are filled in during training.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Transition {
    pub features: FeatureVector,
    pub action: Action,
    pub p_accept: f64,
    pub nodes_added: u64,
    pub collision_checks: u64,
    pub raw_reward: f64,
    pub reward: f64,
    pub return_to_go: f64,
    pub value_estimate: f64,
}

impl Transition {
    pub fn new(
        features: FeatureVector,
        action: Action,
        p_accept: f64,
        nodes_added: u64,
        collision_checks: u64,
    ) -> Self {
        Self {
            features,
            action,
            p_accept,
            nodes_added,
            collision_checks,
            raw_reward: 0.0,
            reward: 0.0,
            return_to_go: 0.0,
            value_estimate: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Rollout {
    pub environment: String,
    pub transitions: Vec<Transition>,
    pub success: bool,
    pub samples_drawn: u64,
    pub collision_checks: u64,
    pub nodes_added: u64,
    /// Sum of raw rewards.
    pub raw_return: f64,
    /// Sum of normalized rewards; zero until [`normalize_rollout`] runs.
    pub total_return: f64,
}

impl Rollout {
    pub fn mean_p_accept(&self) -> f64 {
        if self.transitions.is_empty() {
            return 0.0;
        }
        self.transitions.iter().map(|t| t.p_accept).sum::<f64>() / self.transitions.len() as f64
    }
}

/// Running count, mean and squared-deviation sum (Welford), plus the raw
/// second moment for root-mean-square scaling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
    pub sum_sq: f64,
}

impl RunningStats {
    pub fn update(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
        self.sum_sq += x * x;
    }

    /// Population variance; 0 before any update.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn rms(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.sum_sq / self.count as f64).sqrt()
        }
    }
}

/// Adds `r` to the statistics and returns `(r - mean) / max(std, 1e-6)`.
pub fn normalize_reward(stats: &mut RunningStats, r: f64) -> f64 {
    stats.update(r);
    (r - stats.mean) / stats.std().max(STD_FLOOR)
}

/// Adds `r` to the statistics and returns `r / max(rms, 1e-6)`.
pub fn scale_reward(stats: &mut RunningStats, r: f64) -> f64 {
    stats.update(r);
    r / stats.rms().max(STD_FLOOR)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardNormalization {
    /// Subtract the running mean, divide by the running standard deviation.
    Standardize,
    /// Divide by the running root-mean-square, keeping the sign and the
    /// relative size of step costs.
    #[default]
    Scale,
    None,
}

/// Normalizes the rewards of `rollout` in order, updating `stats`.
pub fn normalize_rollout(
    rollout: &mut Rollout,
    stats: &mut RunningStats,
    mode: RewardNormalization,
) {
    for t in &mut rollout.transitions {
        t.reward = match mode {
            RewardNormalization::Standardize => normalize_reward(stats, t.raw_reward),
            RewardNormalization::Scale => scale_reward(stats, t.raw_reward),
            RewardNormalization::None => t.raw_reward,
        };
    }
    rollout.total_return = rollout.transitions.iter().map(|t| t.reward).sum();
}

/// Discounted suffix sums `R_t = sum_{k >= t} gamma^(k - t) r_k`.
pub fn discounted_returns(rewards: &[f64], discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + discount * acc;
        *o = acc;
    }
    out
}

/// Undiscounted returns of the normalized rewards of a rollout.
pub fn returns(rollout: &Rollout) -> Vec<f64> {
    let r: Vec<f64> = rollout.transitions.iter().map(|t| t.reward).collect();
    discounted_returns(&r, 1.0)
}

/// Log-probability of `action` under clamped logits, and its gradient with
/// respect to the two logits.
pub fn log_prob_and_grad(logits: &[f64], action: Action, low: f64, high: f64) -> (f64, [f64; 2]) {
    let s = 1.0 / (1.0 + (logits[REJECT] - logits[ACCEPT]).exp());
    let p = low + (high - low) * s;
    let dp = (high - low) * s * (1.0 - s);
    let (lp, d) = match action {
        Action::Accept => (p.ln(), dp / p),
        Action::Reject => ((1.0 - p).ln(), -dp / (1.0 - p)),
    };
    let mut g = [0.0; 2];
    g[ACCEPT] = d;
    g[REJECT] = -d;
    (lp, g)
}

/// `sum_i weights[i] * log pi(actions[i])` for a batch of policy outputs,
/// with the gradient of that sum with respect to the outputs.
pub fn surrogate_output_gradient(
    logits: &Matrix,
    actions: &[Action],
    weights: &[f64],
    low: f64,
    high: f64,
) -> (f64, Matrix) {
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    let mut total = 0.0;
    for i in 0..logits.rows {
        let (lp, g) = log_prob_and_grad(logits.row(i), actions[i], low, high);
        total += weights[i] * lp;
        for (o, gi) in grad.row_mut(i).iter_mut().zip(g) {
            *o = weights[i] * gi;
        }
    }
    (total, grad)
}

/// Surrogate `sum_i weights[i] * log pi(a_i | x_i)` evaluated with batch
/// statistics (running statistics untouched), and its parameter gradient.
/// Its gradient is the likelihood-ratio estimate when the weights are
/// advantages.
pub fn policy_surrogate(
    net: &NeuralNet,
    inputs: &Matrix,
    actions: &[Action],
    weights: &[f64],
    low: f64,
    high: f64,
) -> Result<(f64, Vec<f64>)> {
    let (out, cache) = net.forward_batch_stats(inputs)?;
    let (obj, g) = surrogate_output_gradient(&out, actions, weights, low, high);
    Ok((obj, net.backward(&cache, &g)?))
}

/// Squared-error loss `sum_i (V(x_i) - target_i)^2` with batch statistics,
/// and its parameter gradient.
pub fn value_loss(net: &NeuralNet, inputs: &Matrix, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (out, cache) = net.forward_batch_stats(inputs)?;
    let (loss, g) = squared_error(&out, targets);
    Ok((loss, net.backward(&cache, &g)?))
}

fn squared_error(out: &Matrix, targets: &[f64]) -> (f64, Matrix) {
    let mut g = Matrix::zeros(out.rows, 1);
    let mut loss = 0.0;
    for (i, t) in targets.iter().enumerate() {
        let d = out.row(i)[0] - t;
        loss += d * d;
        g.row_mut(i)[0] = 2.0 * d;
    }
    (loss, g)
}

/// Deterministic 64-bit seed for a stream identified by `path` under
/// `master`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(master), |h, &p| mix(h ^ mix(p)))
}

pub fn stream_rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

/// Something that produces training episodes for a policy.
pub trait TrainingTask: Sync {
    fn name(&self) -> &str;
    fn feature_map(&self) -> FeatureMap;
    /// One recorded episode with raw rewards filled in.
    fn rollout(&self, policy: &SamplingPolicy, rng: &mut ChaCha8Rng) -> Result<Rollout>;
}

/// A planner on a fixed problem, rewarded by [`compute_reward`].
#[derive(Clone, Debug, PartialEq)]
pub struct PlannerTask {
    pub planner: PlannerKind,
    pub problem: Problem,
    /// `sample_budget` doubles as the episode cap.
    pub config: PlannerConfig,
    pub weights: RewardWeights,
}

impl TrainingTask for PlannerTask {
    fn name(&self) -> &str {
        self.problem.name()
    }

    fn feature_map(&self) -> FeatureMap {
        self.planner.feature_map()
    }

    fn rollout(&self, policy: &SamplingPolicy, rng: &mut ChaCha8Rng) -> Result<Rollout> {
        let out = run_planner(self.planner, &self.problem, policy, &self.config, rng, true)?;
        let mut transitions = out.transitions;
        for t in &mut transitions {
            t.raw_reward = compute_reward(t.nodes_added, t.collision_checks, &self.weights);
        }
        Ok(Rollout {
            environment: self.name().to_string(),
            raw_return: transitions.iter().map(|t| t.raw_reward).sum(),
            transitions,
            success: out.success,
            samples_drawn: out.counters.samples_drawn,
            collision_checks: out.counters.collision_checks,
            nodes_added: out.counters.nodes_added,
            total_return: 0.0,
        })
    }
}

/// Single-decision episodes with constant features: accepting pays
/// `accept_reward`, rejecting pays `reject_reward`.
#[derive(Clone, Debug, PartialEq)]
pub struct BanditTask {
    pub features: Vec<f64>,
    pub feature_map: FeatureMap,
    pub accept_reward: f64,
    pub reject_reward: f64,
}

impl Default for BanditTask {
    fn default() -> Self {
        Self {
            features: vec![1.0],
            feature_map: FeatureMap::Rrt,
            accept_reward: 1.0,
            reject_reward: 0.0,
        }
    }
}

impl TrainingTask for BanditTask {
    fn name(&self) -> &str {
        "bandit"
    }

    fn feature_map(&self) -> FeatureMap {
        self.feature_map
    }

    fn rollout(&self, policy: &SamplingPolicy, rng: &mut ChaCha8Rng) -> Result<Rollout> {
        let f = FeatureVector::new(&self.features);
        let d = policy.decide(&f, None, rng)?;
        let mut t = Transition::new(f, d.action, d.p_accept, 0, 0);
        t.raw_reward = match d.action {
            Action::Accept => self.accept_reward,
            Action::Reject => self.reject_reward,
        };
        Ok(Rollout {
            environment: "bandit".into(),
            raw_return: t.raw_reward,
            transitions: vec![t],
            success: true,
            samples_drawn: 1,
            collision_checks: 0,
            nodes_added: 0,
            total_return: 0.0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub rollouts_per_env: usize,
    pub policy_learning_rate: f64,
    pub value_learning_rate: f64,
    pub seed: u64,
    pub restarts: usize,
    /// Warm-start rollouts per environment under the initial policy.
    pub warmup_rollouts: usize,
    /// Value-net descent steps on the warm-start data.
    pub value_warmup_steps: usize,
    pub minibatch_size: usize,
    /// Average the gradients of all environments into one step instead of
    /// stepping once per environment.
    pub average_env_gradients: bool,
    pub normalization: RewardNormalization,
    pub discount: f64,
    /// Episodes per environment used to rank restarts.
    pub eval_rollouts: usize,
    /// Emit a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 150,
            rollouts_per_env: 30,
            policy_learning_rate: 1e-3,
            value_learning_rate: 1e-3,
            seed: 0,
            restarts: 3,
            warmup_rollouts: 10,
            value_warmup_steps: 200,
            minibatch_size: 512,
            average_env_gradients: false,
            normalization: RewardNormalization::default(),
            discount: 1.0,
            eval_rollouts: 20,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.into()));
        if self.rollouts_per_env == 0 || self.warmup_rollouts == 0 || self.restarts == 0 {
            return bad("rollouts_per_env, warmup_rollouts and restarts must be >= 1");
        }
        if self.minibatch_size < 2 {
            return bad("minibatch_size must be >= 2");
        }
        if !(self.policy_learning_rate > 0.0 && self.value_learning_rate > 0.0) {
            return bad("learning rates must be > 0");
        }
        if !(0.0..=1.0).contains(&self.discount) || self.discount == 0.0 {
            return bad("discount must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub restart: usize,
    pub iteration: u64,
    pub environment: String,
    pub mean_return: f64,
    pub mean_raw_return: f64,
    pub mean_samples: f64,
    pub mean_collision_checks: f64,
    pub mean_nodes: f64,
    pub success_rate: f64,
    pub mean_p_accept: f64,
}

impl LogRow {
    fn from_rollouts(
        restart: usize,
        iteration: u64,
        environment: &str,
        rollouts: &[Rollout],
    ) -> Self {
        let n = rollouts.len() as f64;
        let mean = |f: &dyn Fn(&Rollout) -> f64| rollouts.iter().map(f).sum::<f64>() / n;
        Self {
            restart,
            iteration,
            environment: environment.to_string(),
            mean_return: mean(&|r| r.total_return),
            mean_raw_return: mean(&|r| r.raw_return),
            mean_samples: mean(&|r| r.samples_drawn as f64),
            mean_collision_checks: mean(&|r| r.collision_checks as f64),
            mean_nodes: mean(&|r| r.nodes_added as f64),
            success_rate: mean(&|r| r.success as u8 as f64),
            mean_p_accept: mean(&|r| r.mean_p_accept()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RestartSummary {
    pub restart: usize,
    /// Mean raw episode return over the evaluation episodes of all tasks.
    pub eval_return: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub policy: SamplingPolicy,
    pub best_restart: usize,
    pub restarts: Vec<RestartSummary>,
    pub log: Vec<LogRow>,
}

/// Policy checkpoint emitted during training.
#[derive(Clone, Debug)]
pub struct CheckpointEvent<'a> {
    pub restart: usize,
    pub iteration: u64,
    pub policy: &'a SamplingPolicy,
}

/// Trains with `cfg.restarts` independent initializations and returns the
/// one with the best mean evaluation return.
pub fn train<T: TrainingTask>(cfg: &TrainConfig, tasks: &[T]) -> Result<TrainOutcome> {
    train_with_checkpoints(cfg, tasks, |_| Ok(()))
}

pub fn train_with_checkpoints<T, F>(
    cfg: &TrainConfig,
    tasks: &[T],
    on_checkpoint: F,
) -> Result<TrainOutcome>
where
    T: TrainingTask,
    F: Fn(CheckpointEvent<'_>) -> Result<()> + Sync,
{
    cfg.validate()?;
    let Some(first) = tasks.first() else {
        return Err(Error::InvalidParams(
            "at least one training environment is required".into(),
        ));
    };
    let map = first.feature_map();
    if let Some(t) = tasks.iter().find(|t| t.feature_map() != map) {
        return Err(Error::PolicyMismatch(format!(
            "task {} uses {:?} features, expected {map:?}",
            t.name(),
            t.feature_map()
        )));
    }

    let runs = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| Trainer::new(cfg, tasks, map, r)?.run(&on_checkpoint))
        .collect::<Result<Vec<_>>>()?;

    let mut restarts = Vec::new();
    let mut log = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut policies = Vec::new();
    for (r, (policy, rows, eval_return)) in runs.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| eval_return > b) {
            best = Some((r, eval_return));
        }
        restarts.push(RestartSummary {
            restart: r,
            eval_return,
        });
        log.extend(rows);
        policies.push(policy);
    }
    let (best_restart, _) = best.expect("at least one restart");
    Ok(TrainOutcome {
        policy: policies.swap_remove(best_restart),
        best_restart,
        restarts,
        log,
    })
}

const PHASE_WARMUP: u64 = 0;
const PHASE_TRAIN: u64 = 1;
const PHASE_SHUFFLE: u64 = 2;
const PHASE_EVAL: u64 = 3;

struct Trainer<'a, T> {
    cfg: &'a TrainConfig,
    tasks: &'a [T],
    restart: usize,
    policy: SamplingPolicy,
    value: NeuralNet,
    policy_opt: Adam,
    value_opt: Adam,
    stats: RunningStats,
    /// Value outputs are in units of this scale, fixed after warm-up, so the
    /// network never has to produce returns of arbitrary magnitude.
    value_scale: f64,
}

/// Transitions of one environment-iteration flattened for the networks.
struct Batch {
    inputs: Matrix,
    actions: Vec<Action>,
    returns: Vec<f64>,
    advantages: Vec<f64>,
    episodes: usize,
}

impl<'a, T: TrainingTask> Trainer<'a, T> {
    fn new(cfg: &'a TrainConfig, tasks: &'a [T], map: FeatureMap, restart: usize) -> Result<Self> {
        let mut rng = stream_rng(cfg.seed, &[restart as u64, u64::MAX]);
        let policy = SamplingPolicy::new_learned(map, &mut rng)?;
        let value = NeuralNet::standard(map.dim(), 1, &mut rng)?;
        let policy_opt = Adam::new(
            policy.learned_parts().expect("learned").net.param_count(),
            cfg.policy_learning_rate,
        );
        let value_opt = Adam::new(value.param_count(), cfg.value_learning_rate);
        Ok(Self {
            cfg,
            tasks,
            restart,
            policy,
            value,
            policy_opt,
            value_opt,
            stats: RunningStats::default(),
            value_scale: 1.0,
        })
    }

    fn collect(
        &self,
        phase: u64,
        iteration: u64,
        task: usize,
        count: usize,
    ) -> Result<Vec<Rollout>> {
        let t = &self.tasks[task];
        (0..count)
            .into_par_iter()
            .map(|k| {
                let mut rng = stream_rng(
                    self.cfg.seed,
                    &[self.restart as u64, phase, iteration, task as u64, k as u64],
                );
                t.rollout(&self.policy, &mut rng)
            })
            .collect()
    }

    fn standardize(&self, f: &FeatureVector) -> Vec<f64> {
        let mut x = vec![0.0; f.len()];
        self.policy
            .learned_parts()
            .expect("learned")
            .standardizer
            .apply(f.as_slice(), &mut x);
        x
    }

    /// Normalizes rewards, computes returns and value estimates, and
    /// flattens the rollouts into one batch.
    fn prepare(&mut self, rollouts: &mut [Rollout]) -> Result<Batch> {
        for r in rollouts.iter_mut() {
            normalize_rollout(r, &mut self.stats, self.cfg.normalization);
            let rewards: Vec<f64> = r.transitions.iter().map(|t| t.reward).collect();
            for (t, ret) in r
                .transitions
                .iter_mut()
                .zip(discounted_returns(&rewards, self.cfg.discount))
            {
                t.return_to_go = ret;
            }
        }
        let n: usize = rollouts.iter().map(|r| r.transitions.len()).sum();
        let dim = self.policy.feature_map.dim();
        let mut inputs = Matrix::zeros(n, dim);
        let mut actions = Vec::with_capacity(n);
        let mut returns = Vec::with_capacity(n);
        for (i, t) in rollouts.iter().flat_map(|r| &r.transitions).enumerate() {
            inputs
                .row_mut(i)
                .copy_from_slice(&self.standardize(&t.features));
            actions.push(t.action);
            returns.push(t.return_to_go);
        }
        let values = if n > 0 {
            self.value.infer(&inputs)?
        } else {
            Matrix::zeros(0, 1)
        };
        let mut advantages = Vec::with_capacity(n);
        let mut i = 0;
        for r in rollouts.iter_mut() {
            for t in &mut r.transitions {
                t.value_estimate = self.value_scale * values.row(i)[0];
                advantages.push(t.return_to_go - t.value_estimate);
                i += 1;
            }
        }
        Ok(Batch {
            inputs,
            actions,
            returns,
            advantages,
            episodes: rollouts.len(),
        })
    }

    /// Shuffled index chunks of at least two rows each.
    fn minibatches(&self, n: usize, iteration: u64, task: usize) -> Vec<Vec<usize>> {
        if n < 2 {
            return Vec::new();
        }
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = stream_rng(
            self.cfg.seed,
            &[self.restart as u64, PHASE_SHUFFLE, iteration, task as u64],
        );
        idx.shuffle(&mut rng);
        let mut chunks: Vec<Vec<usize>> = idx
            .chunks(self.cfg.minibatch_size)
            .map(<[usize]>::to_vec)
            .collect();
        if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < 2) {
            let tail = chunks.pop().expect("non-empty");
            chunks.last_mut().expect("non-empty").extend(tail);
        }
        chunks
    }

    fn gather(inputs: &Matrix, rows: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(rows.len(), inputs.cols);
        for (k, &i) in rows.iter().enumerate() {
            m.row_mut(k).copy_from_slice(inputs.row(i));
        }
        m
    }

    /// Ascent direction of the likelihood-ratio objective, averaged over
    /// episodes. Runs in training mode so normalization statistics track the
    /// visited feature distribution.
    fn policy_gradient(&mut self, batch: &Batch, chunks: &[Vec<usize>]) -> Result<Vec<f64>> {
        let (low, high) = (self.policy.clamp_low, self.policy.clamp_high);
        let net = &mut self.policy.learned_parts_mut().expect("learned").net;
        let mut grad = vec![0.0; net.param_count()];
        let scale = 1.0 / batch.episodes as f64;
        for rows in chunks {
            let x = Self::gather(&batch.inputs, rows);
            let (out, cache) = net.forward_train(&x)?;
            let actions: Vec<Action> = rows.iter().map(|&i| batch.actions[i]).collect();
            let weights: Vec<f64> = rows.iter().map(|&i| batch.advantages[i] * scale).collect();
            let (_, g) = surrogate_output_gradient(&out, &actions, &weights, low, high);
            for (a, b) in grad.iter_mut().zip(net.backward(&cache, &g)?) {
                *a += b;
            }
        }
        Ok(grad)
    }

    /// Gradient of the mean squared error between scaled value outputs and
    /// returns.
    fn value_gradient(&mut self, batch: &Batch, chunks: &[Vec<usize>]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.value.param_count()];
        let n = batch.returns.len().max(1) as f64;
        for rows in chunks {
            let x = Self::gather(&batch.inputs, rows);
            let (out, cache) = self.value.forward_train(&x)?;
            let targets: Vec<f64> = rows
                .iter()
                .map(|&i| batch.returns[i] / self.value_scale)
                .collect();
            let (_, mut g) = squared_error(&out, &targets);
            g.data.iter_mut().for_each(|v| *v /= n);
            for (a, b) in grad.iter_mut().zip(self.value.backward(&cache, &g)?) {
                *a += b;
            }
        }
        Ok(grad)
    }

    fn step_policy(&mut self, ascent: &[f64]) -> Result<()> {
        let descent: Vec<f64> = ascent.iter().map(|g| -g).collect();
        let net = &mut self.policy.learned_parts_mut().expect("learned").net;
        self.policy_opt.step_net(net, &descent)
    }

    fn warm_start(&mut self) -> Result<()> {
        let mut all = Vec::new();
        for task in 0..self.tasks.len() {
            all.extend(self.collect(PHASE_WARMUP, 0, task, self.cfg.warmup_rollouts)?);
        }
        {
            let std = &mut self
                .policy
                .learned_parts_mut()
                .expect("learned")
                .standardizer;
            for t in all.iter().flat_map(|r| &r.transitions) {
                std.update(t.features.as_slice());
            }
        }
        let batch = self.prepare(&mut all)?;
        let ms =
            batch.returns.iter().map(|r| r * r).sum::<f64>() / batch.returns.len().max(1) as f64;
        self.value_scale = if ms.sqrt() > STD_FLOOR {
            ms.sqrt()
        } else {
            1.0
        };
        for step in 0..self.cfg.value_warmup_steps {
            let chunks = self.minibatches(batch.returns.len(), step as u64, usize::MAX);
            let g = self.value_gradient(&batch, &chunks)?;
            self.value_opt.step_net(&mut self.value, &g)?;
        }
        Ok(())
    }

    fn run<F>(mut self, on_checkpoint: &F) -> Result<(SamplingPolicy, Vec<LogRow>, f64)>
    where
        F: Fn(CheckpointEvent<'_>) -> Result<()>,
    {
        self.warm_start()?;
        let mut log = Vec::new();
        for it in 0..self.cfg.iterations {
            let mut pending: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
            for task in 0..self.tasks.len() {
                let mut rollouts =
                    self.collect(PHASE_TRAIN, it, task, self.cfg.rollouts_per_env)?;
                let batch = self.prepare(&mut rollouts)?;
                log.push(LogRow::from_rollouts(
                    self.restart,
                    it,
                    self.tasks[task].name(),
                    &rollouts,
                ));
                let chunks = self.minibatches(batch.returns.len(), it, task);
                if chunks.is_empty() {
                    continue;
                }
                let pg = self.policy_gradient(&batch, &chunks)?;
                let vg = self.value_gradient(&batch, &chunks)?;
                if self.cfg.average_env_gradients {
                    pending.push((pg, vg));
                } else {
                    self.step_policy(&pg)?;
                    self.value_opt.step_net(&mut self.value, &vg)?;
                }
            }
            if !pending.is_empty() {
                let k = pending.len() as f64;
                let mut pg = vec![0.0; pending[0].0.len()];
                let mut vg = vec![0.0; pending[0].1.len()];
                for (p, v) in &pending {
                    pg.iter_mut().zip(p).for_each(|(a, b)| *a += b / k);
                    vg.iter_mut().zip(v).for_each(|(a, b)| *a += b / k);
                }
                self.step_policy(&pg)?;
                self.value_opt.step_net(&mut self.value, &vg)?;
            }
            if self.cfg.checkpoint_every > 0 && (it + 1) % self.cfg.checkpoint_every == 0 {
                on_checkpoint(CheckpointEvent {
                    restart: self.restart,
                    iteration: it + 1,
                    policy: &self.policy,
                })?;
            }
        }
        let eval_return = self.evaluate()?;
        Ok((self.policy, log, eval_return))
    }

    /// Mean raw return over evaluation episodes whose seeds do not depend on
    /// the restart, so restarts are compared on the same draws.
    fn evaluate(&self) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for (task, t) in self.tasks.iter().enumerate() {
            let rs = (0..self.cfg.eval_rollouts)
                .into_par_iter()
                .map(|k| {
                    let mut rng = stream_rng(self.cfg.seed, &[PHASE_EVAL, task as u64, k as u64]);
                    t.rollout(&self.policy, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            total += rs.iter().map(|r| r.raw_return).sum::<f64>();
            count += rs.len();
        }
        Ok(if count == 0 {
            0.0
        } else {
            total / count as f64
        })
    }
}

/// Implicit sampling density on a grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridCell {
    pub x: f64,
    pub y: f64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistributionGrid {
    pub nx: usize,
    pub ny: usize,
    /// Row-major from the lower-left cell: index `j * nx + i`.
    pub cells: Vec<GridCell>,
}

impl DistributionGrid {
    /// Cell index containing `p`, if `p` lies inside the gridded bounds.
    pub fn cell_of(&self, bounds: &crate::geometry::Rect, p: Point) -> Option<usize> {
        let fx = (p.x - bounds.x) / bounds.w * self.nx as f64;
        let fy = (p.y - bounds.y) / bounds.h * self.ny as f64;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (i, j) = (fx as usize, fy as usize);
        (i < self.nx && j < self.ny).then_some(j * self.nx + i)
    }
}

/// Acceptance probability at every cell center against `tree`, with cells
/// in collision set to zero, normalized to sum to one. This is the density
/// of accepted draws under uniform base sampling.
pub fn distribution_grid(
    policy: &SamplingPolicy,
    env: &Environment,
    tree: &SearchTree<Point>,
    resolution: usize,
) -> Result<DistributionGrid> {
    if resolution < 2 {
        return Err(Error::InvalidParams("grid resolution must be >= 2".into()));
    }
    if !policy.feature_map.has_tree_context() {
        return Err(Error::PolicyMismatch(format!(
            "distribution grids need sample-level features, {:?} decides on tree nodes",
            policy.feature_map
        )));
    }
    if tree.is_empty() {
        return Err(Error::InvalidInput(
            "tree must contain at least one node".into(),
        ));
    }
    let b = env.bounds;
    let (cw, ch) = (b.w / resolution as f64, b.h / resolution as f64);
    let mut cells = Vec::with_capacity(resolution * resolution);
    for j in 0..resolution {
        for i in 0..resolution {
            let c = Point::new(b.x + (i as f64 + 0.5) * cw, b.y + (j as f64 + 0.5) * ch);
            let p = if env.point_in_collision(c) {
                0.0
            } else {
                let (f, ctx, _) = features_rrt(tree, c);
                policy.accept_probability(&f, Some(&ctx))?
            };
            cells.push(GridCell {
                x: c.x,
                y: c.y,
                probability: p,
            });
        }
    }
    let total: f64 = cells.iter().map(|c| c.probability).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput(
            "no free cell has positive acceptance probability".into(),
        ));
    }
    cells.iter_mut().for_each(|c| c.probability /= total);
    Ok(DistributionGrid {
        nx: resolution,
        ny: resolution,
        cells,
    })
}

/// Draws from the uniform base distribution until `accepted` samples pass
/// the policy, returning the accepted points (free space only).
pub fn sample_accepted<R: Rng + ?Sized>(
    policy: &SamplingPolicy,
    env: &Environment,
    tree: &SearchTree<Point>,
    accepted: usize,
    rng: &mut R,
) -> Result<Vec<Point>> {
    let b = env.bounds;
    let mut out = Vec::with_capacity(accepted);
    while out.len() < accepted {
        let x = Point::new(rng.gen_range(b.x..b.x_max()), rng.gen_range(b.y..b.y_max()));
        if env.point_in_collision(x) {
            continue;
        }
        let (f, ctx, _) = features_rrt(tree, x);
        if policy.decide(&f, Some(&ctx), rng)?.action == Action::Accept {
            out.push(x);
        }
    }
    Ok(out)
}
