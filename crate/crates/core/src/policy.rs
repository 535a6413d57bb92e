//! Sampling policies: planner-state features and accept/reject decisions.
//!
//! A policy never changes what the planner does with an accepted sample; it
//! only filters the stream of draws, which realizes the implicit density
//! `accept(x) * nu(x) / Z` over the base distribution `nu`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap_angle, PendulumState};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::nn::{Checkpoint, NeuralNet};
use crate::planners::tree::SearchTree;

pub const CLAMP_LOW: f64 = 0.05;
pub const CLAMP_HIGH: f64 = 0.95;
pub const POLICY_FORMAT_VERSION: u32 = 1;

/// Index of the accept logit in the policy network output.
pub const ACCEPT: usize = 0;
/// Index of the reject logit.
pub const REJECT: usize = 1;

const MAX_FEATURES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Accept,
    Reject,
}

/// Which planner a feature vector comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    Rrt,
    Birrt,
    Est,
    Pendulum,
}

impl FeatureMap {
    pub fn dim(self) -> usize {
        match self {
            FeatureMap::Rrt | FeatureMap::Birrt => 1,
            FeatureMap::Est | FeatureMap::Pendulum => 2,
        }
    }

    /// Whether the extractor exposes nearest-node distance and clearance,
    /// which the fixed heuristics need.
    pub fn has_tree_context(self) -> bool {
        matches!(self, FeatureMap::Rrt | FeatureMap::Birrt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector {
    values: [f64; MAX_FEATURES],
    len: usize,
}

impl FeatureVector {
    pub fn new(values: &[f64]) -> Self {
        assert!(values.len() <= MAX_FEATURES);
        let mut v = [0.0; MAX_FEATURES];
        v[..values.len()].copy_from_slice(values);
        Self {
            values: v,
            len: values.len(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }
}

impl Serialize for FeatureVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_slice().serialize(s)
    }
}

/// Nearest-node summary for tree planners.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DecisionContext {
    pub nearest_distance: f64,
    pub nearest_clearance: f64,
}

/// Features for a drawn sample in a single-tree planner, plus the nearest
/// node index so the planner can reuse it.
pub fn features_rrt(tree: &SearchTree<Point>, x: Point) -> (FeatureVector, DecisionContext, usize) {
    let (idx, dist) = tree.nearest_point(x);
    let clearance = tree.node(idx).clearance;
    (
        FeatureVector::new(&[dist - clearance]),
        DecisionContext {
            nearest_distance: dist,
            nearest_clearance: clearance,
        },
        idx,
    )
}

/// Same formula as [`features_rrt`], evaluated on the tree being expanded.
pub fn features_birrt(
    active: &SearchTree<Point>,
    x: Point,
) -> (FeatureVector, DecisionContext, usize) {
    features_rrt(active, x)
}

/// `[clearance(candidate), nodes within radius of candidate]`.
pub fn features_est(tree: &SearchTree<Point>, candidate: usize, radius: f64) -> FeatureVector {
    FeatureVector::new(&[
        tree.node(candidate).clearance,
        crate::planners::est_weight(tree, candidate, radius) as f64,
    ])
}

/// `[wrapped angle to goal, velocity difference to goal]`.
pub fn features_pendulum(x: &PendulumState, goal: &PendulumState) -> FeatureVector {
    FeatureVector::new(&[
        wrap_angle(goal.angle - x.angle),
        goal.angular_velocity - x.angular_velocity,
    ])
}

/// Running per-feature mean and variance (Welford), used to standardize
/// network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStandardizer {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl FeatureStandardizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn std(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![1.0; self.dim()];
        }
        self.m2
            .iter()
            .map(|s| (s / (self.count - 1) as f64).sqrt().max(1e-6))
            .collect()
    }

    /// Identity until at least two observations have been seen.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        if self.count < 2 {
            out.copy_from_slice(x);
            return;
        }
        let n = (self.count - 1) as f64;
        for (((o, &v), m), s) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.m2) {
            *o = (v - m) / (s / n).sqrt().max(1e-6);
        }
    }

    fn validate(&self) -> Result<()> {
        if self.mean.len() != self.m2.len() || self.m2.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidCheckpoint(
                "malformed feature standardizer".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnedPolicy {
    pub net: NeuralNet,
    pub standardizer: FeatureStandardizer,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PolicyKind {
    Learned(Box<LearnedPolicy>),
    AlwaysAccept,
    /// Rejects samples farther from the nearest node than its clearance.
    DynamicDomain,
    /// Rejects samples closer to the nearest node than its clearance.
    BallTree,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub p_accept: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingPolicy {
    pub kind: PolicyKind,
    pub feature_map: FeatureMap,
    pub clamp_low: f64,
    pub clamp_high: f64,
}

/// Maps accept/reject logits to a clamped acceptance probability:
/// `low + (high - low) * softmax(z)[accept]`.
pub fn squashed_accept_probability(logits: &[f64], low: f64, high: f64) -> f64 {
    let s = 1.0 / (1.0 + (logits[REJECT] - logits[ACCEPT]).exp());
    low + (high - low) * s
}

impl SamplingPolicy {
    pub fn always_accept(feature_map: FeatureMap) -> Self {
        Self::baseline(PolicyKind::AlwaysAccept, feature_map)
    }

    pub fn dynamic_domain(feature_map: FeatureMap) -> Result<Self> {
        let p = Self::baseline(PolicyKind::DynamicDomain, feature_map);
        p.validate()?;
        Ok(p)
    }

    pub fn ball_tree(feature_map: FeatureMap) -> Result<Self> {
        let p = Self::baseline(PolicyKind::BallTree, feature_map);
        p.validate()?;
        Ok(p)
    }

    fn baseline(kind: PolicyKind, feature_map: FeatureMap) -> Self {
        Self {
            kind,
            feature_map,
            clamp_low: CLAMP_LOW,
            clamp_high: CLAMP_HIGH,
        }
    }

    pub fn learned(
        net: NeuralNet,
        standardizer: FeatureStandardizer,
        feature_map: FeatureMap,
    ) -> Result<Self> {
        let p = Self {
            kind: PolicyKind::Learned(Box::new(LearnedPolicy { net, standardizer })),
            feature_map,
            clamp_low: CLAMP_LOW,
            clamp_high: CLAMP_HIGH,
        };
        p.validate()?;
        Ok(p)
    }

    /// Fresh network with the standard architecture.
    pub fn new_learned<R: Rng + ?Sized>(feature_map: FeatureMap, rng: &mut R) -> Result<Self> {
        let net = NeuralNet::standard(feature_map.dim(), 2, rng)?;
        Self::learned(
            net,
            FeatureStandardizer::new(feature_map.dim()),
            feature_map,
        )
    }

    /// Learned policy whose network outputs exactly `[accept, reject]` for
    /// every input: all parameters zero except the final bias.
    pub fn constant_logits(accept: f64, reject: f64, feature_map: FeatureMap) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut net = NeuralNet::standard(feature_map.dim(), 2, &mut rng)?;
        let n = net.param_count();
        let mut p = vec![0.0; n];
        p[n - 2 + ACCEPT] = accept;
        p[n - 2 + REJECT] = reject;
        net.set_params(&p)?;
        Self::learned(
            net,
            FeatureStandardizer::new(feature_map.dim()),
            feature_map,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.clamp_low && self.clamp_low < self.clamp_high && self.clamp_high < 1.0) {
            return Err(Error::InvalidParams(
                "clamp bounds must satisfy 0 < low < high < 1".into(),
            ));
        }
        match &self.kind {
            PolicyKind::Learned(l) => {
                let dim = self.feature_map.dim();
                if l.net.input_dim() != dim
                    || l.net.output_dim() != 2
                    || l.standardizer.dim() != dim
                {
                    return Err(Error::DimensionMismatch(format!(
                        "learned policy for {:?} needs a {dim}->2 network, got {}->{}",
                        self.feature_map,
                        l.net.input_dim(),
                        l.net.output_dim()
                    )));
                }
            }
            PolicyKind::DynamicDomain | PolicyKind::BallTree => {
                if !self.feature_map.has_tree_context() {
                    return Err(Error::PolicyMismatch(format!(
                        "heuristic policies need nearest-node context, which {:?} does not provide",
                        self.feature_map
                    )));
                }
            }
            PolicyKind::AlwaysAccept => {}
        }
        Ok(())
    }

    pub fn is_learned(&self) -> bool {
        matches!(self.kind, PolicyKind::Learned(_))
    }

    pub fn learned_parts(&self) -> Option<&LearnedPolicy> {
        match &self.kind {
            PolicyKind::Learned(l) => Some(l),
            _ => None,
        }
    }

    pub fn learned_parts_mut(&mut self) -> Option<&mut LearnedPolicy> {
        match &mut self.kind {
            PolicyKind::Learned(l) => Some(l),
            _ => None,
        }
    }

    /// Acceptance probability without drawing an action.
    pub fn accept_probability(
        &self,
        features: &FeatureVector,
        ctx: Option<&DecisionContext>,
    ) -> Result<f64> {
        if features.len() != self.feature_map.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} features for a {:?} policy",
                features.len(),
                self.feature_map
            )));
        }
        let need_ctx = || {
            ctx.ok_or_else(|| {
                Error::PolicyMismatch("heuristic policy called without tree context".into())
            })
        };
        Ok(match &self.kind {
            PolicyKind::AlwaysAccept => 1.0,
            PolicyKind::DynamicDomain => {
                let c = need_ctx()?;
                if c.nearest_distance > c.nearest_clearance {
                    0.0
                } else {
                    1.0
                }
            }
            PolicyKind::BallTree => {
                let c = need_ctx()?;
                if c.nearest_distance < c.nearest_clearance {
                    0.0
                } else {
                    1.0
                }
            }
            PolicyKind::Learned(l) => {
                let mut x = [0.0; MAX_FEATURES];
                let x = &mut x[..features.len()];
                l.standardizer.apply(features.as_slice(), x);
                let logits = l.net.infer_one(x)?;
                squashed_accept_probability(&logits, self.clamp_low, self.clamp_high)
            }
        })
    }

    /// Accept/reject decision. Only learned policies consume randomness.
    pub fn decide<R: Rng + ?Sized>(
        &self,
        features: &FeatureVector,
        ctx: Option<&DecisionContext>,
        rng: &mut R,
    ) -> Result<Decision> {
        let p_accept = self.accept_probability(features, ctx)?;
        let action = if self.is_learned() {
            if rng.gen::<f64>() < p_accept {
                Action::Accept
            } else {
                Action::Reject
            }
        } else if p_accept > 0.5 {
            Action::Accept
        } else {
            Action::Reject
        };
        Ok(Decision { action, p_accept })
    }

    pub fn to_file(&self) -> PolicyFile {
        match &self.kind {
            PolicyKind::Learned(l) => PolicyFile::Learned {
                format_version: POLICY_FORMAT_VERSION,
                feature_map: self.feature_map,
                clamp_low: self.clamp_low,
                clamp_high: self.clamp_high,
                standardizer: l.standardizer.clone(),
                network: l.net.to_checkpoint(),
            },
            PolicyKind::AlwaysAccept => PolicyFile::AlwaysAccept {
                feature_map: self.feature_map,
            },
            PolicyKind::DynamicDomain => PolicyFile::DynamicDomain {
                feature_map: self.feature_map,
            },
            PolicyKind::BallTree => PolicyFile::BallTree {
                feature_map: self.feature_map,
            },
        }
    }

    pub fn from_file(file: PolicyFile) -> Result<Self> {
        let p = match file {
            PolicyFile::Learned {
                format_version,
                feature_map,
                clamp_low,
                clamp_high,
                standardizer,
                network,
            } => {
                if format_version != POLICY_FORMAT_VERSION {
                    return Err(Error::InvalidCheckpoint(format!(
                        "unsupported policy format_version {format_version}"
                    )));
                }
                standardizer.validate()?;
                let net = NeuralNet::from_checkpoint(network)?;
                Self {
                    kind: PolicyKind::Learned(Box::new(LearnedPolicy { net, standardizer })),
                    feature_map,
                    clamp_low,
                    clamp_high,
                }
            }
            PolicyFile::AlwaysAccept { feature_map } => Self::always_accept(feature_map),
            PolicyFile::DynamicDomain { feature_map } => {
                Self::baseline(PolicyKind::DynamicDomain, feature_map)
            }
            PolicyFile::BallTree { feature_map } => {
                Self::baseline(PolicyKind::BallTree, feature_map)
            }
        };
        p.validate()
            .map_err(|e| Error::InvalidCheckpoint(e.to_string()))?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: PolicyFile = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidCheckpoint(format!("{}: {e}", path.display())))?;
        Self::from_file(file)
    }
}

/// Policy checkpoint document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyFile {
    Learned {
        format_version: u32,
        feature_map: FeatureMap,
        clamp_low: f64,
        clamp_high: f64,
        standardizer: FeatureStandardizer,
        network: Checkpoint,
    },
    AlwaysAccept {
        feature_map: FeatureMap,
    },
    DynamicDomain {
        feature_map: FeatureMap,
    },
    BallTree {
        feature_map: FeatureMap,
    },
}
