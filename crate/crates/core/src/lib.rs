//! Learned rejection-sampling distributions for sampling-based motion
//! planners.
//!
//! A sampling policy looks at the current planner state through a small
//! feature vector and accepts or rejects each random sample before the
//! planner spends collision checks on it. Policies are trained with a
//! likelihood-ratio policy gradient and a learned value baseline, then
//! benchmarked against the unmodified planners and two fixed heuristics.

pub mod bench;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod nn;
pub mod planners;
pub mod policy;
pub mod training;

pub use error::{Error, Result};
