//! Torque-limited planar pendulum and the random-control steering function
//! used by the kinodynamic planner.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Pendulum state. `angle` is 0 when hanging straight down.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub angle: f64,
    pub angular_velocity: f64,
}

impl PendulumState {
    pub fn new(angle: f64, angular_velocity: f64) -> Self {
        Self {
            angle: wrap_angle(angle),
            angular_velocity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumModel {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
    pub torque_limit: f64,
    pub dt: f64,
    /// Longest control duration the steering function samples.
    pub max_duration: f64,
    pub omega_max: f64,
    pub goal_angle: f64,
    pub goal_angle_tolerance: f64,
    pub goal_velocity_tolerance: f64,
}

impl Default for PendulumModel {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            damping: 0.05,
            torque_limit: 2.0,
            dt: 0.02,
            max_duration: 1.0,
            omega_max: 8.0,
            goal_angle: PI,
            goal_angle_tolerance: 0.3,
            goal_velocity_tolerance: 1.0,
        }
    }
}

impl PendulumModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("dt must be > 0");
        }
        if !(self.max_duration >= self.dt) {
            return bad("max_duration must be >= dt");
        }
        if !(self.mass > 0.0 && self.length > 0.0 && self.gravity > 0.0) {
            return bad("mass, length and gravity must be > 0");
        }
        if !(self.torque_limit > 0.0 && self.torque_limit < self.mass * self.gravity * self.length)
        {
            return bad("torque_limit must be positive and below m*g*l");
        }
        if !(self.damping >= 0.0 && self.omega_max > 0.0) {
            return bad("damping must be >= 0 and omega_max > 0");
        }
        Ok(())
    }

    pub fn start(&self) -> PendulumState {
        PendulumState::default()
    }

    pub fn goal(&self) -> PendulumState {
        PendulumState::new(self.goal_angle, 0.0)
    }

    pub fn in_goal(&self, s: &PendulumState) -> bool {
        wrap_angle(self.goal_angle - s.angle).abs() <= self.goal_angle_tolerance
            && s.angular_velocity.abs() <= self.goal_velocity_tolerance
    }

    /// Total mechanical energy, zero at the bottom at rest.
    pub fn energy(&self, s: &PendulumState) -> f64 {
        let ml = self.mass * self.length;
        0.5 * ml * self.length * s.angular_velocity.powi(2)
            + ml * self.gravity * (1.0 - s.angle.cos())
    }

    /// One semi-implicit Euler step: velocity first, then angle with the new
    /// velocity.
    pub fn step(&self, s: &PendulumState, torque: f64) -> Result<PendulumState> {
        if !(torque.abs() <= self.torque_limit) {
            return Err(Error::InvalidInput(format!(
                "torque {torque} exceeds limit {}",
                self.torque_limit
            )));
        }
        Ok(self.step_unchecked(s, torque))
    }

    fn step_unchecked(&self, s: &PendulumState, torque: f64) -> PendulumState {
        let inertia = self.mass * self.length * self.length;
        let accel = (torque
            - self.damping * s.angular_velocity
            - self.mass * self.gravity * self.length * s.angle.sin())
            / inertia;
        let omega = (s.angular_velocity + accel * self.dt).clamp(-self.omega_max, self.omega_max);
        PendulumState {
            angle: wrap_angle(s.angle + omega * self.dt),
            angular_velocity: omega,
        }
    }

    /// Applies `torque` for `round(duration / dt)` steps.
    pub fn propagate(
        &self,
        s: &PendulumState,
        torque: f64,
        duration: f64,
    ) -> Result<PendulumState> {
        if !(torque.abs() <= self.torque_limit) {
            return Err(Error::InvalidInput(format!(
                "torque {torque} exceeds limit {}",
                self.torque_limit
            )));
        }
        if !(duration >= self.dt) {
            return Err(Error::InvalidInput(format!(
                "duration {duration} shorter than dt"
            )));
        }
        let steps = (duration / self.dt).round() as usize;
        let mut out = *s;
        for _ in 0..steps {
            out = self.step_unchecked(&out, torque);
        }
        Ok(out)
    }

    /// Draws a torque uniform on `[-limit, limit]` and a duration uniform on
    /// `[dt, max_duration]`.
    pub fn sample_control<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let torque = rng.gen_range(-self.torque_limit..=self.torque_limit);
        let duration = rng.gen_range(self.dt..=self.max_duration);
        (torque, duration)
    }

    /// Metric used by nearest-neighbour queries over pendulum states.
    pub fn distance(&self, a: &PendulumState, b: &PendulumState) -> f64 {
        let da = wrap_angle(a.angle - b.angle);
        let dw = a.angular_velocity - b.angular_velocity;
        (da * da + 0.1 * dw * dw).sqrt()
    }
}

/// Propagation with a steering-call counter attached.
#[derive(Debug)]
pub struct Steering<'a> {
    pub model: &'a PendulumModel,
    pub calls: u64,
}

impl<'a> Steering<'a> {
    pub fn new(model: &'a PendulumModel) -> Self {
        Self { model, calls: 0 }
    }

    pub fn propagate(
        &mut self,
        s: &PendulumState,
        torque: f64,
        duration: f64,
    ) -> Result<PendulumState> {
        self.calls += 1;
        self.model.propagate(s, torque, duration)
    }
}
