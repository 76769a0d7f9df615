//! Discrete unicycle model driven by wheel encoder speeds.
//!
//! The heading update uses `omega_l - omega_r`: a faster left wheel turns the
//! robot towards positive `theta`. Simulated worlds follow the same
//! convention, so scripted trajectories and the filter stay consistent.

use nalgebra::{Matrix2, Matrix3, Matrix3x2};
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Pose};

/// Default proportionality constant between wheel speed and its noise variance.
pub const DEFAULT_ENCODER_DELTA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    /// Radius of the driven wheels (m).
    pub wheel_radius: f64,
    /// Distance between the two driven wheels (m).
    pub axle_length: f64,
    /// Filter sampling period (s).
    pub sample_period: f64,
}

impl Default for RobotParams {
    /// 10 cm wheels, 60 cm track, 100 ms period.
    fn default() -> Self {
        Self {
            wheel_radius: 0.05,
            axle_length: 0.6,
            sample_period: 0.1,
        }
    }
}

impl RobotParams {
    pub fn is_valid(&self) -> bool {
        self.wheel_radius > 0.0 && self.axle_length > 0.0 && self.sample_period > 0.0
    }

    /// Forward speed produced by a pair of wheel speeds.
    pub fn linear_speed(&self, u: WheelSpeeds) -> f64 {
        0.5 * self.wheel_radius * (u.omega_l + u.omega_r)
    }

    /// Heading rate produced by a pair of wheel speeds.
    pub fn angular_speed(&self, u: WheelSpeeds) -> f64 {
        self.wheel_radius / self.axle_length * (u.omega_l - u.omega_r)
    }
}

/// Wheel rotational speeds in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelSpeeds {
    pub omega_l: f64,
    pub omega_r: f64,
}

impl WheelSpeeds {
    pub const fn new(omega_l: f64, omega_r: f64) -> Self {
        Self { omega_l, omega_r }
    }
}

pub fn step(pose: Pose, u: WheelSpeeds, p: &RobotParams) -> Pose {
    step_disturbed(pose, u, [0.0, 0.0], p)
}

/// Motion model with an additive disturbance on forward speed (`w[0]`) and
/// heading rate (`w[1]`). [`jacobian_noise`] is its derivative in `w`.
pub fn step_disturbed(pose: Pose, u: WheelSpeeds, w: [f64; 2], p: &RobotParams) -> Pose {
    let ts = p.sample_period;
    let v = p.linear_speed(u) + w[0];
    let omega = p.angular_speed(u) + w[1];
    let (s, c) = pose.theta.sin_cos();
    Pose {
        x: pose.x + ts * v * c,
        y: pose.y + ts * v * s,
        theta: wrap_angle(pose.theta + ts * omega),
    }
}

pub fn jacobian_state(pose: Pose, u: WheelSpeeds, p: &RobotParams) -> Matrix3<f64> {
    let tv = p.sample_period * p.linear_speed(u);
    let (s, c) = pose.theta.sin_cos();
    Matrix3::new(1.0, 0.0, -tv * s, 0.0, 1.0, tv * c, 0.0, 0.0, 1.0)
}

pub fn jacobian_noise(pose: Pose, p: &RobotParams) -> Matrix3x2<f64> {
    let ts = p.sample_period;
    let (s, c) = pose.theta.sin_cos();
    Matrix3x2::new(ts * c, 0.0, ts * s, 0.0, 0.0, ts)
}

/// Input noise covariance `diag(delta * omega_r^2, delta * omega_l^2)`.
pub fn input_noise_cov(u: WheelSpeeds, delta: f64) -> Matrix2<f64> {
    Matrix2::new(
        delta * u.omega_r * u.omega_r,
        0.0,
        0.0,
        delta * u.omega_l * u.omega_l,
    )
}
