//! Extended Kalman filter over the planar pose.
//!
//! The measurement vector stacks `(r_i, psi_i)` for every matched line,
//! optionally followed by an absolute heading. Angle components of the
//! innovation are wrapped before the update.

use nalgebra::{DMatrix, DVector, Matrix3, RowVector3};

use crate::error::{Error, Result};
use crate::extraction::ExtractedSegment;
use crate::geometry::{line_to_robot_frame, signed_robot_distance, wrap_angle, Pose};
use crate::kinematics::{input_noise_cov, jacobian_noise, jacobian_state, step, RobotParams, WheelSpeeds};
use crate::matching::{match_segments, GlobalMap, MatchConfig, MatchPair};
use crate::uncertainty::{assemble_r, line_covariance, PointNoise, CAMERA_HEADING_VARIANCE};

/// Lines closer than this to the robot position are left out of a correction.
pub const FLIP_GUARD: f64 = 1e-3;
/// Innovation covariances worse conditioned than this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfState {
    pub estimate: Pose,
    pub covariance: Matrix3<f64>,
}

impl EkfState {
    pub fn new(estimate: Pose, covariance: Matrix3<f64>) -> Self {
        Self {
            estimate,
            covariance,
        }
    }

    /// Start pose with `diag(0.01 m^2, 0.01 m^2, 0.0076 rad^2)`.
    pub fn with_default_covariance(estimate: Pose) -> Self {
        Self::new(estimate, default_initial_covariance())
    }

    /// Largest absolute asymmetry and smallest eigenvalue of the covariance.
    pub fn covariance_health(&self) -> (f64, f64) {
        let p = &self.covariance;
        let asym = (p - p.transpose()).abs().max();
        (asym, p.symmetric_eigenvalues().min())
    }
}

pub fn default_initial_covariance() -> Matrix3<f64> {
    Matrix3::from_diagonal(&nalgebra::Vector3::new(0.01, 0.01, 0.0076))
}

fn symmetrize(p: Matrix3<f64>) -> Matrix3<f64> {
    (p + p.transpose()) * 0.5
}

pub fn predict(s: &EkfState, u: WheelSpeeds, p: &RobotParams, delta: f64) -> EkfState {
    let a = jacobian_state(s.estimate, u, p);
    let w = jacobian_noise(s.estimate, p);
    let q = input_noise_cov(u, delta);
    let cov = a * s.covariance * a.transpose() + w * q * w.transpose();
    EkfState {
        estimate: step(s.estimate, u, p),
        covariance: symmetrize(cov),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBundle {
    /// `[r_1, psi_1, ..., r_N, psi_N, (heading)]`
    pub z: DVector<f64>,
    pub matched: Vec<MatchPair>,
    pub heading: Option<f64>,
    pub r: DMatrix<f64>,
}

impl MeasurementBundle {
    pub fn dim(&self) -> usize {
        self.z.len()
    }
}

/// Matches `locals` against the map from the predicted pose and stacks the
/// matched lines (and the heading, if any) into a measurement.
///
/// Matched lines passing within [`FLIP_GUARD`] of the predicted position, or
/// whose inliers give no usable covariance, are dropped.
pub fn build_measurement(
    locals: &[ExtractedSegment],
    map: &GlobalMap,
    s_pred: &EkfState,
    heading: Option<f64>,
    cfg: &MatchConfig,
    noise: PointNoise,
) -> MeasurementBundle {
    build_measurement_with(locals, map, s_pred, heading, cfg, noise, CAMERA_HEADING_VARIANCE)
}

pub fn build_measurement_with(
    locals: &[ExtractedSegment],
    map: &GlobalMap,
    s_pred: &EkfState,
    heading: Option<f64>,
    cfg: &MatchConfig,
    noise: PointNoise,
    camera_var: f64,
) -> MeasurementBundle {
    let mut matched = Vec::new();
    let mut covs = Vec::new();
    for pair in match_segments(locals, map, s_pred.estimate, cfg) {
        if signed_robot_distance(pair.global_line, s_pred.estimate).abs() < FLIP_GUARD {
            continue;
        }
        let seg = &locals[pair.local_index];
        if let Ok(c) = line_covariance(&seg.inliers, seg.normal, noise) {
            covs.push(c);
            matched.push(pair);
        }
    }
    let mut z = Vec::with_capacity(2 * matched.len() + 1);
    for m in &matched {
        z.push(m.local_line.rho);
        z.push(m.local_line.psi);
    }
    z.extend(heading);
    MeasurementBundle {
        z: DVector::from_vec(z),
        r: assemble_r(&covs, heading.map(|_| camera_var)),
        matched,
        heading,
    }
}

/// Predicted measurement and its Jacobian with respect to `(x, y, theta)`.
pub fn measurement_model(
    x: Pose,
    matched: &[MatchPair],
    include_heading: bool,
) -> (DVector<f64>, DMatrix<f64>) {
    let dim = 2 * matched.len() + usize::from(include_heading);
    let mut h = DVector::zeros(dim);
    let mut jac = DMatrix::zeros(dim, 3);
    for (i, m) in matched.iter().enumerate() {
        let g = m.global_line;
        let predicted = line_to_robot_frame(g, x);
        h[2 * i] = predicted.rho;
        h[2 * i + 1] = predicted.psi;
        let sign = if signed_robot_distance(g, x) >= 0.0 { 1.0 } else { -1.0 };
        jac.set_row(
            2 * i,
            &RowVector3::new(-sign * g.psi.cos(), -sign * g.psi.sin(), 0.0),
        );
        jac.set_row(2 * i + 1, &RowVector3::new(0.0, 0.0, -1.0));
    }
    if include_heading {
        h[dim - 1] = x.theta;
        jac.set_row(dim - 1, &RowVector3::new(0.0, 0.0, 1.0));
    }
    (h, jac)
}

pub fn correct(s_pred: &EkfState, m: &MeasurementBundle) -> Result<EkfState> {
    if m.dim() == 0 {
        return Ok(*s_pred);
    }
    let (h, jac) = measurement_model(s_pred.estimate, &m.matched, m.heading.is_some());
    let mut innovation = &m.z - &h;
    for i in 0..m.matched.len() {
        innovation[2 * i + 1] = wrap_angle(innovation[2 * i + 1]);
    }
    if m.heading.is_some() {
        let last = innovation.len() - 1;
        innovation[last] = wrap_angle(innovation[last]);
    }

    let p = DMatrix::from_column_slice(3, 3, s_pred.covariance.as_slice());
    let s = &jac * &p * jac.transpose() + &m.r;
    let s = (&s + s.transpose()) * 0.5;
    let eig = s.clone().symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularInnovation { condition });
    }
    let chol = s
        .cholesky()
        .ok_or(Error::SingularInnovation { condition })?;
    // K = P H^T S^-1, computed as (S^-1 H P)^T
    let gain = chol.solve(&(&jac * &p)).transpose();

    let dx = &gain * innovation;
    let est = s_pred.estimate;
    let estimate = Pose {
        x: est.x + dx[0],
        y: est.y + dx[1],
        theta: wrap_angle(est.theta + dx[2]),
    };
    let updated = (DMatrix::identity(3, 3) - &gain * &jac) * &p;
    let covariance = symmetrize(Matrix3::from_column_slice(updated.as_slice()));
    Ok(EkfState {
        estimate,
        covariance,
    })
}
