//! Planar primitives shared by every stage of the pipeline.
//!
//! All quantities are SI: meters and radians. Lines in normal form are kept
//! canonical (`rho >= 0`, `psi` in `(-pi, pi]`) so that two descriptions of
//! the same line compare equal.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// A single range reading: range `r` (m) at bearing `phi` (rad) from the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarPoint {
    pub r: f64,
    pub phi: f64,
}

impl PolarPoint {
    pub const fn new(r: f64, phi: f64) -> Self {
        Self { r, phi }
    }

    /// Builds a reading from a bearing given in degrees.
    pub fn from_degrees(r: f64, phi_deg: f64) -> Self {
        Self::new(r, phi_deg.to_radians())
    }
}

pub fn polar_to_cartesian(p: PolarPoint) -> Point2 {
    Point2::new(p.r * p.phi.cos(), p.r * p.phi.sin())
}

/// Robot pose in the global frame; `theta` is kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Euclidean distance between the positions of two poses.
    pub fn position_error(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Maps a point expressed in this pose's frame into the global frame.
    pub fn to_world(&self, p: Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2::new(self.x + c * p.x - s * p.y, self.y + s * p.x + c * p.y)
    }

    /// Maps a global point into this pose's frame.
    pub fn to_local(&self, p: Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        Point2::new(c * dx + s * dy, -s * dx + c * dy)
    }
}

/// A directed line segment between two distinct endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub p1: Point2,
    pub p2: Point2,
}

impl Segment {
    pub const fn new(p1: Point2, p2: Point2) -> Self {
        Self { p1, p2 }
    }

    pub fn from_coords(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self::new(Point2::new(x1, y1), Point2::new(x2, y2))
    }

    pub fn length(&self) -> f64 {
        self.p1.distance(&self.p2)
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.length() > 0.0)
    }

    /// Normal form of the infinite line through this segment.
    pub fn normal_line(&self) -> NormalLine {
        let dx = self.p2.x - self.p1.x;
        let dy = self.p2.y - self.p1.y;
        let len = dx.hypot(dy);
        let (nx, ny) = (-dy / len, dx / len);
        NormalLine::from_signed(nx * self.p1.x + ny * self.p1.y, ny.atan2(nx))
    }
}

/// Line `x cos(psi) + y sin(psi) = rho` with `rho >= 0`, `psi` in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalLine {
    pub rho: f64,
    pub psi: f64,
}

impl NormalLine {
    pub fn new(rho: f64, psi: f64) -> Self {
        Self::from_signed(rho, psi)
    }

    /// Canonicalizes a possibly negative distance by flipping the normal.
    pub fn from_signed(rho: f64, psi: f64) -> Self {
        if rho >= 0.0 {
            Self {
                rho,
                psi: wrap_angle(psi),
            }
        } else {
            Self {
                rho: -rho,
                psi: wrap_angle(psi + PI),
            }
        }
    }

    /// Signed distance of `p` from the line, positive on the origin's far side.
    pub fn signed_distance(&self, p: Point2) -> f64 {
        p.x * self.psi.cos() + p.y * self.psi.sin() - self.rho
    }

    pub fn distance(&self, p: Point2) -> f64 {
        self.signed_distance(p).abs()
    }
}

/// Line `y = m x + k`; undefined for vertical lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeIntercept {
    pub m: f64,
    pub k: f64,
}

impl SlopeIntercept {
    pub const fn new(m: f64, k: f64) -> Self {
        Self { m, k }
    }
}

/// Converts `y = m x + k` to normal form.
///
/// `psi` is the direction of the foot of the perpendicular from the origin.
/// When the line passes through the origin (`k == 0`) the foot is undefined
/// and `psi` falls back to the line normal `atan2(1, -m)`.
pub fn slope_intercept_to_normal(l: SlopeIntercept) -> NormalLine {
    let SlopeIntercept { m, k } = l;
    let denom = 1.0 + m * m;
    let rho = (-k).abs() / denom.sqrt();
    if k == 0.0 {
        return NormalLine::new(0.0, 1.0f64.atan2(-m));
    }
    NormalLine::new(rho, (k / denom).atan2(-m * k / denom))
}

/// Expresses a global segment in the robot frame of `odom`.
///
/// Each endpoint is translated by the robot position and rotated by the
/// negative robot heading.
pub fn segment_to_robot_frame(s: Segment, odom: Pose) -> Segment {
    Segment::new(odom.to_local(s.p1), odom.to_local(s.p2))
}

/// Expresses a global normal-form line in the robot frame of `odom`.
pub fn line_to_robot_frame(g: NormalLine, odom: Pose) -> NormalLine {
    let d = signed_robot_distance(g, odom);
    NormalLine::from_signed(d, g.psi - odom.theta)
}

/// Signed distance from the robot to a global line, before canonicalization.
pub(crate) fn signed_robot_distance(g: NormalLine, odom: Pose) -> f64 {
    g.rho - odom.x * g.psi.cos() - odom.y * g.psi.sin()
}
