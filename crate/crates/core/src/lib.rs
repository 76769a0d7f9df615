//! Feature-based localization of a differential-drive robot.
//!
//! A laser range finder sweep is turned into line segments
//! ([`extraction`]), the segments are associated with a known wall map
//! ([`matching`]) and fused with wheel odometry and an absolute heading
//! sensor in an extended Kalman filter ([`ekf`]). The [`sim`] module provides
//! a deterministic world simulation to exercise the whole pipeline.

pub mod ekf;
pub mod error;
pub mod extraction;
pub mod geometry;
pub mod kinematics;
pub mod matching;
pub mod sim;
pub mod uncertainty;

pub use error::{Error, Result};
