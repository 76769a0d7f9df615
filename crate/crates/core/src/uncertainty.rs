//! Closed-form covariance of fitted line parameters and assembly of the
//! filter's measurement noise matrix.

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{NormalLine, Point2};

/// Variance of the absolute heading sensor (rad^2).
pub const CAMERA_HEADING_VARIANCE: f64 = 0.0265;

/// Cartesian noise shared by every point of a scan.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PointNoise {
    pub sigma_xx2: f64,
    pub sigma_yy2: f64,
    pub sigma_xy2: f64,
}

impl PointNoise {
    pub fn isotropic(sigma: f64) -> Self {
        let v = sigma * sigma;
        Self {
            sigma_xx2: v,
            sigma_yy2: v,
            sigma_xy2: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.sigma_xx2 >= 0.0
            && self.sigma_yy2 >= 0.0
            && self.sigma_xy2.abs() <= (self.sigma_xx2 * self.sigma_yy2).sqrt() + 1e-15
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineCovariance {
    pub var_rho: f64,
    pub var_psi: f64,
    /// Cross term between `psi` and `rho`; not used by the filter.
    pub cov: f64,
}

impl LineCovariance {
    /// Full covariance in `(psi, rho)` order.
    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.var_psi, self.cov, self.cov, self.var_rho)
    }
}

/// Covariance of `(rho, psi)` for a line fitted to `inliers`.
///
/// The direction term is `s = (a syy - b sxy + c sxx) / ((a - c)^2 + b^2)`
/// built from the centered scatter sums; the distance picks up `e^2 s`
/// through the lever arm `e` of the centroid plus the variance of the
/// centroid itself projected on the line normal.
pub fn line_covariance(
    inliers: &[Point2],
    line: NormalLine,
    noise: PointNoise,
) -> Result<LineCovariance> {
    let n = inliers.len();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    let nf = n as f64;
    let mx = inliers.iter().map(|p| p.x).sum::<f64>() / nf;
    let my = inliers.iter().map(|p| p.y).sum::<f64>() / nf;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for p in inliers {
        let dx = p.x - mx;
        let dy = p.y - my;
        a += dx * dx;
        b += 2.0 * dx * dy;
        c += dy * dy;
    }
    let spread = (a - c) * (a - c) + b * b;
    if spread < 1e-18 {
        return Err(Error::DegenerateGeometry);
    }
    let PointNoise {
        sigma_xx2,
        sigma_yy2,
        sigma_xy2,
    } = noise;
    let s = (a * sigma_yy2 - b * sigma_xy2 + c * sigma_xx2) / spread;

    let (sin_psi, cos_psi) = line.psi.sin_cos();
    let e = my * cos_psi - mx * sin_psi;
    // phi = psi + pi/2
    let (sin_phi, cos_phi) = (cos_psi, -sin_psi);
    let centroid_var = (sigma_yy2 * cos_phi * cos_phi + sigma_xx2 * sin_phi * sin_phi
        - 2.0 * sigma_xy2 * sin_phi * cos_phi)
        / nf;

    Ok(LineCovariance {
        var_psi: s,
        var_rho: s * e * e + centroid_var,
        cov: s * e,
    })
}

/// Block-diagonal measurement covariance: `(var_rho, var_psi)` per line in
/// measurement order, followed by the heading variance when given.
pub fn assemble_r(lines: &[LineCovariance], camera_var: Option<f64>) -> DMatrix<f64> {
    let dim = 2 * lines.len() + usize::from(camera_var.is_some());
    let mut r = DMatrix::zeros(dim, dim);
    for (i, l) in lines.iter().enumerate() {
        r[(2 * i, 2 * i)] = l.var_rho;
        r[(2 * i + 1, 2 * i + 1)] = l.var_psi;
    }
    if let Some(v) = camera_var {
        r[(dim - 1, dim - 1)] = v;
    }
    r
}
