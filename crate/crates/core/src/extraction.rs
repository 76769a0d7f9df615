//! Line segment extraction from a single range scan.
//!
//! Consecutive readings are grouped into windows of `group_size` points and
//! fitted by least squares. A window whose points mostly lie close to the
//! fitted line seeds a segment, which then grows forward point by point with
//! an incrementally updated fit. The distance threshold is either a fixed
//! value or, in dynamic mode, the `inlier_count`-th smallest residual of the
//! seeding window, capped by `max_threshold`.

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    polar_to_cartesian, slope_intercept_to_normal, wrap_angle, NormalLine, Point2, PolarPoint,
    Segment, SlopeIntercept,
};

/// Denominator magnitude under which a least-squares fit is degenerate.
const DEGENERATE_DENOMINATOR: f64 = 1e-12;
/// Growth gate in units of the running perpendicular residual.
const GROWTH_GATE_SCALE: f64 = 6.0;
/// Smallest threshold a segment may carry; absorbs rounding on exact data.
const THRESHOLD_FLOOR: f64 = 1e-9;

/// Number of readings in a scan-log line.
pub const SCAN_LOG_BEAMS: usize = 361;
pub const SCAN_LOG_FIRST_BEARING_DEG: f64 = -90.0;
pub const SCAN_LOG_STEP_DEG: f64 = 0.5;

/// One sweep of the range finder, ordered by ascending bearing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scan {
    pub points: Vec<PolarPoint>,
    pub timestamp: Option<f64>,
    /// Readings at or beyond this range carry no return and are ignored.
    pub max_range: Option<f64>,
}

impl Scan {
    pub fn new(points: Vec<PolarPoint>) -> Self {
        Self {
            points,
            timestamp: None,
            max_range: None,
        }
    }

    /// Builds a scan from evenly spaced ranges, bearings given in degrees.
    pub fn from_ranges(ranges: &[f64], first_bearing_deg: f64, step_deg: f64) -> Self {
        let points = ranges
            .iter()
            .enumerate()
            .map(|(i, &r)| PolarPoint::from_degrees(r, first_bearing_deg + step_deg * i as f64))
            .collect();
        Self::new(points)
    }

    pub fn is_capped(&self, i: usize) -> bool {
        matches!(self.max_range, Some(m) if self.points[i].r >= m)
    }
}

/// Parses a scan log: one scan per line, [`SCAN_LOG_BEAMS`] ranges in meters
/// covering -90..=+90 degrees in 0.5 degree steps. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_scan_log<R: BufRead>(reader: R) -> Result<Vec<Scan>> {
    let mut scans = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::ScanLog {
            line: line_no,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut ranges = Vec::with_capacity(SCAN_LOG_BEAMS);
        for tok in trimmed.split_whitespace() {
            let r: f64 = tok.parse().map_err(|_| Error::ScanLog {
                line: line_no,
                message: format!("invalid range value {tok:?}"),
            })?;
            if !r.is_finite() || r < 0.0 {
                return Err(Error::ScanLog {
                    line: line_no,
                    message: format!("range must be finite and non-negative, got {tok}"),
                });
            }
            ranges.push(r);
        }
        if ranges.len() != SCAN_LOG_BEAMS {
            return Err(Error::ScanLog {
                line: line_no,
                message: format!("expected {SCAN_LOG_BEAMS} ranges, found {}", ranges.len()),
            });
        }
        scans.push(Scan::from_ranges(
            &ranges,
            SCAN_LOG_FIRST_BEARING_DEG,
            SCAN_LOG_STEP_DEG,
        ));
    }
    Ok(scans)
}

/// Formats a scan as one scan-log line.
pub fn format_scan_log_line(scan: &Scan) -> String {
    scan.points
        .iter()
        .map(|p| p.r.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Fixed,
    #[default]
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Window length N1.
    pub group_size: usize,
    /// Fraction of a window that must fit the line; N2 = round(ratio * N1).
    pub inlier_ratio: f64,
    /// Distance threshold in fixed mode (m).
    pub fixed_threshold: f64,
    /// Upper bound for the per-segment threshold in dynamic mode (m).
    pub max_threshold: f64,
    /// Readings closer than this are treated as noise (m).
    pub min_range: f64,
    /// Maximum spacing between consecutive points of one segment (m).
    pub neighbor_gap: f64,
    pub mode: ThresholdMode,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            group_size: 10,
            inlier_ratio: 0.75,
            fixed_threshold: 0.2,
            max_threshold: 0.4,
            min_range: 0.4,
            neighbor_gap: 0.5,
            mode: ThresholdMode::Dynamic,
        }
    }
}

impl ExtractionConfig {
    pub fn with_mode(mut self, mode: ThresholdMode) -> Self {
        self.mode = mode;
        self
    }

    /// N2, rounded half up.
    pub fn inlier_count(&self) -> usize {
        ((self.inlier_ratio * self.group_size as f64) + 0.5).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.group_size < 3 {
            return fail("group_size must be at least 3");
        }
        if !(self.inlier_ratio > 0.0 && self.inlier_ratio <= 1.0) {
            return fail("inlier_ratio must lie in (0, 1]");
        }
        if !(self.fixed_threshold > 0.0 && self.fixed_threshold <= self.max_threshold) {
            return fail("thresholds must satisfy 0 < fixed_threshold <= max_threshold");
        }
        if !(self.min_range >= 0.0) || !(self.neighbor_gap > 0.0) {
            return fail("min_range must be >= 0 and neighbor_gap > 0");
        }
        if self.inlier_count() == 0 {
            return fail("inlier_ratio * group_size rounds to zero");
        }
        Ok(())
    }
}

/// Regression axes used for a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitAxes {
    /// `y = m x + k`
    YOnX,
    /// `x = m y + k`, used for lines steeper than the regression can resolve.
    XOnY,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub coeffs: SlopeIntercept,
    pub axes: FitAxes,
}

impl LineFit {
    pub fn normal(&self) -> NormalLine {
        let n = slope_intercept_to_normal(self.coeffs);
        match self.axes {
            FitAxes::YOnX => n,
            FitAxes::XOnY => NormalLine::new(n.rho, FRAC_PI_2 - n.psi),
        }
    }
}

/// Running sums for incremental least squares.
#[derive(Debug, Clone, Copy, Default)]
struct LineSums {
    n: f64,
    sx: f64,
    sy: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl LineSums {
    fn from_points<'a>(points: impl IntoIterator<Item = &'a Point2>) -> Self {
        let mut s = Self::default();
        for p in points {
            s.push(*p);
        }
        s
    }

    fn push(&mut self, p: Point2) {
        self.n += 1.0;
        self.sx += p.x;
        self.sy += p.y;
        self.sxx += p.x * p.x;
        self.syy += p.y * p.y;
        self.sxy += p.x * p.y;
    }

    fn centered_xx(&self) -> f64 {
        self.sxx - self.sx * self.sx / self.n
    }

    fn centered_yy(&self) -> f64 {
        self.syy - self.sy * self.sy / self.n
    }

    fn centered_xy(&self) -> f64 {
        self.sxy - self.sx * self.sy / self.n
    }

    /// Root-mean-square perpendicular residual of the best line through the
    /// points (smallest eigenvalue of the scatter matrix).
    fn residual_rms(&self) -> f64 {
        if self.n < 3.0 {
            return 0.0;
        }
        let (a, c, b) = (self.centered_xx(), self.centered_yy(), self.centered_xy());
        let largest = 0.5 * (a + c) + (0.25 * (a - c).powi(2) + b * b).sqrt();
        if largest <= 0.0 {
            return 0.0;
        }
        // det / largest avoids cancelling two nearly equal terms
        ((a * c - b * b).max(0.0) / largest / (self.n - 2.0)).sqrt()
    }

    fn regress(n: f64, su: f64, sv: f64, suu: f64, suv: f64) -> Result<SlopeIntercept> {
        let denom = suu - su * su / n;
        if denom.abs() < DEGENERATE_DENOMINATOR {
            return Err(Error::DegenerateFit);
        }
        let m = (suv - su * sv / n) / denom;
        let k = sv / n - m * su / n;
        Ok(SlopeIntercept::new(m, k))
    }

    fn fit_y_on_x(&self) -> Result<SlopeIntercept> {
        Self::regress(self.n, self.sx, self.sy, self.sxx, self.sxy)
    }

    fn fit_x_on_y(&self) -> Result<SlopeIntercept> {
        Self::regress(self.n, self.sy, self.sx, self.syy, self.sxy)
    }

    /// Fits `y` on `x` unless the points spread less along `x` than twice
    /// their spread along `y`, in which case the axes are swapped.
    fn fit(&self) -> Option<LineFit> {
        if self.n < 2.0 {
            return None;
        }
        let prefer_swapped = self.centered_xx() < 4.0 * self.centered_yy();
        let y_on_x = || {
            self.fit_y_on_x().ok().map(|coeffs| LineFit {
                coeffs,
                axes: FitAxes::YOnX,
            })
        };
        let x_on_y = || {
            self.fit_x_on_y().ok().map(|coeffs| LineFit {
                coeffs,
                axes: FitAxes::XOnY,
            })
        };
        if prefer_swapped {
            x_on_y().or_else(y_on_x)
        } else {
            y_on_x().or_else(x_on_y)
        }
    }
}

/// Ordinary least-squares fit of `y = m x + k`.
pub fn fit_line_lsq(points: &[Point2]) -> Result<SlopeIntercept> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints(points.len()));
    }
    LineSums::from_points(points).fit_y_on_x()
}

/// Least-squares fit that switches to `x = m y + k` for steep point sets.
pub fn fit_line(points: &[Point2]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints(points.len()));
    }
    LineSums::from_points(points)
        .fit()
        .ok_or(Error::DegenerateFit)
}

pub fn point_line_distance(p: Point2, l: SlopeIntercept) -> f64 {
    (l.m * p.x - p.y + l.k).abs() / (l.m * l.m + 1.0).sqrt()
}

/// Per-segment threshold: the `n2`-th smallest distance, if it does not
/// exceed `max_threshold`.
pub fn dynamic_threshold(distances: &[f64], n2: usize, max_threshold: f64) -> Option<f64> {
    if n2 == 0 || distances.len() < n2 {
        return None;
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let t = sorted[n2 - 1];
    (t <= max_threshold).then_some(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedSegment {
    /// First and last inlier in sweep order.
    pub endpoints: Segment,
    pub fit: LineFit,
    pub normal: NormalLine,
    pub inliers: Vec<Point2>,
    /// Scan indices of the inliers, ascending.
    pub inlier_indices: Vec<usize>,
    pub threshold_used: f64,
}

impl ExtractedSegment {
    pub fn first_index(&self) -> usize {
        self.inlier_indices[0]
    }

    pub fn last_index(&self) -> usize {
        *self.inlier_indices.last().unwrap()
    }
}

struct Candidate {
    index: usize,
    point: Point2,
}

/// Window acceptance rule shared by seeding and growth.
fn window_threshold(distances: &[f64], cfg: &ExtractionConfig, n2: usize) -> Option<f64> {
    match cfg.mode {
        ThresholdMode::Fixed => {
            let hits = distances
                .iter()
                .filter(|&&d| d <= cfg.fixed_threshold)
                .count();
            (hits >= n2).then_some(cfg.fixed_threshold)
        }
        ThresholdMode::Dynamic => dynamic_threshold(distances, n2, cfg.max_threshold),
    }
}

/// Extracts line segments from `scan`, returned in sweep order.
pub fn extract_segments(scan: &Scan, cfg: &ExtractionConfig) -> Vec<ExtractedSegment> {
    let n1 = cfg.group_size.max(3);
    let n2 = cfg.inlier_count().clamp(1, n1);

    let pts: Vec<Candidate> = scan
        .points
        .iter()
        .enumerate()
        .filter(|(i, p)| p.r.is_finite() && p.r >= cfg.min_range && !scan.is_capped(*i))
        .map(|(index, p)| Candidate {
            index,
            point: polar_to_cartesian(*p),
        })
        .collect();

    let gap_before = |j: usize| pts[j].point.distance(&pts[j - 1].point) > cfg.neighbor_gap;

    let mut segments = Vec::new();
    let mut i = 0;
    while i + n1 <= pts.len() {
        let window = &pts[i..i + n1];
        if let Some(g) = (i + 1..i + n1).rev().find(|&j| gap_before(j)) {
            i = g;
            continue;
        }
        let Some(seed) = LineSums::from_points(window.iter().map(|c| &c.point)).fit() else {
            i += 1;
            continue;
        };
        let seed_line = seed.normal();
        let distances: Vec<f64> = window.iter().map(|c| seed_line.distance(c.point)).collect();
        let Some(tau) = window_threshold(&distances, cfg, n2) else {
            i += 1;
            continue;
        };
        let tau = tau.max(THRESHOLD_FLOOR);

        // Growth follows a line refitted on every point within the gate. The
        // gate scales with the residual spread seen so far, so a short, tilted
        // seed window is corrected as the segment lengthens, while a corner
        // is recognised after a few points.
        let limit = match cfg.mode {
            ThresholdMode::Fixed => cfg.fixed_threshold,
            ThresholdMode::Dynamic => cfg.max_threshold,
        };
        let gate = |s: &LineSums| (GROWTH_GATE_SCALE * s.residual_rms()).clamp(tau, limit.max(tau));
        let mut sums = LineSums::from_points(window.iter().map(|c| &c.point));
        let mut line = seed_line;
        let mut recent: VecDeque<f64> = distances.iter().copied().collect();

        // Grow until fewer than `n2` of the last `n1` points are within the gate.
        let mut j = i + n1;
        while j < pts.len() && !gap_before(j) {
            let g = gate(&sums);
            let d = line.distance(pts[j].point);
            recent.pop_front();
            recent.push_back(d);
            if recent.iter().filter(|&&r| r <= g).count() < n2 {
                break;
            }
            if d <= g {
                sums.push(pts[j].point);
                if let Some(f) = sums.fit() {
                    line = f.normal();
                }
            }
            j += 1;
        }
        let members: Vec<&Candidate> = pts[i..j].iter().collect();

        if let Some(seg) = finalize(members, tau, n2) {
            segments.push(seg);
            i = j;
        } else if let Some(seg) = seed_segment(window, &distances, seed, tau) {
            // Pruning a short segment can fall below `n2`; the accepted seed
            // window still stands on its own.
            segments.push(seg);
            i += n1;
        } else {
            i += 1;
        }
    }
    segments
}

/// Refits on the members, dropping the farthest one each time, until every
/// member lies within `tau` of the fit.
///
/// Removing one point per refit lets a fit dragged off by a few stray points
/// (typically around a corner) recover before good points are discarded.
fn finalize(
    mut members: Vec<&Candidate>,
    tau: f64,
    n2: usize,
) -> Option<ExtractedSegment> {
    loop {
        if members.len() < n2.max(2) {
            return None;
        }
        let fit = LineSums::from_points(members.iter().map(|c| &c.point)).fit()?;
        let normal = fit.normal();
        let (worst, worst_d) = members
            .iter()
            .map(|c| normal.distance(c.point))
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        if worst_d > tau {
            members.remove(worst);
            continue;
        }
        return Some(build_segment(&members, fit, tau));
    }
}

/// Segment from the seed window points within `tau` of the seed line, keeping
/// the seed fit so every member stays within `tau` of it.
fn seed_segment(
    window: &[Candidate],
    distances: &[f64],
    seed: LineFit,
    tau: f64,
) -> Option<ExtractedSegment> {
    let members: Vec<&Candidate> = window
        .iter()
        .zip(distances)
        .filter(|&(_, &d)| d <= tau)
        .map(|(c, _)| c)
        .collect();
    (members.len() >= 2).then(|| build_segment(&members, seed, tau))
}

fn build_segment(members: &[&Candidate], fit: LineFit, tau: f64) -> ExtractedSegment {
    let first = members[0];
    let last = members[members.len() - 1];
    ExtractedSegment {
        endpoints: Segment::new(first.point, last.point),
        normal: fit.normal(),
        fit,
        inliers: members.iter().map(|c| c.point).collect(),
        inlier_indices: members.iter().map(|c| c.index).collect(),
        threshold_used: tau,
    }
}

/// Angle between two normal-form lines, ignoring orientation of the normal.
pub fn normal_angle_difference(a: NormalLine, b: NormalLine) -> f64 {
    wrap_angle(a.psi - b.psi).abs()
}
