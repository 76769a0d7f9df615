//! Association of locally extracted segments with segments of a global map.
//!
//! Global segments are brought into the robot frame of the odometry pose and
//! each local/global pair is gated on endpoint containment (overlap rates),
//! squared distance difference and squared wrapped angle difference.
//! Surviving candidates are assigned one-to-one, best score first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::ExtractedSegment;
use crate::geometry::{
    line_to_robot_frame, segment_to_robot_frame, wrap_angle, NormalLine, Pose, Segment,
};

/// Something that can be matched against the map: a robot-frame segment and
/// the normal form of its supporting line.
pub trait LineFeature {
    fn segment(&self) -> Segment;
    fn line(&self) -> NormalLine;
}

impl LineFeature for ExtractedSegment {
    fn segment(&self) -> Segment {
        self.endpoints
    }

    fn line(&self) -> NormalLine {
        self.normal
    }
}

/// A robot-frame segment with its line, e.g. read back from a CSV report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalLine {
    pub segment: Segment,
    pub line: NormalLine,
}

impl LineFeature for LocalLine {
    fn segment(&self) -> Segment {
        self.segment
    }

    fn line(&self) -> NormalLine {
        self.line
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMap {
    segments: Vec<Segment>,
    normals: Vec<NormalLine>,
}

impl GlobalMap {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if let Some(i) = segments
            .iter()
            .position(|s| s.is_degenerate() || !s.length().is_finite())
        {
            return Err(Error::InvalidConfig(format!(
                "map segment {i} has zero length or non-finite endpoints"
            )));
        }
        let normals = segments.iter().map(Segment::normal_line).collect();
        Ok(Self { segments, normals })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn normals(&self) -> &[NormalLine] {
        &self.normals
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    /// Gate on each overlap rate (m).
    pub overlap_t: f64,
    /// Gate on the squared distance difference (m^2).
    pub rho_t: f64,
    /// Gate on the squared wrapped angle difference (rad^2).
    pub psi_t: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            overlap_t: 0.3,
            rho_t: 0.01,
            psi_t: 0.0305,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.overlap_t > 0.0 && self.rho_t > 0.0 && self.psi_t > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "match gates overlap_t, rho_t, psi_t must be positive".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub local_index: usize,
    pub global_index: usize,
    /// Local line in the robot frame.
    pub local_line: NormalLine,
    /// Map line in the global frame.
    pub global_line: NormalLine,
    /// Map line expressed in the robot frame of the odometry pose.
    pub predicted_line: NormalLine,
    pub overlap: (f64, f64),
    pub score: f64,
}

impl MatchPair {
    pub fn rho_residual(&self) -> f64 {
        self.local_line.rho - self.predicted_line.rho
    }

    pub fn psi_residual(&self) -> f64 {
        wrap_angle(self.local_line.psi - self.predicted_line.psi)
    }
}

/// Containment of the local endpoints in the (robot-frame) global segment.
///
/// A point `p` lies on a segment exactly when the distances from `p` to the
/// two segment endpoints add up to the segment length; each rate measures
/// the excess for one local endpoint.
pub fn overlap_rates(local: Segment, global_t: Segment) -> (f64, f64) {
    let g = global_t.length();
    let rate = |p: &crate::geometry::Point2| (p.distance(&global_t.p1) + p.distance(&global_t.p2) - g).abs();
    (rate(&local.p1), rate(&local.p2))
}

pub fn match_segments<F: LineFeature>(
    locals: &[F],
    map: &GlobalMap,
    odom: Pose,
    cfg: &MatchConfig,
) -> Vec<MatchPair> {
    let transformed: Vec<(Segment, NormalLine)> = map
        .segments()
        .iter()
        .zip(map.normals())
        .map(|(s, n)| (segment_to_robot_frame(*s, odom), line_to_robot_frame(*n, odom)))
        .collect();

    let mut candidates = Vec::new();
    for (i, local) in locals.iter().enumerate() {
        let seg = local.segment();
        let line = local.line();
        for (j, (gseg, gline)) in transformed.iter().enumerate() {
            let (o1, o2) = overlap_rates(seg, *gseg);
            let drho2 = (line.rho - gline.rho).powi(2);
            let dpsi2 = wrap_angle(line.psi - gline.psi).powi(2);
            if o1 < cfg.overlap_t && o2 < cfg.overlap_t && drho2 < cfg.rho_t && dpsi2 < cfg.psi_t {
                let score = drho2 / cfg.rho_t + dpsi2 / cfg.psi_t + (o1 + o2) / cfg.overlap_t;
                candidates.push(MatchPair {
                    local_index: i,
                    global_index: j,
                    local_line: line,
                    global_line: map.normals()[j],
                    predicted_line: *gline,
                    overlap: (o1, o2),
                    score,
                });
            }
        }
    }

    candidates.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then(a.local_index.cmp(&b.local_index))
            .then(a.global_index.cmp(&b.global_index))
    });
    let mut local_used = vec![false; locals.len()];
    let mut global_used = vec![false; map.len()];
    let mut pairs = Vec::new();
    for c in candidates {
        if local_used[c.local_index] || global_used[c.global_index] {
            continue;
        }
        local_used[c.local_index] = true;
        global_used[c.global_index] = true;
        pairs.push(c);
    }
    pairs.sort_by_key(|p| p.local_index);
    pairs
}
