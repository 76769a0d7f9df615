//! Scene builders and ground-truth labelling shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use segekf_core::extraction::ExtractedSegment;
use segekf_core::geometry::{line_to_robot_frame, wrap_angle, NormalLine, Pose, Segment};
use segekf_core::sim::{raycast_scan_labeled, SensorConfig, SimRng, World};
use segekf_core::extraction::Scan;

/// Interior pose of the 5 x 4 m room that sees three walls with plenty of beams.
pub const ROOM_POSE: Pose = Pose {
    x: 1.5,
    y: 1.0,
    theta: 0.0,
};

pub fn room() -> World {
    World::rectangle(5.0, 4.0)
}

/// Dead-end corridor: a wall on each side and one ahead of the origin.
pub fn three_wall_scene() -> World {
    World::new(vec![
        Segment::from_coords(-1.0, -1.5, 3.0, -1.5),
        Segment::from_coords(3.0, -1.5, 3.0, 1.5),
        Segment::from_coords(3.0, 1.5, -1.0, 1.5),
    ])
    .unwrap()
}

pub struct LabeledScan {
    pub scan: Scan,
    pub labels: Vec<Option<usize>>,
}

impl LabeledScan {
    pub fn take(world: &World, pose: Pose, cfg: &SensorConfig, rng: &mut SimRng) -> Self {
        let (scan, labels) = raycast_scan_labeled(world, pose, cfg, rng);
        Self { scan, labels }
    }

    /// Walls hit by at least `min_beams` beams.
    pub fn visible_walls(&self, min_beams: usize) -> BTreeSet<usize> {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for w in self.labels.iter().flatten() {
            *counts.entry(*w).or_default() += 1;
        }
        counts
            .into_iter()
            .filter(|&(_, n)| n >= min_beams)
            .map(|(w, _)| w)
            .collect()
    }

    /// The wall most of the segment's inliers came from.
    pub fn wall_of(&self, seg: &ExtractedSegment) -> Option<usize> {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for &i in &seg.inlier_indices {
            if let Some(w) = self.labels[i] {
                *counts.entry(w).or_default() += 1;
            }
        }
        counts
            .into_iter()
            .max_by_key(|&(w, n)| (n, std::cmp::Reverse(w)))
            .map(|(w, _)| w)
    }

    pub fn detected_walls(&self, segs: &[ExtractedSegment]) -> BTreeSet<usize> {
        segs.iter().filter_map(|s| self.wall_of(s)).collect()
    }
}

/// A wall's line as the robot at `pose` sees it.
pub fn wall_in_robot_frame(world: &World, wall: usize, pose: Pose) -> NormalLine {
    line_to_robot_frame(world.walls[wall].normal_line(), pose)
}

/// `(|d rho|, |d psi|)` between two robot-frame lines.
pub fn line_error(a: NormalLine, b: NormalLine) -> (f64, f64) {
    ((a.rho - b.rho).abs(), wrap_angle(a.psi - b.psi).abs())
}

pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
