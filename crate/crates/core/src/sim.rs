//! Deterministic simulation of a differential-drive robot in a world of
//! wall segments.
//!
//! Randomness comes from ChaCha8 generators seeded with the scenario seed,
//! one stream per sensor ([`Stream`]), so every sensor draws the same numbers
//! regardless of what the others do and logs are reproducible across
//! platforms. Gaussian samples use `rand_distr::Normal`.

use std::f64::consts::PI;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ekf::{build_measurement_with, correct, predict, EkfState};
use crate::error::{Error, Result};
use crate::extraction::{extract_segments, ExtractionConfig, Scan};
use crate::geometry::{wrap_angle, Point2, PolarPoint, Pose, Segment};
use crate::kinematics::{step, RobotParams, WheelSpeeds};
use crate::matching::{GlobalMap, MatchConfig};
use crate::uncertainty::{PointNoise, CAMERA_HEADING_VARIANCE};

pub type SimRng = ChaCha8Rng;

/// Independent random streams derived from one scenario seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Encoders = 1,
    Range = 2,
    Heading = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn gaussian(rng: &mut SimRng, std_dev: f64) -> f64 {
    // std_dev is validated non-negative by callers
    Normal::new(0.0, std_dev.max(0.0)).map_or(0.0, |n| n.sample(rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub walls: Vec<Segment>,
}

impl World {
    pub fn new(walls: Vec<Segment>) -> Result<Self> {
        if walls.is_empty() {
            return Err(Error::InvalidConfig("world has no walls".into()));
        }
        if walls.iter().any(|w| w.is_degenerate() || !w.length().is_finite()) {
            return Err(Error::InvalidConfig(
                "world walls must have finite, non-zero length".into(),
            ));
        }
        Ok(Self { walls })
    }

    /// Axis-aligned room `[0, width] x [0, height]`, walls counter-clockwise
    /// starting with the bottom one.
    pub fn rectangle(width: f64, height: f64) -> Self {
        Self {
            walls: vec![
                Segment::from_coords(0.0, 0.0, width, 0.0),
                Segment::from_coords(width, 0.0, width, height),
                Segment::from_coords(width, height, 0.0, height),
                Segment::from_coords(0.0, height, 0.0, 0.0),
            ],
        }
    }

    pub fn map(&self) -> GlobalMap {
        GlobalMap::new(self.walls.clone()).expect("world walls are validated")
    }

    /// Distance along a ray to the closest wall and that wall's index.
    pub fn cast(&self, origin: Point2, direction: f64) -> Option<(f64, usize)> {
        let (dy, dx) = direction.sin_cos();
        let mut best: Option<(f64, usize)> = None;
        for (i, w) in self.walls.iter().enumerate() {
            let ex = w.p2.x - w.p1.x;
            let ey = w.p2.y - w.p1.y;
            let denom = dx * ey - dy * ex;
            if denom.abs() < 1e-15 {
                continue;
            }
            let ox = w.p1.x - origin.x;
            let oy = w.p1.y - origin.y;
            let s = (ox * ey - oy * ex) / denom;
            let t = (ox * dy - oy * dx) / denom;
            if s > 1e-12 && (-1e-12..=1.0 + 1e-12).contains(&t) && best.is_none_or(|(b, _)| s < b) {
                best = Some((s, i));
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Field of view of the range finder (rad).
    pub fov: f64,
    /// Angle between consecutive beams (rad).
    pub angular_step: f64,
    pub max_range: f64,
    /// Standard deviation of the additive range noise (m).
    pub range_noise_sigma: f64,
    /// Variance of the absolute heading sensor (rad^2).
    pub heading_var: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            fov: PI,
            angular_step: 0.5f64.to_radians(),
            max_range: 8.0,
            range_noise_sigma: 0.005,
            heading_var: CAMERA_HEADING_VARIANCE,
        }
    }
}

impl SensorConfig {
    pub fn noiseless() -> Self {
        Self {
            range_noise_sigma: 0.0,
            heading_var: 0.0,
            ..Self::default()
        }
    }

    /// Number of beams, counting both ends of the field of view.
    pub fn beam_count(&self) -> usize {
        (self.fov / self.angular_step).round() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        let ratio = self.fov / self.angular_step;
        if !(self.fov > 0.0 && self.angular_step > 0.0 && self.max_range > 0.0) {
            return Err(Error::InvalidConfig(
                "fov, angular_step and max_range must be positive".into(),
            ));
        }
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::InvalidConfig(
                "fov must be an integral multiple of angular_step".into(),
            ));
        }
        if !(self.range_noise_sigma >= 0.0 && self.heading_var >= 0.0) {
            return Err(Error::InvalidConfig("noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

/// Simulated sweep; also returns which wall each beam hit.
pub fn raycast_scan_labeled(
    world: &World,
    true_pose: Pose,
    cfg: &SensorConfig,
    rng: &mut SimRng,
) -> (Scan, Vec<Option<usize>>) {
    let n = cfg.beam_count();
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let bearing = -0.5 * cfg.fov + cfg.angular_step * i as f64;
        let noise = gaussian(rng, cfg.range_noise_sigma);
        let hit = world
            .cast(true_pose.position(), true_pose.theta + bearing)
            .filter(|(r, _)| *r < cfg.max_range);
        let (r, label) = match hit {
            Some((r, wall)) => ((r + noise).clamp(1e-9, cfg.max_range - 1e-9), Some(wall)),
            None => (cfg.max_range, None),
        };
        points.push(PolarPoint::new(r, bearing));
        labels.push(label);
    }
    let scan = Scan {
        points,
        timestamp: None,
        max_range: Some(cfg.max_range),
    };
    (scan, labels)
}

pub fn raycast_scan(world: &World, true_pose: Pose, cfg: &SensorConfig, rng: &mut SimRng) -> Scan {
    raycast_scan_labeled(world, true_pose, cfg, rng).0
}

/// Absolute heading measurement with Gaussian noise of variance `heading_var`.
pub fn heading_sensor(true_pose: Pose, cfg: &SensorConfig, rng: &mut SimRng) -> f64 {
    wrap_angle(true_pose.theta + gaussian(rng, cfg.heading_var.sqrt()))
}

/// Encoder reading of each wheel with noise variance `delta * omega^2`.
pub fn encoder_readout(true_u: WheelSpeeds, delta: f64, rng: &mut SimRng) -> WheelSpeeds {
    let sd = delta.max(0.0).sqrt();
    let l = true_u.omega_l + gaussian(rng, sd * true_u.omega_l.abs());
    let r = true_u.omega_r + gaussian(rng, sd * true_u.omega_r.abs());
    WheelSpeeds::new(l, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub speeds: WheelSpeeds,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Diagonal of the initial covariance.
    pub initial_covariance: [f64; 3],
    /// Initial estimate; the true start pose when absent.
    pub initial_estimate: Option<Pose>,
    /// Heading variance assumed by the filter.
    pub camera_var: f64,
    /// Take a scan and heading reading every this many steps.
    pub scan_every: usize,
    /// Build the global map from the first scan instead of the world walls.
    pub map_from_first_scan: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            initial_covariance: [0.01, 0.01, 0.0076],
            initial_estimate: None,
            camera_var: CAMERA_HEADING_VARIANCE,
            scan_every: 1,
            map_from_first_scan: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub world: World,
    pub robot: RobotParams,
    pub start: Pose,
    pub commands: Vec<Command>,
    pub seed: u64,
    pub encoder_delta: f64,
    pub sensor: SensorConfig,
    pub extraction: ExtractionConfig,
    pub matching: MatchConfig,
    pub filter: FilterConfig,
}

impl Scenario {
    /// Oval loop of 300 steps inside a 5 x 4 m room, default noise levels.
    pub fn rectangular_room_loop(seed: u64) -> Self {
        let robot = RobotParams::default();
        Self {
            world: World::rectangle(5.0, 4.0),
            robot,
            start: Pose::new(1.5, 1.0, 0.0),
            commands: oval_loop(&robot, 0.25, 2.0, 80, 70),
            seed,
            encoder_delta: crate::kinematics::DEFAULT_ENCODER_DELTA,
            sensor: SensorConfig::default(),
            extraction: ExtractionConfig::default(),
            matching: MatchConfig::default(),
            filter: FilterConfig::default(),
        }
    }

    /// Same scenario with every noise source switched off.
    pub fn noiseless(mut self) -> Self {
        self.encoder_delta = 0.0;
        self.sensor.range_noise_sigma = 0.0;
        self.sensor.heading_var = 0.0;
        self
    }

    pub fn total_steps(&self) -> usize {
        self.commands.iter().map(|c| c.steps).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.robot.is_valid() {
            return Err(Error::InvalidConfig("robot parameters must be positive".into()));
        }
        if self.commands.is_empty() || self.commands.iter().any(|c| c.steps == 0) {
            return Err(Error::InvalidConfig(
                "commands must be non-empty with step counts >= 1".into(),
            ));
        }
        if !(self.encoder_delta >= 0.0) {
            return Err(Error::InvalidConfig("encoder_delta must be >= 0".into()));
        }
        if self.filter.scan_every == 0 {
            return Err(Error::InvalidConfig("scan_every must be >= 1".into()));
        }
        if self.filter.initial_covariance.iter().any(|v| !(*v >= 0.0)) || !(self.filter.camera_var > 0.0) {
            return Err(Error::InvalidConfig(
                "filter variances must be non-negative (camera_var positive)".into(),
            ));
        }
        World::new(self.world.walls.clone())?;
        self.sensor.validate()?;
        self.extraction.validate()?;
        self.matching.validate()
    }
}

/// Wheel speeds producing forward speed `v` and heading rate `omega`.
pub fn wheel_speeds_for(robot: &RobotParams, v: f64, omega: f64) -> WheelSpeeds {
    let sum = 2.0 * v / robot.wheel_radius;
    let diff = omega * robot.axle_length / robot.wheel_radius;
    WheelSpeeds::new(0.5 * (sum + diff), 0.5 * (sum - diff))
}

/// Two straights of `straight` m joined by counter-clockwise half turns.
pub fn oval_loop(
    robot: &RobotParams,
    speed: f64,
    straight: f64,
    straight_steps: usize,
    turn_steps: usize,
) -> Vec<Command> {
    let ts = robot.sample_period;
    let v_straight = straight / (straight_steps as f64 * ts);
    let omega = PI / (turn_steps as f64 * ts);
    let line = Command {
        speeds: wheel_speeds_for(robot, v_straight, 0.0),
        steps: straight_steps,
    };
    let turn = Command {
        speeds: wheel_speeds_for(robot, speed, omega),
        steps: turn_steps,
    };
    vec![line, turn, line, turn]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    Odometry,
    EkfLrf,
    EkfFull,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub truth: Pose,
    pub odometry: Pose,
    pub ekf_lrf: Pose,
    pub ekf_full: Pose,
    pub matches: usize,
}

impl StepRecord {
    pub fn error(&self, e: Estimator) -> f64 {
        let est = match e {
            Estimator::Odometry => self.odometry,
            Estimator::EkfLrf => self.ekf_lrf,
            Estimator::EkfFull => self.ekf_full,
        };
        est.position_error(&self.truth)
    }
}

/// A correction that was skipped because the innovation was singular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub step: usize,
    pub estimator: Estimator,
    pub condition: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceHealth {
    pub step: usize,
    pub estimator: Estimator,
    pub asymmetry: f64,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
    pub skips: Vec<SkipRecord>,
    pub health: Vec<CovarianceHealth>,
}

/// Column names of the run-log CSV, in order.
pub const RUNLOG_COLUMNS: [&str; 18] = [
    "step", "t", "true_x", "true_y", "true_th", "odo_x", "odo_y", "odo_th", "ekf_lrf_x",
    "ekf_lrf_y", "ekf_lrf_th", "ekf_full_x", "ekf_full_y", "ekf_full_th", "err_odo", "err_lrf",
    "err_full", "matches",
];

#[derive(Debug, Serialize, Deserialize)]
struct RunLogRow {
    step: usize,
    t: f64,
    true_x: f64,
    true_y: f64,
    true_th: f64,
    odo_x: f64,
    odo_y: f64,
    odo_th: f64,
    ekf_lrf_x: f64,
    ekf_lrf_y: f64,
    ekf_lrf_th: f64,
    ekf_full_x: f64,
    ekf_full_y: f64,
    ekf_full_th: f64,
    err_odo: f64,
    err_lrf: f64,
    err_full: f64,
    matches: usize,
}

impl RunLog {
    pub fn final_record(&self) -> &StepRecord {
        self.records.last().expect("a run log has at least the initial record")
    }

    pub fn final_error(&self, e: Estimator) -> f64 {
        self.final_record().error(e)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(RunLogRow {
                step: r.step,
                t: r.t,
                true_x: r.truth.x,
                true_y: r.truth.y,
                true_th: r.truth.theta,
                odo_x: r.odometry.x,
                odo_y: r.odometry.y,
                odo_th: r.odometry.theta,
                ekf_lrf_x: r.ekf_lrf.x,
                ekf_lrf_y: r.ekf_lrf.y,
                ekf_lrf_th: r.ekf_lrf.theta,
                ekf_full_x: r.ekf_full.x,
                ekf_full_y: r.ekf_full.y,
                ekf_full_th: r.ekf_full.theta,
                err_odo: r.error(Estimator::Odometry),
                err_lrf: r.error(Estimator::EkfLrf),
                err_full: r.error(Estimator::EkfFull),
                matches: r.matches,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Reads back the step records of a run-log CSV.
    pub fn read_csv<R: std::io::Read>(input: R) -> std::result::Result<Vec<StepRecord>, csv::Error> {
        let mut rdr = csv::Reader::from_reader(input);
        rdr.deserialize::<RunLogRow>()
            .map(|row| {
                let r = row?;
                Ok(StepRecord {
                    step: r.step,
                    t: r.t,
                    truth: Pose { x: r.true_x, y: r.true_y, theta: r.true_th },
                    odometry: Pose { x: r.odo_x, y: r.odo_y, theta: r.odo_th },
                    ekf_lrf: Pose { x: r.ekf_lrf_x, y: r.ekf_lrf_y, theta: r.ekf_lrf_th },
                    ekf_full: Pose { x: r.ekf_full_x, y: r.ekf_full_y, theta: r.ekf_full_th },
                    matches: r.matches,
                })
            })
            .collect()
    }
}

/// Builds a global map from one scan taken at a known pose.
pub fn map_from_scan(scan: &Scan, pose: Pose, cfg: &ExtractionConfig) -> Result<GlobalMap> {
    let walls = extract_segments(scan, cfg)
        .into_iter()
        .map(|s| Segment::new(pose.to_world(s.endpoints.p1), pose.to_world(s.endpoints.p2)))
        .collect();
    GlobalMap::new(walls)
}

struct FilterTrack {
    which: Estimator,
    state: EkfState,
}

/// Runs ground truth, odometry and both filters in lockstep.
pub fn run_scenario(sc: &Scenario) -> Result<RunLog> {
    sc.validate()?;
    let mut enc_rng = stream_rng(sc.seed, Stream::Encoders);
    let mut range_rng = stream_rng(sc.seed, Stream::Range);
    let mut heading_rng = stream_rng(sc.seed, Stream::Heading);

    let map = if sc.filter.map_from_first_scan {
        let scan = raycast_scan(&sc.world, sc.start, &sc.sensor, &mut range_rng);
        map_from_scan(&scan, sc.start, &sc.extraction)?
    } else {
        sc.world.map()
    };
    let noise = PointNoise::isotropic(sc.sensor.range_noise_sigma);

    let p0 = nalgebra::Matrix3::from_diagonal(&nalgebra::Vector3::from(sc.filter.initial_covariance));
    let init = EkfState::new(sc.filter.initial_estimate.unwrap_or(sc.start), p0);
    let mut truth = sc.start;
    let mut odometry = init;
    let mut tracks = [
        FilterTrack { which: Estimator::EkfLrf, state: init },
        FilterTrack { which: Estimator::EkfFull, state: init },
    ];

    let mut log = RunLog::default();
    let record = |step: usize, truth: Pose, odo: &EkfState, tracks: &[FilterTrack; 2], matches| StepRecord {
        step,
        t: step as f64 * sc.robot.sample_period,
        truth,
        odometry: odo.estimate,
        ekf_lrf: tracks[0].state.estimate,
        ekf_full: tracks[1].state.estimate,
        matches,
    };
    log.records.push(record(0, truth, &odometry, &tracks, 0));

    let mut k = 0;
    for cmd in &sc.commands {
        for _ in 0..cmd.steps {
            k += 1;
            truth = step(truth, cmd.speeds, &sc.robot);
            let u = encoder_readout(cmd.speeds, sc.encoder_delta, &mut enc_rng);
            odometry = predict(&odometry, u, &sc.robot, sc.encoder_delta);
            for t in tracks.iter_mut() {
                t.state = predict(&t.state, u, &sc.robot, sc.encoder_delta);
            }

            let mut matches = 0;
            if k % sc.filter.scan_every == 0 {
                let scan = raycast_scan(&sc.world, truth, &sc.sensor, &mut range_rng);
                let heading = heading_sensor(truth, &sc.sensor, &mut heading_rng);
                let segments = extract_segments(&scan, &sc.extraction);
                for t in tracks.iter_mut() {
                    let h = (t.which == Estimator::EkfFull).then_some(heading);
                    let bundle = build_measurement_with(
                        &segments,
                        &map,
                        &t.state,
                        h,
                        &sc.matching,
                        noise,
                        sc.filter.camera_var,
                    );
                    if t.which == Estimator::EkfFull {
                        matches = bundle.matched.len();
                    }
                    match correct(&t.state, &bundle) {
                        Ok(s) => t.state = s,
                        Err(Error::SingularInnovation { condition }) => log.skips.push(SkipRecord {
                            step: k,
                            estimator: t.which,
                            condition,
                        }),
                        Err(e) => return Err(e),
                    }
                }
            }
            for t in &tracks {
                let (asymmetry, min_eigenvalue) = t.state.covariance_health();
                log.health.push(CovarianceHealth {
                    step: k,
                    estimator: t.which,
                    asymmetry,
                    min_eigenvalue,
                });
            }
            log.records.push(record(k, truth, &odometry, &tracks, matches));
        }
    }
    Ok(log)
}
