//! End-to-end acceptance checks.
//!
//! Runs without the libtest harness so that every criterion prints exactly
//! one PASS/FAIL line, even when all of them pass. The process exits with a
//! non-zero status if any criterion fails.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use common::{line_error, median, three_wall_scene, LabeledScan, ROOM_POSE};
use segekf_core::ekf::measurement_model;
use segekf_core::extraction::{extract_segments, fit_line, fit_line_lsq, ExtractionConfig, Scan, ThresholdMode};
use segekf_core::geometry::{
    line_to_robot_frame, segment_to_robot_frame, slope_intercept_to_normal, wrap_angle, NormalLine, Point2,
    PolarPoint, Pose, Segment,
};
use segekf_core::kinematics::{jacobian_noise, jacobian_state, step, step_disturbed, RobotParams, WheelSpeeds};
use segekf_core::matching::{match_segments, MatchConfig, MatchPair};
use segekf_core::sim::{
    oval_loop, run_scenario, stream_rng, Estimator, RunLog, Scenario, SensorConfig, Stream,
};
use segekf_core::uncertainty::{line_covariance, PointNoise};

// Tolerances and budgets, one block per criterion.
const JACOBIAN_REL_TOL: f64 = 1e-5;
const JACOBIAN_SAMPLES: usize = 100;
const FD_STEP: f64 = 1e-6;
/// Lines this close to the robot are excluded from the H check.
const FLIP_BOUNDARY: f64 = 1e-3;

const PATH_TOL: f64 = 1e-9;
const PATH_SAMPLES: usize = 1000;
/// Local lines steeper than this are treated as vertical and skipped.
const MAX_LOCAL_SLOPE: f64 = 50.0;

const NOISELESS_LINE_TOL: f64 = 1e-6;
const NOISY_RHO_TOL: f64 = 0.010;
const NOISY_PSI_TOL_DEG: f64 = 1.0;
const NOISY_SEEDS: u64 = 100;
const NOISY_REQUIRED: usize = 95;

const SUPERSET_SCANS: usize = 100;

const DERICHE_REFITS: usize = 1000;
const DERICHE_RATIO: (f64, f64) = (0.7, 1.4);
const DERICHE_SIGMA: f64 = 0.01;

const MATCH_SEEDS: u64 = 100;
const ODOM_ERR_XY: f64 = 0.1;
const ODOM_ERR_DEG: f64 = 5.0;
const ODOM_OFFSET: f64 = 1.0;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = -1e-9;

const LOCALIZATION_SEEDS: u64 = 20;
const FULL_VS_ODOMETRY: f64 = 0.5;

const NOISELESS_STEPS: usize = 500;
const NOISELESS_TOL: f64 = 1e-6;

const THROUGHPUT_SCANS: usize = 100;
const PER_SCAN_BUDGET: Duration = Duration::from_millis(50);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn within_budget(start: Instant, budget: Duration) -> (bool, String) {
    let t = start.elapsed();
    (t < budget, format!("{:.2} s of {} s", t.as_secs_f64(), budget.as_secs()))
}

fn max_abs(m: &[f64]) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    max_abs(&diff) / max_abs(analytic).max(f64::MIN_POSITIVE)
}

fn pose_diff(a: Pose, b: Pose) -> [f64; 3] {
    [a.x - b.x, a.y - b.y, wrap_angle(a.theta - b.theta)]
}

fn perturbed(p: Pose, k: usize, h: f64) -> Pose {
    let mut q = p;
    match k {
        0 => q.x += h,
        1 => q.y += h,
        _ => q.theta += h,
    }
    q
}

fn jacobian_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let robot = RobotParams::default();
    let (mut worst_a, mut worst_w, mut worst_h) = (0.0f64, 0.0f64, 0.0f64);
    let mut h_samples = 0;
    for _ in 0..JACOBIAN_SAMPLES {
        let pose = Pose::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-PI..PI),
        );
        let u = WheelSpeeds::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));

        let a = jacobian_state(pose, u, &robot);
        let mut fd = [0.0; 9];
        for k in 0..3 {
            let d = pose_diff(
                step(perturbed(pose, k, FD_STEP), u, &robot),
                step(perturbed(pose, k, -FD_STEP), u, &robot),
            );
            for r in 0..3 {
                fd[r * 3 + k] = d[r] / (2.0 * FD_STEP);
            }
        }
        let analytic: Vec<f64> = (0..9).map(|i| a[(i / 3, i % 3)]).collect();
        worst_a = worst_a.max(relative_error(&analytic, &fd));

        let w = jacobian_noise(pose, &robot);
        let mut fd = [0.0; 6];
        for k in 0..2 {
            let mut plus = [0.0; 2];
            let mut minus = [0.0; 2];
            plus[k] = FD_STEP;
            minus[k] = -FD_STEP;
            let d = pose_diff(
                step_disturbed(pose, u, plus, &robot),
                step_disturbed(pose, u, minus, &robot),
            );
            for r in 0..3 {
                fd[r * 2 + k] = d[r] / (2.0 * FD_STEP);
            }
        }
        let analytic: Vec<f64> = (0..6).map(|i| w[(i / 2, i % 2)]).collect();
        worst_w = worst_w.max(relative_error(&analytic, &fd));

        let g = NormalLine::new(rng.random_range(0.2..6.0), rng.random_range(-PI..PI));
        let d = g.rho - pose.x * g.psi.cos() - pose.y * g.psi.sin();
        if d.abs() < FLIP_BOUNDARY {
            continue;
        }
        h_samples += 1;
        let pair = MatchPair {
            local_index: 0,
            global_index: 0,
            local_line: line_to_robot_frame(g, pose),
            global_line: g,
            predicted_line: line_to_robot_frame(g, pose),
            overlap: (0.0, 0.0),
            score: 0.0,
        };
        let (_, jac) = measurement_model(pose, std::slice::from_ref(&pair), true);
        let mut fd = [0.0; 9];
        for k in 0..3 {
            let hp = measurement_model(perturbed(pose, k, FD_STEP), std::slice::from_ref(&pair), true).0;
            let hm = measurement_model(perturbed(pose, k, -FD_STEP), std::slice::from_ref(&pair), true).0;
            let diff = [hp[0] - hm[0], wrap_angle(hp[1] - hm[1]), wrap_angle(hp[2] - hm[2])];
            for r in 0..3 {
                fd[r * 3 + k] = diff[r] / (2.0 * FD_STEP);
            }
        }
        let analytic: Vec<f64> = (0..9).map(|i| jac[(i / 3, i % 3)]).collect();
        worst_h = worst_h.max(relative_error(&analytic, &fd));
    }
    let (fast, timing) = within_budget(start, Duration::from_secs(1));
    let worst = worst_a.max(worst_w).max(worst_h);
    Outcome::new(
        worst < JACOBIAN_REL_TOL && fast && h_samples > 0,
        format!("max rel err A {worst_a:.1e}, W {worst_w:.1e}, H {worst_h:.1e} ({h_samples} H samples); {timing}"),
    )
}

fn transform_path_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_rho, mut worst_psi) = (0.0f64, 0.0f64);
    let mut checked = 0;
    while checked < PATH_SAMPLES {
        let pose = Pose::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-PI..PI),
        );
        let seg = Segment::from_coords(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        );
        if seg.length() < 0.5 {
            continue;
        }
        let local = segment_to_robot_frame(seg, pose);
        let dx = local.p2.x - local.p1.x;
        if dx.abs() * MAX_LOCAL_SLOPE < (local.p2.y - local.p1.y).abs() {
            continue;
        }
        let via_fit = slope_intercept_to_normal(fit_line_lsq(&[local.p1, local.p2]).unwrap());
        let direct = line_to_robot_frame(seg.normal_line(), pose);
        let (dr, dp) = line_error(via_fit, direct);
        worst_rho = worst_rho.max(dr);
        worst_psi = worst_psi.max(dp);
        checked += 1;
    }
    let (fast, timing) = within_budget(start, Duration::from_secs(1));
    Outcome::new(
        worst_rho < PATH_TOL && worst_psi < PATH_TOL && fast,
        format!("max |d rho| {worst_rho:.1e}, max |d psi| {worst_psi:.1e} over {checked} lines; {timing}"),
    )
}

/// Checks one room scan: every visible wall found once, each within tolerance.
fn room_scan_ok(scan: &LabeledScan, cfg: &ExtractionConfig, rho_tol: f64, psi_tol: f64) -> bool {
    let world = common::room();
    let segs = extract_segments(&scan.scan, cfg);
    let visible = scan.visible_walls(cfg.group_size);
    if segs.len() != visible.len() || scan.detected_walls(&segs) != visible {
        return false;
    }
    segs.iter().all(|s| {
        let wall = scan.wall_of(s).unwrap();
        let (dr, dp) = line_error(s.normal, common::wall_in_robot_frame(&world, wall, ROOM_POSE));
        dr <= rho_tol && dp <= psi_tol
    })
}

fn extraction_recovery() -> Outcome {
    let start = Instant::now();
    let world = common::room();
    let cfg = ExtractionConfig::default();
    let mut rng = stream_rng(0, Stream::Range);
    let clean = LabeledScan::take(&world, ROOM_POSE, &SensorConfig::noiseless(), &mut rng);
    let noiseless_ok = room_scan_ok(&clean, &cfg, NOISELESS_LINE_TOL, NOISELESS_LINE_TOL);

    let psi_tol = NOISY_PSI_TOL_DEG.to_radians();
    let good = (0..NOISY_SEEDS)
        .filter(|&seed| {
            let mut rng = stream_rng(seed, Stream::Range);
            let scan = LabeledScan::take(&world, ROOM_POSE, &SensorConfig::default(), &mut rng);
            room_scan_ok(&scan, &cfg, NOISY_RHO_TOL, psi_tol)
        })
        .count();
    let (fast, timing) = within_budget(start, Duration::from_secs(10));
    Outcome::new(
        noiseless_ok && good >= NOISY_REQUIRED && fast,
        format!(
            "noiseless {} ({} walls); noisy {good}/{NOISY_SEEDS} seeds within 10 mm / 1 deg; {timing}",
            if noiseless_ok { "exact" } else { "WRONG" },
            clean.visible_walls(cfg.group_size).len()
        ),
    )
}

/// A wall 3 m ahead whose points sit alternately in front of and behind the
/// wall line by `amplitude`, like a rough bookshelf face. Every point is
/// `amplitude` off the center line.
fn rough_wall_scan(amplitude: f64) -> Scan {
    let pattern = [1.0, -1.0, -1.0, 1.0];
    let points = (0..61)
        .map(|i| {
            let y = -1.5 + 0.05 * i as f64;
            let x = 3.0 + amplitude * pattern[i % 4];
            PolarPoint::new(x.hypot(y), y.atan2(x))
        })
        .collect();
    Scan::new(points)
}

fn dynamic_superset() -> Outcome {
    let world = common::room();
    let fixed = ExtractionConfig::default().with_mode(ThresholdMode::Fixed);
    let dynamic = ExtractionConfig::default().with_mode(ThresholdMode::Dynamic);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    let (mut fixed_total, mut dynamic_total) = (0, 0);
    for k in 0..SUPERSET_SCANS {
        let pose = Pose::new(
            rng.random_range(0.8..4.2),
            rng.random_range(0.8..3.2),
            rng.random_range(-PI..PI),
        );
        let mut noise = stream_rng(k as u64, Stream::Range);
        let scan = LabeledScan::take(&world, pose, &SensorConfig::default(), &mut noise);
        let f = scan.detected_walls(&extract_segments(&scan.scan, &fixed));
        let d = scan.detected_walls(&extract_segments(&scan.scan, &dynamic));
        fixed_total += f.len();
        dynamic_total += d.len();
        if !f.is_subset(&d) {
            violations += 1;
        }
    }
    let rough = rough_wall_scan(0.23);
    let rough_fixed = extract_segments(&rough, &fixed).len();
    let rough_dynamic = extract_segments(&rough, &dynamic).len();
    Outcome::new(
        violations == 0 && rough_dynamic > rough_fixed,
        format!(
            "{violations} superset violations in {SUPERSET_SCANS} scans (walls: fixed {fixed_total}, dynamic {dynamic_total}); \
             rough wall: fixed {rough_fixed}, dynamic {rough_dynamic}"
        ),
    )
}

fn cloud(n: usize, from: Point2, to: Point2) -> Vec<Point2> {
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            Point2::new(from.x + t * (to.x - from.x), from.y + t * (to.y - from.y))
        })
        .collect()
}

fn deriche_vs_monte_carlo() -> Outcome {
    let start = Instant::now();
    let geometries = [
        ("centered horizontal", cloud(50, Point2::new(-1.0, 2.0), Point2::new(1.0, 2.0))),
        ("offset horizontal", cloud(50, Point2::new(2.0, 2.0), Point2::new(4.0, 2.0))),
        ("diagonal", cloud(40, Point2::new(1.0, 0.0), Point2::new(3.0, 2.0))),
        ("vertical", cloud(30, Point2::new(3.0, -1.0), Point2::new(3.0, 1.0))),
        ("short and far", cloud(20, Point2::new(5.0, 5.5), Point2::new(5.5, 5.65))),
    ];
    let noise = PointNoise::isotropic(DERICHE_SIGMA);
    let normal = Normal::new(0.0, DERICHE_SIGMA).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut all_ok = true;
    let mut parts = Vec::new();
    for (name, pts) in &geometries {
        let truth = fit_line(pts).unwrap().normal();
        let predicted = line_covariance(pts, truth, noise).unwrap();
        let mut rhos = Vec::with_capacity(DERICHE_REFITS);
        let mut psis = Vec::with_capacity(DERICHE_REFITS);
        for _ in 0..DERICHE_REFITS {
            let noisy: Vec<Point2> = pts
                .iter()
                .map(|p| Point2::new(p.x + normal.sample(&mut rng), p.y + normal.sample(&mut rng)))
                .collect();
            let l = fit_line(&noisy).unwrap().normal();
            rhos.push(l.rho - truth.rho);
            psis.push(wrap_angle(l.psi - truth.psi));
        }
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let r_rho = var(&rhos) / predicted.var_rho;
        let r_psi = var(&psis) / predicted.var_psi;
        let ok = [r_rho, r_psi]
            .iter()
            .all(|r| (DERICHE_RATIO.0..=DERICHE_RATIO.1).contains(r));
        all_ok &= ok;
        parts.push(format!("{name} {r_rho:.2}/{r_psi:.2}"));
    }
    let (fast, timing) = within_budget(start, Duration::from_secs(30));
    Outcome::new(
        all_ok && fast,
        format!("sample/predicted var (rho/psi): {}; {timing}", parts.join(", ")),
    )
}

fn matching_correctness() -> Outcome {
    let world = three_wall_scene();
    let map = world.map();
    let truth = Pose::default();
    // Wide enough for the stated odometry error: |d rho| <= |(0.1, 0.1)| and
    // far corners move by up to ~0.45 m, doubling in the overlap rate.
    let wide = MatchConfig {
        overlap_t: 1.0,
        rho_t: 0.04,
        ..MatchConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut perfect = 0;
    let mut false_pairs = 0;
    let mut offset_pairs = 0;
    for seed in 0..MATCH_SEEDS {
        let mut noise = stream_rng(seed, Stream::Range);
        let scan = LabeledScan::take(&world, truth, &SensorConfig::default(), &mut noise);
        let segs = extract_segments(&scan.scan, &ExtractionConfig::default());

        let odom = Pose::new(
            rng.random_range(-ODOM_ERR_XY..=ODOM_ERR_XY),
            rng.random_range(-ODOM_ERR_XY..=ODOM_ERR_XY),
            rng.random_range(-ODOM_ERR_DEG..=ODOM_ERR_DEG).to_radians(),
        );
        let pairs = match_segments(&segs, &map, odom, &wide);
        let correct = pairs
            .iter()
            .all(|p| scan.wall_of(&segs[p.local_index]) == Some(p.global_index));
        if correct && pairs.len() == 3 && segs.len() == 3 {
            perfect += 1;
        }

        let dir = rng.random_range(-PI..PI);
        let far = Pose::new(ODOM_OFFSET * dir.cos(), ODOM_OFFSET * dir.sin(), 0.0);
        let pairs = match_segments(&segs, &map, far, &MatchConfig::default());
        offset_pairs += pairs.len();
        false_pairs += pairs
            .iter()
            .filter(|p| scan.wall_of(&segs[p.local_index]) != Some(p.global_index))
            .count();
    }
    Outcome::new(
        perfect == MATCH_SEEDS as usize && false_pairs == 0,
        format!(
            "{perfect}/{MATCH_SEEDS} seeds with all 3 walls paired correctly; \
             1 m offset: {false_pairs} false of {offset_pairs} pairs"
        ),
    )
}

fn health_of(logs: &[&RunLog]) -> Outcome {
    let mut worst_asym = 0.0f64;
    let mut worst_eig = f64::INFINITY;
    let mut steps = 0;
    for log in logs {
        for h in &log.health {
            worst_asym = worst_asym.max(h.asymmetry);
            worst_eig = worst_eig.min(h.min_eigenvalue);
            steps += 1;
        }
    }
    Outcome::new(
        steps > 0 && worst_asym < SYMMETRY_TOL && worst_eig >= PSD_TOL,
        format!("{steps} filter steps; max asymmetry {worst_asym:.1e}, min eigenvalue {worst_eig:.1e}"),
    )
}

fn localization_medians(logs: &[RunLog]) -> [f64; 3] {
    [Estimator::Odometry, Estimator::EkfLrf, Estimator::EkfFull]
        .map(|e| median(logs.iter().map(|l| l.final_error(e)).collect()))
}

fn localization_runs(map_from_first_scan: bool) -> Vec<RunLog> {
    (0..LOCALIZATION_SEEDS)
        .map(|seed| {
            let mut sc = Scenario::rectangular_room_loop(seed);
            sc.filter.map_from_first_scan = map_from_first_scan;
            run_scenario(&sc).expect("scenario runs")
        })
        .collect()
}

/// The map is built from the first scan, as on the real robot. With the
/// complete wall list injected instead, both filters see enough lines at
/// every step that the heading sensor changes the estimate only at the
/// 1e-8 m level; that ordering is reported but not judged.
fn localization_ordering(logs: &[RunLog], elapsed: Duration, injected: &[RunLog]) -> Outcome {
    let [odo, lrf, full] = localization_medians(logs);
    let [i_odo, i_lrf, i_full] = localization_medians(injected);
    let fast = elapsed < Duration::from_secs(60);
    Outcome::new(
        full < lrf && lrf < odo && full < FULL_VS_ODOMETRY * odo && fast,
        format!(
            "median final error: full {full:.4} m, LRF {lrf:.4} m, odometry {odo:.4} m; {:.2} s of 60 s \
             [injected map: full {i_full:.3e}, LRF {i_lrf:.3e}, odometry {i_odo:.4}]",
            elapsed.as_secs_f64()
        ),
    )
}

fn noiseless_run() -> RunLog {
    let mut sc = Scenario::rectangular_room_loop(0).noiseless();
    sc.commands = oval_loop(&sc.robot, 0.25, 2.0, 100, 150);
    assert_eq!(sc.total_steps(), NOISELESS_STEPS);
    run_scenario(&sc).expect("noiseless scenario runs")
}

fn noiseless_consistency(log: &RunLog) -> Outcome {
    let worst = log
        .records
        .iter()
        .flat_map(|r| [Estimator::Odometry, Estimator::EkfLrf, Estimator::EkfFull].map(|e| r.error(e)))
        .fold(0.0, f64::max);
    Outcome::new(
        worst < NOISELESS_TOL && log.records.len() == NOISELESS_STEPS + 1,
        format!("max position error {worst:.1e} m over {} steps", log.records.len() - 1),
    )
}

fn determinism() -> Outcome {
    let sc = Scenario::rectangular_room_loop(7);
    let a = run_scenario(&sc).unwrap().to_csv_string();
    let b = run_scenario(&sc).unwrap().to_csv_string();
    Outcome::new(a == b, format!("{} bytes per run, identical: {}", a.len(), a == b))
}

fn throughput() -> Outcome {
    let world = common::room();
    let cfg = ExtractionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = Duration::ZERO;
    let mut total = Duration::ZERO;
    for k in 0..THROUGHPUT_SCANS {
        let pose = Pose::new(
            rng.random_range(0.8..4.2),
            rng.random_range(0.8..3.2),
            rng.random_range(-PI..PI),
        );
        let mut noise = stream_rng(k as u64, Stream::Range);
        let scan = LabeledScan::take(&world, pose, &SensorConfig::default(), &mut noise).scan;
        let t = Instant::now();
        let segs = extract_segments(&scan, &cfg);
        let dt = t.elapsed();
        std::hint::black_box(segs);
        worst = worst.max(dt);
        total += dt;
    }
    Outcome::new(
        worst < PER_SCAN_BUDGET,
        format!(
            "361-point scans: worst {:.2} ms, mean {:.2} ms (budget 50 ms)",
            worst.as_secs_f64() * 1e3,
            total.as_secs_f64() * 1e3 / THROUGHPUT_SCANS as f64
        ),
    )
}

fn main() {
    let mut results: Vec<(u8, &str, Outcome)> = vec![
        (1, "Jacobian fidelity", jacobian_fidelity()),
        (2, "Transform-path equivalence", transform_path_equivalence()),
        (3, "Extraction recovery", extraction_recovery()),
        (4, "Dynamic-threshold superset", dynamic_superset()),
        (5, "Line covariance vs Monte Carlo", deriche_vs_monte_carlo()),
        (6, "Matching correctness", matching_correctness()),
    ];

    let t = Instant::now();
    let first_scan = localization_runs(true);
    let elapsed = t.elapsed();
    let injected = localization_runs(false);
    let noiseless = noiseless_run();
    let mut all_logs: Vec<&RunLog> = first_scan.iter().chain(&injected).collect();
    all_logs.push(&noiseless);
    results.push((7, "Filter health", health_of(&all_logs)));
    results.push((8, "Localization ordering", localization_ordering(&first_scan, elapsed, &injected)));
    results.push((9, "Noiseless consistency", noiseless_consistency(&noiseless)));
    results.push((10, "Determinism", determinism()));
    results.push((11, "Extraction throughput", throughput()));

    let mut failed = 0;
    for (n, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} [{tag}] {name}: {}", o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
