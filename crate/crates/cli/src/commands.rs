use std::fmt;
use std::io::BufReader;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use segekf_core::extraction::{
    extract_segments, parse_scan_log, ExtractedSegment, FitAxes, Scan, ThresholdMode,
};
use segekf_core::geometry::{polar_to_cartesian, segment_to_robot_frame, NormalLine, Point2, Pose, Segment};
use segekf_core::matching::{match_segments, GlobalMap, LocalLine, MatchConfig, MatchPair};
use segekf_core::sim::{run_scenario, Estimator, RunLog, Scenario};

use crate::files::{self, FileKind, InputError};
use crate::output::{csv_bytes, with_outputs};
use crate::svg::Plot;

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Input(InputError),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(e) => write!(f, "input error: {e}"),
            Failure::Runtime(e) => write!(f, "runtime error: {e:#}"),
        }
    }
}

impl From<InputError> for Failure {
    fn from(e: InputError) -> Self {
        Failure::Input(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

pub type CmdResult = Result<(), Failure>;

/// Prints progress unless quiet.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    pub quiet: bool,
}

impl Progress {
    fn note(&self, msg: impl fmt::Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

// ---- localize --------------------------------------------------------------

pub const SEED_ENV: &str = "SEGEKF_SEED";

pub const SUMMARY_COLUMNS: [&str; 6] = ["estimator", "runs", "median", "q1", "q3", "iqr"];
pub const DEVIATION_COLUMNS: [&str; 5] = ["step", "t", "odometry", "ekf_lrf", "ekf_full"];

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SummaryRow {
    pub estimator: String,
    pub runs: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DeviationRow {
    step: usize,
    t: f64,
    odometry: f64,
    ekf_lrf: f64,
    ekf_full: f64,
}

const ESTIMATORS: [(Estimator, &str); 3] = [
    (Estimator::Odometry, "odometry"),
    (Estimator::EkfLrf, "ekf_lrf"),
    (Estimator::EkfFull, "ekf_full"),
];

/// Quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(runs: &[(u64, RunLog)]) -> Vec<SummaryRow> {
    ESTIMATORS
        .iter()
        .map(|&(e, name)| {
            let mut errs: Vec<f64> = runs.iter().map(|(_, log)| log.final_error(e)).collect();
            errs.sort_by(f64::total_cmp);
            let (q1, q3) = (quantile(&errs, 0.25), quantile(&errs, 0.75));
            SummaryRow {
                estimator: name.to_string(),
                runs: errs.len(),
                median: quantile(&errs, 0.5),
                q1,
                q3,
                iqr: q3 - q1,
            }
        })
        .collect()
}

fn trajectory_svg(sc: &Scenario, log: &RunLog) -> String {
    let track = |f: fn(&segekf_core::sim::StepRecord) -> Pose| -> Vec<Point2> {
        log.records.iter().map(|r| f(r).position()).collect()
    };
    let truth = track(|r| r.truth);
    let odo = track(|r| r.odometry);
    let lrf = track(|r| r.ekf_lrf);
    let full = track(|r| r.ekf_full);

    let walls = sc.world.walls.iter().flat_map(|w| [w.p1, w.p2]).collect::<Vec<_>>();
    let mut plot = Plot::covering(walls.iter().chain(&truth).chain(&odo));
    for w in &sc.world.walls {
        plot.segment(*w, "#888888", 3.0, false);
    }
    for (pts, color, label) in [
        (&truth, "black", "truth"),
        (&odo, "#d95f02", "odometry"),
        (&lrf, "#1f78b4", "EKF (range finder)"),
        (&full, "#1b9e77", "EKF (range finder + heading)"),
    ] {
        plot.polyline(pts, color);
        plot.legend(label, color);
    }
    plot.render()
}

pub fn localize(scenario: &Path, out_dir: &Path, seeds: &[u64], progress: Progress) -> CmdResult {
    let sc = files::load_scenario(scenario)?;
    let seeds = if !seeds.is_empty() {
        seeds.to_vec()
    } else if let Ok(v) = std::env::var(SEED_ENV) {
        let seed = v.trim().parse().map_err(|_| {
            InputError::new(Path::new(SEED_ENV), format!("not an unsigned integer: {v:?}"))
        })?;
        vec![seed]
    } else {
        vec![sc.seed]
    };

    progress.note(format_args!("running {} seed(s)", seeds.len()));
    let runs: Vec<(u64, RunLog)> = seeds
        .par_iter()
        .map(|&seed| {
            let run = Scenario { seed, ..sc.clone() };
            run_scenario(&run)
                .map(|log| (seed, log))
                .with_context(|| format!("seed {seed}"))
        })
        .collect::<anyhow::Result<_>>()?;

    with_outputs(out_dir, |out| -> CmdResult {
        for (seed, log) in &runs {
            out.write(&format!("runlog_seed{seed}.csv"), log.to_csv_string())?;
            let deviation = log.records.iter().map(|r| DeviationRow {
                step: r.step,
                t: r.t,
                odometry: r.error(Estimator::Odometry),
                ekf_lrf: r.error(Estimator::EkfLrf),
                ekf_full: r.error(Estimator::EkfFull),
            });
            out.write(&format!("deviation_seed{seed}.csv"), csv_bytes(&DEVIATION_COLUMNS, deviation)?)?;
            out.write(&format!("trajectory_seed{seed}.svg"), trajectory_svg(&sc, log))?;
            if !log.skips.is_empty() {
                progress.note(format_args!("seed {seed}: {} correction(s) skipped", log.skips.len()));
            }
        }
        let summary = summarize(&runs);
        for row in &summary {
            progress.note(format_args!(
                "{:>9}: median final error {:.4} m (IQR {:.4})",
                row.estimator, row.median, row.iqr
            ));
        }
        out.write("summary.csv", csv_bytes(&SUMMARY_COLUMNS, summary)?)?;
        Ok(())
    })
}

// ---- extract ---------------------------------------------------------------

pub const SEGMENT_COLUMNS: [&str; 14] = [
    "segment", "first_index", "last_index", "x1", "y1", "x2", "y2", "axes", "m", "k", "rho", "psi",
    "threshold_used", "inliers",
];
pub const TIMING_COLUMNS: [&str; 4] = ["scan", "points", "segments", "micros"];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SegmentRow {
    pub segment: usize,
    pub first_index: usize,
    pub last_index: usize,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    /// `y_on_x` for `y = m x + k`, `x_on_y` for `x = m y + k`.
    pub axes: String,
    pub m: f64,
    pub k: f64,
    pub rho: f64,
    pub psi: f64,
    pub threshold_used: f64,
    pub inliers: usize,
}

impl SegmentRow {
    fn new(i: usize, s: &ExtractedSegment) -> Self {
        Self {
            segment: i,
            first_index: s.first_index(),
            last_index: s.last_index(),
            x1: s.endpoints.p1.x,
            y1: s.endpoints.p1.y,
            x2: s.endpoints.p2.x,
            y2: s.endpoints.p2.y,
            axes: match s.fit.axes {
                FitAxes::YOnX => "y_on_x",
                FitAxes::XOnY => "x_on_y",
            }
            .to_string(),
            m: s.fit.coeffs.m,
            k: s.fit.coeffs.k,
            rho: s.normal.rho,
            psi: s.normal.psi,
            threshold_used: s.threshold_used,
            inliers: s.inliers.len(),
        }
    }

    pub fn local_line(&self) -> LocalLine {
        LocalLine {
            segment: Segment::from_coords(self.x1, self.y1, self.x2, self.y2),
            line: NormalLine::new(self.rho, self.psi),
        }
    }
}

#[derive(Debug, Serialize)]
struct TimingRow {
    scan: usize,
    points: usize,
    segments: usize,
    micros: u128,
}

fn scan_svg(scan: &Scan, segs: &[ExtractedSegment]) -> String {
    let pts: Vec<Point2> = (0..scan.points.len())
        .filter(|&i| !scan.is_capped(i))
        .map(|i| polar_to_cartesian(scan.points[i]))
        .collect();
    let origin = Point2::new(0.0, 0.0);
    let mut plot = Plot::covering(pts.iter().chain([&origin]));
    plot.points(&pts, "#555555");
    for s in segs {
        plot.segment(s.endpoints, "#e7298a", 2.0, false);
    }
    plot.points(&[origin], "black");
    plot.legend(&format!("{} points, {} segments", pts.len(), segs.len()), "black");
    plot.render()
}

pub fn extract(
    scan_log: &Path,
    config: Option<&Path>,
    mode: Option<ThresholdMode>,
    out_dir: &Path,
    progress: Progress,
) -> CmdResult {
    let mut cfg = config.map(files::load_config).transpose()?.unwrap_or_default().extraction;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    let file = std::fs::File::open(scan_log)
        .map_err(|e| InputError::new(scan_log, format!("cannot read file: {e}")))?;
    let scans = parse_scan_log(BufReader::new(file)).map_err(|e| match e {
        segekf_core::Error::ScanLog { line, message } => InputError::at_line(scan_log, line, message),
        other => InputError::new(scan_log, other.to_string()),
    })?;

    with_outputs(out_dir, |out| -> CmdResult {
        let mut timing = Vec::with_capacity(scans.len());
        for (i, scan) in scans.iter().enumerate() {
            let started = Instant::now();
            let segs = extract_segments(scan, &cfg);
            let micros = started.elapsed().as_micros();
            progress.note(format_args!(
                "scan {i}: {} segments in {:.3} ms",
                segs.len(),
                micros as f64 / 1000.0
            ));
            let rows = segs.iter().enumerate().map(|(j, s)| SegmentRow::new(j, s));
            out.write(&format!("segments_{i:04}.csv"), csv_bytes(&SEGMENT_COLUMNS, rows)?)?;
            out.write(&format!("scan_{i:04}.svg"), scan_svg(scan, &segs))?;
            timing.push(TimingRow {
                scan: i,
                points: scan.points.len(),
                segments: segs.len(),
                micros,
            });
        }
        out.write("timing.csv", csv_bytes(&TIMING_COLUMNS, timing)?)?;
        Ok(())
    })
}

// ---- match -----------------------------------------------------------------

pub const PAIR_COLUMNS: [&str; 7] = [
    "local", "global", "rho_residual", "psi_residual", "overlap_1", "overlap_2", "score",
];

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PairRow {
    pub local: usize,
    pub global: usize,
    pub rho_residual: f64,
    pub psi_residual: f64,
    pub overlap_1: f64,
    pub overlap_2: f64,
    pub score: f64,
}

impl From<&MatchPair> for PairRow {
    fn from(p: &MatchPair) -> Self {
        Self {
            local: p.local_index,
            global: p.global_index,
            rho_residual: p.rho_residual(),
            psi_residual: p.psi_residual(),
            overlap_1: p.overlap.0,
            overlap_2: p.overlap.1,
            score: p.score,
        }
    }
}

pub fn read_segments(path: &Path) -> Result<Vec<LocalLine>, InputError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| InputError::new(path, format!("cannot read file: {e}")))?;
    rdr.deserialize::<SegmentRow>()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| {
                let line = e.position().map_or(i + 2, |p| p.line() as usize);
                InputError::at_line(path, line, e.to_string())
            })?;
            let l = row.local_line();
            if l.segment.is_degenerate() || !row.rho.is_finite() || !row.psi.is_finite() {
                return Err(InputError::at_line(path, i + 2, "degenerate or non-finite segment"));
            }
            Ok(l)
        })
        .collect()
}

fn match_svg(locals: &[LocalLine], map: &GlobalMap, odom: Pose, pairs: &[MatchPair]) -> String {
    let globals: Vec<Segment> = map.segments().iter().map(|s| segment_to_robot_frame(*s, odom)).collect();
    let ends: Vec<Point2> = globals
        .iter()
        .chain(locals.iter().map(|l| &l.segment))
        .flat_map(|s| [s.p1, s.p2])
        .collect();
    let mut plot = Plot::covering(&ends);
    for g in &globals {
        plot.segment(*g, "#1f78b4", 2.0, true);
    }
    for (i, l) in locals.iter().enumerate() {
        let paired = pairs.iter().any(|p| p.local_index == i);
        plot.segment(l.segment, if paired { "#e7298a" } else { "#aaaaaa" }, 2.0, false);
    }
    plot.legend("global map (robot frame, dashed)", "#1f78b4");
    plot.legend(&format!("local segments, {} paired", pairs.len()), "#e7298a");
    plot.render()
}

pub fn match_maps(
    segments_csv: &Path,
    map_file: &Path,
    odom: Pose,
    config: Option<&Path>,
    out_dir: &Path,
    progress: Progress,
) -> CmdResult {
    let cfg: MatchConfig = config.map(files::load_config).transpose()?.unwrap_or_default().matching;
    let locals = read_segments(segments_csv)?;
    let map = files::load_map(map_file)?;
    let pairs = match_segments(&locals, &map, odom, &cfg);
    progress.note(format_args!(
        "{} of {} local segments paired with {} map walls",
        pairs.len(),
        locals.len(),
        map.len()
    ));
    with_outputs(out_dir, |out| -> CmdResult {
        out.write("pairs.csv", csv_bytes(&PAIR_COLUMNS, pairs.iter().map(PairRow::from))?)?;
        out.write("match.svg", match_svg(&locals, &map, odom, &pairs))?;
        Ok(())
    })
}

// ---- check -----------------------------------------------------------------

pub fn check(path: &Path, kind: Option<FileKind>) -> CmdResult {
    let kind = match kind {
        Some(k) => k,
        None => files::detect_kind(path)?,
    };
    files::check(path, kind)?;
    println!("{}: valid {kind} file", path.display());
    Ok(())
}
