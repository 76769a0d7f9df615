//! TOML input files: scenarios, maps and extraction/matching configs.
//!
//! Every file carries `schema = 1`; unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use segekf_core::extraction::ExtractionConfig;
use segekf_core::geometry::{Pose, Segment};
use segekf_core::kinematics::{RobotParams, WheelSpeeds, DEFAULT_ENCODER_DELTA};
use segekf_core::matching::{GlobalMap, MatchConfig};
use segekf_core::sim::{oval_loop, Command, FilterConfig, Scenario, SensorConfig, World};

pub const SCHEMA_VERSION: u32 = 1;

/// A problem with user input, located in a file when possible.
#[derive(Debug)]
pub struct InputError {
    pub path: PathBuf,
    pub position: Option<(usize, usize)>,
    pub message: String,
}

impl InputError {
    pub fn new(path: &Path, message: impl Into<String>) -> Self {
        Self {
            path: path.to_path_buf(),
            position: None,
            message: message.into(),
        }
    }

    pub fn at_line(path: &Path, line: usize, message: impl Into<String>) -> Self {
        Self {
            position: Some((line, 1)),
            ..Self::new(path, message)
        }
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.position {
            Some((line, col)) => write!(f, "{}:{line}:{col}: {}", self.path.display(), self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

impl std::error::Error for InputError {}

pub type InputResult<T> = Result<T, InputError>;

pub fn read_text(path: &Path) -> InputResult<String> {
    std::fs::read_to_string(path).map_err(|e| InputError::new(path, format!("cannot read file: {e}")))
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> InputResult<T> {
    toml::from_str(text).map_err(|e| InputError {
        path: path.to_path_buf(),
        position: e.span().map(|s| line_col(text, s.start)),
        message: e.message().trim().to_string(),
    })
}

fn check_schema(path: &Path, schema: u32) -> InputResult<()> {
    if schema == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(InputError::new(
            path,
            format!("unsupported schema {schema}, expected {SCHEMA_VERSION}"),
        ))
    }
}

/// Walls as `[x1, y1, x2, y2]` in meters.
fn segments(walls: &[[f64; 4]]) -> Vec<Segment> {
    walls
        .iter()
        .map(|&[x1, y1, x2, y2]| Segment::from_coords(x1, y1, x2, y2))
        .collect()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapFile {
    schema: u32,
    walls: Vec<[f64; 4]>,
}

pub fn load_map(path: &Path) -> InputResult<GlobalMap> {
    let text = read_text(path)?;
    let file: MapFile = parse_toml(path, &text)?;
    check_schema(path, file.schema)?;
    GlobalMap::new(segments(&file.walls)).map_err(|e| InputError::new(path, e.to_string()))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    schema: u32,
    #[serde(default)]
    extraction: ExtractionConfig,
    #[serde(default)]
    matching: MatchConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Config {
    pub extraction: ExtractionConfig,
    pub matching: MatchConfig,
}

pub fn load_config(path: &Path) -> InputResult<Config> {
    let text = read_text(path)?;
    let file: ConfigFile = parse_toml(path, &text)?;
    check_schema(path, file.schema)?;
    let invalid = |e: segekf_core::Error| InputError::new(path, e.to_string());
    file.extraction.validate().map_err(invalid)?;
    file.matching.validate().map_err(invalid)?;
    Ok(Config {
        extraction: file.extraction,
        matching: file.matching,
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotSection {
    wheel_radius: f64,
    axle_length: f64,
    sample_period: f64,
}

impl Default for RobotSection {
    fn default() -> Self {
        let p = RobotParams::default();
        Self {
            wheel_radius: p.wheel_radius,
            axle_length: p.axle_length,
            sample_period: p.sample_period,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseSection {
    x: f64,
    y: f64,
    theta: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommandSection {
    omega_l: f64,
    omega_r: f64,
    steps: usize,
}

/// Closed loop of two straights and two counter-clockwise half turns.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OvalSection {
    speed: f64,
    straight: f64,
    straight_steps: usize,
    turn_steps: usize,
    #[serde(default = "one")]
    laps: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema: u32,
    seed: u64,
    #[serde(default = "default_encoder_delta")]
    encoder_delta: f64,
    walls: Vec<[f64; 4]>,
    #[serde(default)]
    robot: RobotSection,
    start: PoseSection,
    #[serde(default)]
    commands: Vec<CommandSection>,
    oval: Option<OvalSection>,
    #[serde(default)]
    sensor: SensorConfig,
    #[serde(default)]
    extraction: ExtractionConfig,
    #[serde(default)]
    matching: MatchConfig,
    #[serde(default)]
    filter: FilterConfig,
}

fn default_encoder_delta() -> f64 {
    DEFAULT_ENCODER_DELTA
}

pub fn load_scenario(path: &Path) -> InputResult<Scenario> {
    let text = read_text(path)?;
    let file: ScenarioFile = parse_toml(path, &text)?;
    check_schema(path, file.schema)?;
    let invalid = |m: String| InputError::new(path, m);

    let robot = RobotParams {
        wheel_radius: file.robot.wheel_radius,
        axle_length: file.robot.axle_length,
        sample_period: file.robot.sample_period,
    };
    let mut commands: Vec<Command> = file
        .commands
        .iter()
        .map(|c| Command {
            speeds: WheelSpeeds::new(c.omega_l, c.omega_r),
            steps: c.steps,
        })
        .collect();
    match (&file.oval, commands.is_empty()) {
        (Some(o), true) => {
            let lap = oval_loop(&robot, o.speed, o.straight, o.straight_steps, o.turn_steps);
            for _ in 0..o.laps {
                commands.extend_from_slice(&lap);
            }
        }
        (Some(_), false) => return Err(invalid("give either `commands` or `oval`, not both".into())),
        (None, true) => return Err(invalid("missing motion: give `commands` or `oval`".into())),
        (None, false) => {}
    }

    let world = World::new(segments(&file.walls)).map_err(|e| invalid(e.to_string()))?;
    let sc = Scenario {
        world,
        robot,
        start: Pose::new(file.start.x, file.start.y, file.start.theta),
        commands,
        seed: file.seed,
        encoder_delta: file.encoder_delta,
        sensor: file.sensor,
        extraction: file.extraction,
        matching: file.matching,
        filter: file.filter,
    };
    sc.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(sc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Scenario,
    Map,
    Config,
}

impl fmt::Display for FileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FileKind::Scenario => "scenario",
            FileKind::Map => "map",
            FileKind::Config => "config",
        })
    }
}

/// Guesses the kind of a file from its top-level keys.
pub fn detect_kind(path: &Path) -> InputResult<FileKind> {
    let text = read_text(path)?;
    let table: toml::Table = parse_toml(path, &text)?;
    Ok(if table.contains_key("start") {
        FileKind::Scenario
    } else if table.contains_key("walls") {
        FileKind::Map
    } else {
        FileKind::Config
    })
}

/// Fully validates a file of the given kind.
pub fn check(path: &Path, kind: FileKind) -> InputResult<()> {
    match kind {
        FileKind::Scenario => load_scenario(path).map(drop),
        FileKind::Map => load_map(path).map(drop),
        FileKind::Config => load_config(path).map(drop),
    }
}
