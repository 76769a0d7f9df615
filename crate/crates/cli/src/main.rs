//! Batch runner: simulate localization runs, extract segments from scan logs,
//! match segments against a map and validate input files.

mod commands;
mod files;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::{Failure, Progress};
use files::FileKind;
use segekf_core::extraction::ThresholdMode;
use segekf_core::geometry::Pose;

#[derive(Parser)]
#[command(name = "segekf", version, about)]
struct Cli {
    /// Suppress progress output
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and write run logs, deviations, plots and a summary
    Localize {
        scenario: PathBuf,
        /// Output directory
        #[arg(short, long)]
        out: PathBuf,
        /// Seeds to run (comma separated); defaults to $SEGEKF_SEED, then the scenario seed
        #[arg(short, long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Extract line segments from every scan of a scan log
    Extract {
        scan_log: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Config file with [extraction] settings
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Override the threshold mode of the config
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Pair robot-frame segments from a segment CSV with the walls of a map
    Match {
        segments: PathBuf,
        map: PathBuf,
        /// Odometry pose as x,y,theta (m, m, rad)
        #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
        odom: Pose,
        #[arg(short, long)]
        out: PathBuf,
        /// Config file with [matching] gates
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Validate a scenario, map or config file
    Check {
        file: PathBuf,
        /// File kind; guessed from the top-level keys when omitted
        #[arg(long)]
        kind: Option<Kind>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fixed,
    Dynamic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Scenario,
    Map,
    Config,
}

fn parse_pose(s: &str) -> Result<Pose, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("{e} in {s:?}"))?;
    match v[..] {
        [x, y, theta] if v.iter().all(|c| c.is_finite()) => Ok(Pose::new(x, y, theta)),
        _ => Err(format!("expected three finite numbers x,y,theta, got {s:?}")),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let progress = Progress { quiet: cli.quiet };
    match cli.command {
        Cmd::Localize { scenario, out, seeds } => commands::localize(&scenario, &out, &seeds, progress),
        Cmd::Extract {
            scan_log,
            out,
            config,
            mode,
        } => {
            let mode = mode.map(|m| match m {
                Mode::Fixed => ThresholdMode::Fixed,
                Mode::Dynamic => ThresholdMode::Dynamic,
            });
            commands::extract(&scan_log, config.as_deref(), mode, &out, progress)
        }
        Cmd::Match {
            segments,
            map,
            odom,
            out,
            config,
        } => commands::match_maps(&segments, &map, odom, config.as_deref(), &out, progress),
        Cmd::Check { file, kind } => {
            let kind = kind.map(|k| match k {
                Kind::Scenario => FileKind::Scenario,
                Kind::Map => FileKind::Map,
                Kind::Config => FileKind::Config,
            });
            commands::check(&file, kind)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("segekf: {f}");
            ExitCode::from(f.exit_code())
        }
        Err(_) => {
            eprintln!("segekf: internal error");
            ExitCode::from(2)
        }
    }
}
