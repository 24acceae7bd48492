//! `jitai`: command-line entry point over the engine, simulator and exports.
//!
//! Exit codes: 0 on success, 1 on bad input or usage, 2 on I/O failure.
//! Diagnostics go to stderr; data goes to files or stdout.

mod commands;
#[cfg(feature = "live")]
mod live;

use std::ffi::OsString;
use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use jitai_core::sim::Scenario;
use jitai_core::{Error, Mechanism, Phase};

#[derive(Debug, Parser)]
#[command(
    name = "jitai",
    version,
    about = "Just-in-time heat and noise interventions: simulate, train, plan, export",
    arg_required_else_help = true
)]
pub struct Cli {
    /// Raise log verbosity on stderr (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Append survey, sensor and weather JSONL lines to a store snapshot.
    Ingest(IngestArgs),
    /// Generate a synthetic cohort and replay the deployment into a run directory.
    Simulate(SimulateArgs),
    /// Train a participant's thermal and noise models from their first surveys.
    Train(TrainArgs),
    /// Print a participant's personalized plan for one day as CSV.
    Plan(PlanArgs),
    /// Run the engine over stored surveys and sensor data against a weather fixture.
    Replay(ReplayArgs),
    /// Recompute per-participant message counts of a run directory.
    Summarize(SummarizeArgs),
    /// Bin sent notifications into hexagonal cells and write GeoJSON.
    Bin(BinArgs),
    /// Write long-format CSV exports of a store into a directory.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// JSONL file, or `-` for stdin.
    pub input: PathBuf,
    /// Snapshot directory; created when missing.
    #[arg(long, default_value = "store")]
    pub store: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Cohort TOML file.
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub participants: Option<usize>,
    #[arg(long)]
    pub weekdays: Option<u32>,
    /// Built-in weather curve; replaces any fixture named in the config.
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioArg>,
    #[arg(long, value_enum)]
    pub phase: Option<PhaseArg>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub participant: String,
    /// Run directory or store snapshot.
    #[arg(long, default_value = ".")]
    pub data: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training seed; defaults to the run's seed, else 7.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub participant: String,
    /// Local date, `YYYY-MM-DD`.
    #[arg(long)]
    pub date: NaiveDate,
    #[arg(long, default_value = ".")]
    pub data: PathBuf,
    /// Models written by `train`; trained on the fly when omitted.
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Run directory or store snapshot holding surveys and sensor data.
    #[arg(long)]
    pub data: PathBuf,
    /// Weather fixture CSV; also defines the station registry.
    #[arg(long)]
    pub weather: PathBuf,
    /// First local date replayed.
    #[arg(long)]
    pub from: NaiveDate,
    /// Last local date replayed (inclusive).
    #[arg(long)]
    pub to: NaiveDate,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "phase2")]
    pub phase: PhaseArg,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Message templates JSON; built-in set when omitted.
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    pub dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BinArgs {
    pub dir: PathBuf,
    #[arg(long, default_value_t = jitai_core::spatial::DEFAULT_EDGE_M)]
    pub hex_edge_m: f64,
    /// Projection origin `LAT,LON`; centroid of sent notifications when omitted.
    #[arg(long, value_parser = parse_point)]
    pub origin: Option<(f64, f64)>,
    #[arg(long, value_enum)]
    pub mechanism: Option<MechanismArg>,
    /// Region `LAT,LON;LAT,LON;...`; prints the share of sent messages inside it.
    #[arg(long)]
    pub polygon: Option<String>,
    /// GeoJSON output; `<dir>/hexbins.geojson` when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Output directory.
    pub dir: PathBuf,
    /// Run directory or store snapshot to read.
    #[arg(long)]
    pub store: PathBuf,
    /// Series to export (comma-separated); all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub series: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub participant: Vec<String>,
    /// Inclusive lower bound, RFC 3339.
    #[arg(long)]
    pub from: Option<String>,
    /// Exclusive upper bound, RFC 3339.
    #[arg(long)]
    pub to: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ScenarioArg {
    AlwaysHot,
    NeverHot,
    Diurnal,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::AlwaysHot => Scenario::AlwaysHot,
            ScenarioArg::NeverHot => Scenario::NeverHot,
            ScenarioArg::Diurnal => Scenario::Diurnal,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PhaseArg {
    Phase1,
    Phase2,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Phase1 => Phase::Phase1,
            PhaseArg::Phase2 => Phase::Phase2,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MechanismArg {
    Threshold,
    Personalized,
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::Threshold => Mechanism::Threshold,
            MechanismArg::Personalized => Mechanism::Personalized,
        }
    }
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (lat, lon) = s
        .split_once(',')
        .ok_or_else(|| format!("expected LAT,LON, got `{s}`"))?;
    let lat: f64 = lat.trim().parse().map_err(|e| format!("latitude: {e}"))?;
    let lon: f64 = lon.trim().parse().map_err(|e| format!("longitude: {e}"))?;
    Ok((lat, lon))
}

/// Exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 2,
        _ => 1,
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    init_logging(cli.verbose);
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}
