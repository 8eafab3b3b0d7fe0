//! `perr`: matched-cohort PERR analyses, event-dependent treatment checks and
//! simulation studies from the command line.

mod commands;
mod input;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use input::CohortArgs;

#[derive(Debug, Parser)]
#[command(name = "perr", version, about = "Prior event rate ratio analyses and simulation studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a 1:1 matched cohort from treated participants and a control pool.
    Match(MatchArgs),
    /// Estimate PERR with the two-model, interaction and Andersen-Gill methods.
    Perr(PerrArgs),
    /// Profile event-dependent treatment and correct the Andersen-Gill estimate.
    Edt(EdtArgs),
    /// Run a Monte-Carlo scenario (a preset, a preset group, or a TOML file).
    Simulate(SimulateArgs),
    /// List the scenario catalog.
    Presets(PresetsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Random seed; recorded in every output.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Output directory; nothing is written elsewhere.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Format of the report files.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    /// Worker threads (defaults to the number of cores).
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,
}

#[derive(Debug, Clone, Args)]
pub struct WindowArgs {
    /// Days of prior period kept before the index time.
    #[arg(long, default_value_t = 150.0, value_name = "DAYS")]
    pub prior_days: f64,

    /// Days of post period kept after the index time.
    #[arg(long, default_value_t = 150.0, value_name = "DAYS")]
    pub post_days: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Choice {
    /// First eligible control in file order.
    PoolOrder,
    /// Eligible control whose follow-up ends soonest.
    ClosestEnd,
}

#[derive(Debug, Clone, Args)]
pub struct MatchArgs {
    #[command(flatten)]
    pub input: CohortArgs,

    /// Covariate columns that must agree exactly, comma-separated.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub keys: Vec<String>,

    /// Rule for picking among eligible controls.
    #[arg(long, value_enum, default_value_t = Choice::PoolOrder)]
    pub choice: Choice,

    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct PerrArgs {
    #[command(flatten)]
    pub input: CohortArgs,

    #[command(flatten)]
    pub window: WindowArgs,

    /// Estimators to run, comma-separated: original, cox, ag.
    #[arg(long = "method", value_delimiter = ',', default_value = "original,cox,ag")]
    pub methods: Vec<perr_core::perr::Method>,

    /// Pair-bootstrap replicates for the two-model estimator.
    #[arg(long, default_value_t = perr_core::perr::DEFAULT_BOOTSTRAP_REPS)]
    pub bootstrap: usize,

    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct EdtArgs {
    #[command(flatten)]
    pub input: CohortArgs,

    #[command(flatten)]
    pub window: WindowArgs,

    /// Number of post-period sub-periods in the detection model.
    #[arg(long = "m", value_name = "M", required = true)]
    pub gaps: usize,

    /// Width of each sub-period in days.
    #[arg(long, value_name = "DAYS", required = true)]
    pub gap_width: f64,

    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
#[group(id = "scenario_source", required = true, args = ["scenario", "config"])]
pub struct SimulateArgs {
    /// Preset or preset-group name (see `perr presets`).
    #[arg(value_name = "SCENARIO")]
    pub scenario: Option<String>,

    /// Scenario TOML file.
    #[arg(long, value_name = "TOML", conflicts_with = "scenario")]
    pub config: Option<PathBuf>,

    /// Replicates per scenario, overriding the scenario's own count.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub replicates: Option<u32>,

    /// Seed for the scenarios; defaults to each scenario's own seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory; nothing is written elsewhere.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Also write summary.json next to the CSV files.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Worker threads (defaults to the number of cores).
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,

    /// Write replicate 0's population and matched cohort as CSV files.
    #[arg(long)]
    pub export_cohort: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PresetsArgs {
    /// Print one scenario as TOML, ready to edit and pass to `--config`.
    #[arg(long, value_name = "NAME")]
    pub show: Option<String>,

    /// Print the catalog as JSON instead of a table.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

/// A user error caught after parsing; exits with the usage code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.chain().find_map(|e| e.downcast_ref::<perr_core::Error>()) {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn threads(n: Option<u16>) -> anyhow::Result<()> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let started = Instant::now();
    let result = match &cli.command {
        Command::Match(a) => threads(a.common.threads).and_then(|_| commands::run_match(a)),
        Command::Perr(a) => threads(a.common.threads).and_then(|_| commands::run_perr(a)),
        Command::Edt(a) => threads(a.common.threads).and_then(|_| commands::run_edt(a)),
        Command::Simulate(a) => threads(a.threads).and_then(|_| commands::run_simulate(a)),
        Command::Presets(a) => commands::run_presets(a),
    };
    match result {
        Ok(()) => {
            if !matches!(cli.command, Command::Presets(_)) {
                eprintln!("done in {:.1}s", started.elapsed().as_secs_f64());
            }
            ExitCode::SUCCESS
        }
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
