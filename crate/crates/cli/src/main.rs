use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use setback::savings::SavingsMode;
use setback_cli::commands::{load_campus_spec, synth};
use setback_cli::config::RunConfig;
use setback_cli::error::{CliError, Result, Stage};
use setback_cli::report::ReportFormat;
use setback_cli::stages::{run_stages, stage_range};

/// Occupant-derived HVAC setback schedules and savings estimates from WiFi
/// connection logs and chilled-water meter readings.
#[derive(Debug, Parser)]
#[command(name = "setback", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that patch the loaded configuration.
#[derive(Debug, Args)]
struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated occupancy thresholds, e.g. 0.05,0.10,0.15.
    #[arg(long, global = true, value_delimiter = ',')]
    delta: Option<Vec<f64>>,
    /// Setback lag in hours.
    #[arg(long, global = true)]
    tau: Option<u8>,
    /// Fixed k for every data set instead of elbow selection.
    #[arg(long, global = true)]
    k_override: Option<usize>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Comma-separated report formats.
    #[arg(long, global = true, value_enum, value_delimiter = ',')]
    format: Option<Vec<ReportFormat>>,
    /// WiFi connection log, overriding paths.wifi.
    #[arg(long, global = true)]
    wifi: Option<PathBuf>,
    /// Meter log, overriding paths.meter.
    #[arg(long, global = true)]
    meter: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Mode {
    Centroid,
    Actual,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic campus: wifi.csv, meter.csv, truth.json, config.toml.
    Synth {
        /// Campus spec (TOML).
        #[arg(long)]
        spec: PathBuf,
    },
    /// Parse and validate the input logs.
    Ingest,
    /// Classify devices, clean and normalize hourly series.
    Preprocess,
    /// Cluster daily profiles and build schedule tables.
    Cluster,
    /// Extract occupancy and demand signals.
    Schedule,
    /// Estimate savings for every δ.
    Savings,
    /// Shift the static schedule over the sweep grid.
    Sweep,
    /// Render tables and charts.
    Report,
    /// Run a range of stages.
    Run {
        /// Every stage, ingest through report.
        #[arg(long, conflicts_with_all = ["from", "to"])]
        all: bool,
        #[arg(long, value_enum)]
        from: Option<Stage>,
        #[arg(long, value_enum)]
        to: Option<Stage>,
    },
}

impl Overrides {
    fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.out {
            c.paths.out = v.clone();
        }
        if let Some(v) = &self.wifi {
            c.paths.wifi = Some(v.clone());
        }
        if let Some(v) = &self.meter {
            c.paths.meter = Some(v.clone());
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.delta {
            c.savings.delta = v.clone();
        }
        if let Some(v) = self.tau {
            c.savings.tau = v;
        }
        if let Some(v) = self.k_override {
            c.cluster.k_override = Some(v);
        }
        if let Some(v) = self.mode {
            c.savings.mode = match v {
                Mode::Centroid => SavingsMode::Centroid,
                Mode::Actual => SavingsMode::Actual,
            };
        }
        if let Some(v) = &self.format {
            c.report.formats = v.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn execute(cli: Cli) -> Result<()> {
    let stages = match cli.command {
        Command::Synth { spec } => {
            let mut campus = load_campus_spec(&spec)?;
            if let Some(seed) = cli.overrides.seed {
                campus.seed = seed;
            }
            let out = cli.overrides.out.unwrap_or_else(|| PathBuf::from("."));
            let (generated, files) = synth(&campus, &out)?;
            info!(
                "synth: {} buildings, {} events, {} readings",
                generated.truth.len(),
                generated.events.len(),
                generated.readings.len()
            );
            for f in files {
                println!("{}", f.display());
            }
            return Ok(());
        }
        Command::Ingest => vec![Stage::Ingest],
        Command::Preprocess => vec![Stage::Preprocess],
        Command::Cluster => vec![Stage::Cluster],
        Command::Schedule => vec![Stage::Schedule],
        Command::Savings => vec![Stage::Savings],
        Command::Sweep => vec![Stage::Sweep],
        Command::Report => vec![Stage::Report],
        Command::Run { all, from, to } => {
            if !all && from.is_none() && to.is_none() {
                return Err(CliError::Config("run needs --all or a --from/--to range".into()));
            }
            let range = stage_range(from.unwrap_or(Stage::Ingest), to.unwrap_or(Stage::Report));
            if range.is_empty() {
                return Err(CliError::Config("empty stage range".into()));
            }
            range
        }
    };
    let config = cli.overrides.config()?;
    run_stages(&config, &stages)?;
    println!("{}", config.paths.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MARTINI_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
