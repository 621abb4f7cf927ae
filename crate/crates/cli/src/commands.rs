//! Subcommands that do not belong to the staged pipeline.

use std::path::{Path, PathBuf};

use setback::ingest::{write_connection_csv, write_meter_csv};
use setback::synth::{gen_campus, CampusSpec, Generated};

use crate::artifacts::{create, write_json};
use crate::error::{CliError, Result, Stage};

pub const SYNTH_WIFI: &str = "wifi.csv";
pub const SYNTH_METER: &str = "meter.csv";
pub const SYNTH_TRUTH: &str = "truth.json";
pub const SYNTH_CONFIG: &str = "config.toml";

pub fn load_campus_spec(path: &Path) -> Result<CampusSpec> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Generates a campus and writes the two input logs, the ground truth and a
/// config pointing at the logs. Returns the written files.
pub fn synth(campus: &CampusSpec, out: &Path) -> Result<(Generated, Vec<PathBuf>)> {
    let generated = gen_campus(campus).map_err(|e| CliError::Config(e.to_string()))?;
    // synth shares the ingest stage's error scope: both produce the input logs
    let stage = Stage::Ingest;
    let fail = |p: &Path, e: csv::Error| CliError::stage(stage, format!("{}: {e}", p.display()));
    let wifi = out.join(SYNTH_WIFI);
    write_connection_csv(create(stage, &wifi)?, &generated.events).map_err(|e| fail(&wifi, e))?;
    let meter = out.join(SYNTH_METER);
    write_meter_csv(create(stage, &meter)?, &generated.readings).map_err(|e| fail(&meter, e))?;
    let truth = out.join(SYNTH_TRUTH);
    write_json(stage, &truth, &generated.truth)?;
    let config = out.join(SYNTH_CONFIG);
    let text = format!("seed = {}\n\n[paths]\nwifi = \"{SYNTH_WIFI}\"\nmeter = \"{SYNTH_METER}\"\n", campus.seed);
    std::fs::write(&config, text).map_err(|e| CliError::stage(stage, format!("{}: {e}", config.display())))?;
    Ok((generated, vec![wifi, meter, truth, config]))
}
