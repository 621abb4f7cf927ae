//! Run configuration, loaded from one TOML file and patched by flags.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use setback::ingest::{IngestConfig, MeterSchema, WapClassifier, WifiSchema};
use setback::preprocess::{ClassThresholds, CleaningConfig, NormScope};
use setback::savings::SavingsMode;
use setback::schedule::EveningLag;

use crate::error::CliError;
use crate::report::ReportFormat;

pub const DEFAULT_SPLIT: &str = "2019-08-23";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// First day of the fall semester.
    pub split: NaiveDate,
    pub paths: PathsConfig,
    pub ingest: IngestSection,
    pub preprocess: PreprocessSection,
    pub cluster: ClusterSection,
    pub schedule: ScheduleSection,
    pub savings: SavingsSection,
    pub report: ReportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            split: DEFAULT_SPLIT.parse().expect("valid date"),
            paths: PathsConfig::default(),
            ingest: IngestSection::default(),
            preprocess: PreprocessSection::default(),
            cluster: ClusterSection::default(),
            schedule: ScheduleSection::default(),
            savings: SavingsSection::default(),
            report: ReportSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub wifi: Option<PathBuf>,
    pub meter: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { wifi: None, meter: None, out: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestSection {
    #[serde(flatten)]
    pub config: IngestConfig,
    pub wifi_columns: WifiSchema,
    pub meter_columns: MeterSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessSection {
    pub short_stay_max_min: u32,
    pub regular_max_min: u32,
    #[serde(flatten)]
    pub cleaning: CleaningConfig,
    pub norm_scope: NormScope,
    /// Analysis period; defaults to the span of the data.
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let t = ClassThresholds::default();
        Self {
            short_stay_max_min: t.short_stay_max_min,
            regular_max_min: t.regular_max_min,
            cleaning: CleaningConfig::default(),
            norm_scope: NormScope::default(),
            start: None,
            end: None,
        }
    }
}

impl PreprocessSection {
    pub fn thresholds(&self) -> ClassThresholds {
        ClassThresholds { short_stay_max_min: self.short_stay_max_min, regular_max_min: self.regular_max_min }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSection {
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    /// Defaults to the top-level seed.
    pub seed: Option<u64>,
    pub k_override: Option<usize>,
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self { k_min: 2, k_max: 10, restarts: 20, seed: None, k_override: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSection {
    /// Sign applied to τ at the evening end: -1 gives `t_d - τ`, +1 `t_d + τ`.
    pub tau_sign_evening: EveningLag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SavingsSection {
    pub mode: SavingsMode,
    pub delta: Vec<f64>,
    pub tau: u8,
    pub sweep_morning: Vec<i32>,
    pub sweep_evening: Vec<i32>,
}

impl Default for SavingsSection {
    fn default() -> Self {
        Self {
            mode: SavingsMode::Centroid,
            delta: vec![0.05, 0.10, 0.15],
            tau: 2,
            sweep_morning: vec![0, 1, 2],
            sweep_evening: vec![0, -1, -2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportSection {
    pub formats: Vec<ReportFormat>,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self { formats: vec![ReportFormat::Csv, ReportFormat::Table] }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // relative input paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.paths.wifi, &mut config.paths.meter].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn cluster_seed(&self) -> u64 {
        self.cluster.seed.unwrap_or(self.seed)
    }

    /// Checks everything that can be checked before touching data.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.savings.delta.is_empty() {
            return bad("savings.delta must not be empty".into());
        }
        if let Some(d) = self.savings.delta.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
            return bad(format!("delta {d} outside (0, 1)"));
        }
        if self.savings.tau > 23 {
            return bad(format!("tau {} exceeds 23 hours", self.savings.tau));
        }
        if self.cluster.k_min == 0 || self.cluster.k_min > self.cluster.k_max {
            return bad(format!(
                "need 1 <= cluster.k_min <= cluster.k_max, got {}..{}",
                self.cluster.k_min, self.cluster.k_max
            ));
        }
        if self.cluster.restarts == 0 {
            return bad("cluster.restarts must be positive".into());
        }
        if self.cluster.k_override == Some(0) {
            return bad("cluster.k_override must be positive".into());
        }
        if self.preprocess.short_stay_max_min > self.preprocess.regular_max_min {
            return bad("short_stay_max_min exceeds regular_max_min".into());
        }
        if let (Some(s), Some(e)) = (self.preprocess.start, self.preprocess.end) {
            if s > e {
                return bad(format!("preprocess.start {s} after end {e}"));
            }
        }
        if self.savings.sweep_morning.is_empty() || self.savings.sweep_evening.is_empty() {
            return bad("sweep grids must not be empty".into());
        }
        WapClassifier::new(&self.ingest.config.wap_pattern).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Input paths that the ingest stage needs.
    pub fn inputs(&self) -> Result<(PathBuf, PathBuf), CliError> {
        let get = |p: &Option<PathBuf>, name: &str| match p {
            Some(p) if p.exists() => Ok(p.clone()),
            Some(p) => Err(CliError::Config(format!("paths.{name} {} does not exist", p.display()))),
            None => Err(CliError::Config(format!("paths.{name} is not set"))),
        };
        Ok((get(&self.paths.wifi, "wifi")?, get(&self.paths.meter, "meter")?))
    }

    /// The split must fall inside the analysis period.
    pub fn check_period(&self, start: NaiveDate, end: NaiveDate) -> Result<(), CliError> {
        if self.split <= start || self.split > end {
            return Err(CliError::Config(format!("split date {} outside analysis period {start}..{end}", self.split)));
        }
        Ok(())
    }
}
