//! Occupancy-aware HVAC setback analytics.
//!
//! The crate turns raw WiFi connection logs and smart-meter readings into
//! occupant-derived HVAC ramp-up/setback schedules and estimates the chilled
//! water energy that realigning the static schedule would save:
//!
//! 1. [`ingest`] parses and validates the raw logs.
//! 2. [`preprocess`] classifies devices, builds hourly occupancy and demand
//!    series, cleans outliers and normalizes.
//! 3. [`cluster`] groups daily profiles with KMeans and derives calendars and
//!    per-building schedule tables.
//! 4. [`schedule`] extracts time signals from the cluster centroids.
//! 5. [`savings`] builds virtual demand profiles and integrates the savings.
//!
//! [`synth`] generates synthetic campuses with known ground truth together
//! with brute-force oracles used by the test suites.

pub mod cluster;
pub mod ingest;
pub mod preprocess;
pub mod savings;
pub mod schedule;
pub mod synth;
pub mod time;

pub use cluster::{ClusterCalendar, ClusterModel, DailyProfileMatrix, ProfileId, ScheduleTable};
pub use ingest::{ConnectionEvent, MeterReading, WapClassifier, WapLocation};
pub use preprocess::{HourlySeries, NormalizationParams, Quality, SeriesKind};
pub use savings::{SavingsLedger, SweepResult, VirtualProfile};
pub use schedule::{DemandSignals, MissWaste, OccupancySignals, ScheduleParams};
pub use time::{DayGroup, Semester};

/// Hours in a daily profile.
pub const HOURS: usize = 24;

/// A day of hourly values.
pub type DayProfile = [f64; HOURS];
