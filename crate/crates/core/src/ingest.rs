//! Parsing and validation of raw WiFi connection logs and smart-meter logs.
//!
//! Both logs are CSV files with a header row. Rows that fail validation are
//! counted and reported with their line number; parsing only aborts when the
//! share of malformed rows exceeds the configured threshold.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDateTime;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{format_timestamp, TIMESTAMP_FORMAT};

/// Default WAP naming pattern: `<building>-<floor>-<room>`.
pub const DEFAULT_WAP_PATTERN: &str = r"^(?P<building>[A-Za-z0-9]+)-(?P<floor>[0-9]+)-(?P<room>[A-Za-z0-9]+)$";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}` in header")]
    MissingColumn(String),
    #[error(
        "{rejected} of {total} rows malformed ({pct:.2}% > {threshold}%); first: line {}: {}",
        first.line, first.reason
    )]
    TooManyMalformed { rejected: usize, total: usize, pct: f64, threshold: f64, first: RejectedRow },
    #[error("invalid WAP pattern: {0}")]
    Pattern(#[from] regex::Error),
    #[error("WAP pattern must define named groups building, floor and room (missing `{0}`)")]
    PatternGroups(&'static str),
    #[error("duplicate meter reading for {building} at {timestamp}")]
    DuplicateReading { building: String, timestamp: String },
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// One connection of a device to a wireless access point.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConnectionEvent {
    pub timestamp: NaiveDateTime,
    pub building_id: Arc<str>,
    pub wap_name: Arc<str>,
    /// Anonymized device MAC.
    pub device_hash: Arc<str>,
}

/// A five-minute building-level demand reading in kW.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterReading {
    pub timestamp: NaiveDateTime,
    pub building_id: Arc<str>,
    pub demand_kw: f64,
    /// False for readings the cleaning stage must ignore (negative demand).
    pub valid: bool,
}

/// Location decoded from a WAP name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WapLocation {
    pub wap_name: String,
    pub building: Option<String>,
    pub floor: Option<String>,
    pub room: Option<String>,
    pub is_external: bool,
}

/// What to do when a building reports two readings for the same timestamp.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DuplicatePolicy {
    #[default]
    LastWins,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub wap_pattern: String,
    /// Percentage of malformed rows above which parsing aborts.
    pub malformed_abort_pct: f64,
    pub timestamp_format: String,
    pub duplicate_policy: DuplicatePolicy,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            wap_pattern: DEFAULT_WAP_PATTERN.to_string(),
            malformed_abort_pct: 5.0,
            timestamp_format: TIMESTAMP_FORMAT.to_string(),
            duplicate_policy: DuplicatePolicy::LastWins,
        }
    }
}

/// Header names of the connection log columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WifiSchema {
    pub timestamp: String,
    pub building_id: String,
    pub wap_name: String,
    pub device_hash: String,
}

impl Default for WifiSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            building_id: "building_id".into(),
            wap_name: "wap_name".into(),
            device_hash: "device_hash".into(),
        }
    }
}

/// Header names of the meter log columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeterSchema {
    pub timestamp: String,
    pub building_id: String,
    pub demand_kw: String,
}

impl Default for MeterSchema {
    fn default() -> Self {
        Self { timestamp: "timestamp".into(), building_id: "building_id".into(), demand_kw: "demand_kw".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line number in the file, header included.
    pub line: u64,
    pub reason: String,
}

/// Row accounting for one parsed file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub data_rows: usize,
    pub accepted: usize,
    pub rejected: Vec<RejectedRow>,
    /// Readings flagged invalid but kept (meter logs only).
    pub flagged: usize,
}

impl ParseReport {
    pub fn malformed_pct(&self) -> f64 {
        if self.data_rows == 0 {
            0.0
        } else {
            100.0 * self.rejected.len() as f64 / self.data_rows as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub report: ParseReport,
}

/// Shares one allocation between repeated identifiers.
#[derive(Debug, Default)]
struct Interner(HashSet<Arc<str>>);

impl Interner {
    fn get(&mut self, s: &str) -> Arc<str> {
        if let Some(existing) = self.0.get(s) {
            return existing.clone();
        }
        let arc: Arc<str> = Arc::from(s);
        self.0.insert(arc.clone());
        arc
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h.trim() == name).ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

fn check_threshold(report: &ParseReport, threshold: f64) -> Result<()> {
    let pct = report.malformed_pct();
    if pct > threshold {
        return Err(IngestError::TooManyMalformed {
            rejected: report.rejected.len(),
            total: report.data_rows,
            pct,
            threshold,
            first: report.rejected[0].clone(),
        });
    }
    Ok(())
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader)
}

fn field<'r>(record: &'r csv::StringRecord, idx: usize, name: &str) -> std::result::Result<&'r str, String> {
    record.get(idx).map(str::trim).ok_or_else(|| format!("missing field `{name}`"))
}

fn parse_ts(raw: &str, format: &str) -> std::result::Result<NaiveDateTime, String> {
    NaiveDateTime::parse_from_str(raw, format).map_err(|e| format!("bad timestamp `{raw}`: {e}"))
}

pub fn parse_connection_log(
    path: &Path,
    schema: &WifiSchema,
    config: &IngestConfig,
) -> Result<Parsed<ConnectionEvent>> {
    parse_connection_reader(open(path)?, schema, config)
}

pub fn parse_connection_reader<R: Read>(
    reader: R,
    schema: &WifiSchema,
    config: &IngestConfig,
) -> Result<Parsed<ConnectionEvent>> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = [
        column_index(&headers, &schema.timestamp)?,
        column_index(&headers, &schema.building_id)?,
        column_index(&headers, &schema.wap_name)?,
        column_index(&headers, &schema.device_hash)?,
    ];

    let mut interner = Interner::default();
    let mut records = Vec::new();
    let mut report = ParseReport::default();
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(e) => {
                report.data_rows += 1;
                report.rejected.push(RejectedRow { line, reason: e.to_string() });
                continue;
            }
        }
        report.data_rows += 1;
        let parsed = (|| {
            let ts = parse_ts(field(&record, cols[0], "timestamp")?, &config.timestamp_format)?;
            let building = field(&record, cols[1], "building_id")?;
            let wap = field(&record, cols[2], "wap_name")?;
            let device = field(&record, cols[3], "device_hash")?;
            if building.is_empty() {
                return Err("empty building_id".to_string());
            }
            if wap.is_empty() {
                return Err("empty wap_name".to_string());
            }
            if device.is_empty() {
                return Err("empty device_hash".to_string());
            }
            Ok(ConnectionEvent {
                timestamp: ts,
                building_id: interner.get(building),
                wap_name: interner.get(wap),
                device_hash: interner.get(device),
            })
        })();
        match parsed {
            Ok(event) => {
                report.accepted += 1;
                records.push(event);
            }
            Err(reason) => report.rejected.push(RejectedRow { line, reason }),
        }
    }
    check_threshold(&report, config.malformed_abort_pct)?;
    Ok(Parsed { records, report })
}

pub fn parse_meter_log(path: &Path, schema: &MeterSchema, config: &IngestConfig) -> Result<Parsed<MeterReading>> {
    parse_meter_reader(open(path)?, schema, config)
}

pub fn parse_meter_reader<R: Read>(
    reader: R,
    schema: &MeterSchema,
    config: &IngestConfig,
) -> Result<Parsed<MeterReading>> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = [
        column_index(&headers, &schema.timestamp)?,
        column_index(&headers, &schema.building_id)?,
        column_index(&headers, &schema.demand_kw)?,
    ];

    let mut interner = Interner::default();
    let mut records = Vec::new();
    let mut report = ParseReport::default();
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(e) => {
                report.data_rows += 1;
                report.rejected.push(RejectedRow { line, reason: e.to_string() });
                continue;
            }
        }
        report.data_rows += 1;
        let parsed = (|| {
            let ts = parse_ts(field(&record, cols[0], "timestamp")?, &config.timestamp_format)?;
            let building = field(&record, cols[1], "building_id")?;
            if building.is_empty() {
                return Err("empty building_id".to_string());
            }
            let raw = field(&record, cols[2], "demand_kw")?;
            let demand: f64 = raw.parse().map_err(|_| format!("bad demand `{raw}`"))?;
            if !demand.is_finite() {
                return Err(format!("non-finite demand `{raw}`"));
            }
            Ok(MeterReading {
                timestamp: ts,
                building_id: interner.get(building),
                demand_kw: demand,
                valid: demand >= 0.0,
            })
        })();
        match parsed {
            Ok(reading) => {
                report.accepted += 1;
                if !reading.valid {
                    report.flagged += 1;
                }
                records.push(reading);
            }
            Err(reason) => report.rejected.push(RejectedRow { line, reason }),
        }
    }
    check_threshold(&report, config.malformed_abort_pct)?;
    Ok(Parsed { records, report })
}

/// Sorts readings by (building, timestamp) and resolves duplicates.
pub fn dedup_readings(mut readings: Vec<MeterReading>, policy: DuplicatePolicy) -> Result<Vec<MeterReading>> {
    // stable: among duplicates the later row stays later
    readings.sort_by(|a, b| a.building_id.cmp(&b.building_id).then(a.timestamp.cmp(&b.timestamp)));
    let mut out: Vec<MeterReading> = Vec::with_capacity(readings.len());
    for r in readings {
        match out.last_mut() {
            Some(prev) if prev.building_id == r.building_id && prev.timestamp == r.timestamp => match policy {
                DuplicatePolicy::LastWins => *prev = r,
                DuplicatePolicy::Reject => {
                    return Err(IngestError::DuplicateReading {
                        building: r.building_id.to_string(),
                        timestamp: format_timestamp(&r.timestamp),
                    })
                }
            },
            _ => out.push(r),
        }
    }
    Ok(out)
}

/// Classifies WAP names against the configured naming pattern.
#[derive(Debug, Clone)]
pub struct WapClassifier {
    pattern: Regex,
}

impl WapClassifier {
    pub fn new(pattern: &str) -> Result<Self> {
        let pattern = Regex::new(pattern)?;
        let names: Vec<_> = pattern.capture_names().flatten().collect();
        for group in ["building", "floor", "room"] {
            if !names.contains(&group) {
                return Err(IngestError::PatternGroups(group));
            }
        }
        Ok(Self { pattern })
    }

    pub fn is_external(&self, wap_name: &str) -> bool {
        !self.pattern.is_match(wap_name)
    }

    pub fn classify(&self, wap_name: &str) -> WapLocation {
        match self.pattern.captures(wap_name) {
            Some(caps) => {
                let group = |name| caps.name(name).map(|m| m.as_str().to_string());
                WapLocation {
                    wap_name: wap_name.to_string(),
                    building: group("building"),
                    floor: group("floor"),
                    room: group("room"),
                    is_external: false,
                }
            }
            None => WapLocation {
                wap_name: wap_name.to_string(),
                building: None,
                floor: None,
                room: None,
                is_external: true,
            },
        }
    }

    /// Drops events seen on external WAPs; returns the kept events and the
    /// number dropped.
    pub fn filter_internal(&self, events: Vec<ConnectionEvent>) -> (Vec<ConnectionEvent>, usize) {
        let mut cache: HashMap<Arc<str>, bool> = HashMap::new();
        let before = events.len();
        let kept: Vec<_> = events
            .into_iter()
            .filter(|e| !*cache.entry(e.wap_name.clone()).or_insert_with(|| self.is_external(&e.wap_name)))
            .collect();
        let dropped = before - kept.len();
        (kept, dropped)
    }
}

impl Default for WapClassifier {
    fn default() -> Self {
        Self::new(DEFAULT_WAP_PATTERN).expect("default pattern is valid")
    }
}

pub fn write_connection_csv<W: Write>(writer: W, events: &[ConnectionEvent]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "building_id", "wap_name", "device_hash"])?;
    for e in events {
        w.write_record([format_timestamp(&e.timestamp).as_str(), &e.building_id, &e.wap_name, &e.device_hash])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_meter_csv<W: Write>(writer: W, readings: &[MeterReading]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "building_id", "demand_kw"])?;
    for r in readings {
        w.write_record([format_timestamp(&r.timestamp), r.building_id.to_string(), r.demand_kw.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wifi(body: &str) -> Result<Parsed<ConnectionEvent>> {
        let text = format!("timestamp,building_id,wap_name,device_hash\n{body}");
        parse_connection_reader(text.as_bytes(), &WifiSchema::default(), &IngestConfig::default())
    }

    fn meter(body: &str) -> Result<Parsed<MeterReading>> {
        let text = format!("timestamp,building_id,demand_kw\n{body}");
        parse_meter_reader(text.as_bytes(), &MeterSchema::default(), &IngestConfig::default())
    }

    #[test]
    fn connection_row_maps_fields() {
        let parsed = wifi("2019-07-09 08:05:00,B001,B001-2-204,ab12f9\n").unwrap();
        assert_eq!(parsed.records.len(), 1);
        let e = &parsed.records[0];
        assert_eq!(&*e.building_id, "B001");
        assert_eq!(&*e.wap_name, "B001-2-204");
        assert_eq!(&*e.device_hash, "ab12f9");
        assert_eq!(format_timestamp(&e.timestamp), "2019-07-09 08:05:00");
    }

    #[test]
    fn empty_device_hash_is_counted_not_fatal() {
        let mut body = String::new();
        for i in 0..30 {
            body.push_str(&format!("2019-07-09 08:05:00,B001,B001-2-204,dev{i}\n"));
        }
        body.push_str("2019-07-09 08:10:00,B001,B001-2-204,\n");
        let parsed = wifi(&body).unwrap();
        assert_eq!(parsed.report.data_rows, 31);
        assert_eq!(parsed.records.len(), 30);
        assert_eq!(parsed.report.rejected.len(), 1);
        assert_eq!(parsed.report.rejected[0].line, 32);
        assert!(parsed.report.rejected[0].reason.contains("device_hash"));
    }

    #[test]
    fn malformed_share_above_threshold_aborts() {
        let body = "2019-07-09 08:05:00,B001,B001-2-204,a\nnot-a-date,B001,B001-2-204,b\n";
        match wifi(body) {
            Err(IngestError::TooManyMalformed { rejected, total, .. }) => {
                assert_eq!((rejected, total), (1, 2));
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_an_error() {
        let text = "timestamp,building_id,device_hash\n";
        let err =
            parse_connection_reader(text.as_bytes(), &WifiSchema::default(), &IngestConfig::default()).unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn(c) if c == "wap_name"));
    }

    #[test]
    fn custom_column_names_and_order() {
        let schema = WifiSchema {
            timestamp: "time".into(),
            building_id: "bldg".into(),
            wap_name: "ap".into(),
            device_hash: "mac".into(),
        };
        let text = "mac,ap,bldg,time\nff,B002-1-1,B002,2019-07-09 10:00:00\n";
        let parsed = parse_connection_reader(text.as_bytes(), &schema, &IngestConfig::default()).unwrap();
        assert_eq!(&*parsed.records[0].building_id, "B002");
        assert_eq!(&*parsed.records[0].device_hash, "ff");
    }

    #[test]
    fn unreadable_file() {
        let err =
            parse_meter_log(Path::new("/nonexistent/meter.csv"), &MeterSchema::default(), &IngestConfig::default())
                .unwrap_err();
        assert!(matches!(err, IngestError::Io { .. }));
    }

    #[test]
    fn meter_row_and_negative_flag() {
        let parsed = meter("2019-07-09 00:00:00,B001,412.5\n2019-07-09 00:05:00,B001,-3\n").unwrap();
        assert_eq!(parsed.records[0].demand_kw, 412.5);
        assert!(parsed.records[0].valid);
        assert_eq!(parsed.records[1].demand_kw, -3.0);
        assert!(!parsed.records[1].valid);
        assert_eq!(parsed.report.flagged, 1);
        assert_eq!(parsed.report.accepted, 2);
    }

    #[test]
    fn non_numeric_demand_is_malformed() {
        let mut body = String::new();
        for i in 0..40 {
            body.push_str(&format!("2019-07-09 00:{:02}:00,B001,100\n", i % 60));
        }
        body.push_str("2019-07-09 01:00:00,B001,abc\n");
        let parsed = meter(&body).unwrap();
        assert_eq!(parsed.report.rejected.len(), 1);
        assert_eq!(parsed.records.len(), 40);
    }

    #[test]
    fn custom_timestamp_format() {
        let config = IngestConfig { timestamp_format: "%d/%m/%Y %H:%M".into(), ..Default::default() };
        let text = "timestamp,building_id,demand_kw\n09/07/2019 13:05,B001,1\n";
        let parsed = parse_meter_reader(text.as_bytes(), &MeterSchema::default(), &config).unwrap();
        assert_eq!(format_timestamp(&parsed.records[0].timestamp), "2019-07-09 13:05:00");
    }

    #[test]
    fn duplicates_last_wins_or_reject() {
        let parsed =
            meter("2019-07-09 00:00:00,B001,1\n2019-07-09 00:00:00,B001,2\n2019-07-08 23:55:00,B001,3\n").unwrap();
        let deduped = dedup_readings(parsed.records.clone(), DuplicatePolicy::LastWins).unwrap();
        assert_eq!(deduped.len(), 2);
        assert_eq!(deduped[0].demand_kw, 3.0);
        assert_eq!(deduped[1].demand_kw, 2.0);
        assert!(matches!(
            dedup_readings(parsed.records, DuplicatePolicy::Reject),
            Err(IngestError::DuplicateReading { .. })
        ));
    }

    #[test]
    fn wap_classification() {
        let c = WapClassifier::default();
        let loc = c.classify("B001-2-204");
        assert!(!loc.is_external);
        assert_eq!(loc.building.as_deref(), Some("B001"));
        assert_eq!(loc.floor.as_deref(), Some("2"));
        assert_eq!(loc.room.as_deref(), Some("204"));
        let ext = c.classify("OUTDOOR-AP-17");
        assert!(ext.is_external);
        assert_eq!(ext.building, None);
    }

    #[test]
    fn pattern_without_groups_rejected() {
        assert!(matches!(WapClassifier::new("^[A-Z]+$"), Err(IngestError::PatternGroups("building"))));
        assert!(matches!(WapClassifier::new("(unclosed"), Err(IngestError::Pattern(_))));
    }

    #[test]
    fn external_events_filtered() {
        let parsed = wifi(
            "2019-07-09 08:05:00,B001,B001-2-204,a\n\
             2019-07-09 08:05:00,B001,OUTDOOR-AP-17,b\n\
             2019-07-09 08:10:00,B001,OUTDOOR-AP-17,a\n",
        )
        .unwrap();
        let (kept, dropped) = WapClassifier::default().filter_internal(parsed.records);
        assert_eq!(dropped, 2);
        assert_eq!(kept.len(), 1);
        assert_eq!(&*kept[0].device_hash, "a");
    }
}
