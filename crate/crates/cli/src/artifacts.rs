//! On-disk artifact layout and (de)serialization.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use setback::cluster::ClusterCalendar;
use setback::preprocess::{Quality, Sample};
use setback::savings::{SavingsLedger, SkippedDay, SweepResult};
use setback::time::{format_hour, format_timestamp, DayGroup, Semester, TIMESTAMP_FORMAT};
use setback::{DemandSignals, HourlySeries, OccupancySignals, ProfileId, ScheduleTable, SeriesKind, HOURS};

use crate::error::{CliError, Result, Stage};
use crate::pipeline::{ClusterDataset, DeltaSignals, MissWasteRow};

/// Paths of every artifact under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

macro_rules! artifact {
    ($($name:ident => $path:expr),* $(,)?) => {
        impl Layout {
            $(pub fn $name(&self) -> PathBuf { self.root.join($path) })*
        }
    };
}

artifact! {
    manifest => "manifest.json",
    events => "ingest/events.csv",
    readings => "ingest/meter.csv",
    ingest_summary => "ingest/summary.json",
    series => "preprocess/series.csv",
    normalization => "preprocess/normalization.json",
    preprocess_summary => "preprocess/summary.json",
    clusters => "cluster/clusters.json",
    calendar => "cluster/calendar.csv",
    schedule_table => "cluster/schedule_table.csv",
    wss_curve => "cluster/wss_curve.csv",
    occupancy_signals => "schedule/occupancy_signals.csv",
    demand_signals => "schedule/demand_signals.csv",
    miss_waste => "schedule/miss_waste.csv",
    savings_summary => "savings/summary.json",
    skipped => "savings/skipped.csv",
    sweep => "sweep/sweep.csv",
    sweep_summary => "sweep/summary.json",
    report_dir => "report",
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn ledger(&self, delta: f64) -> PathBuf {
        self.root.join(format!("savings/ledger_delta_{}.csv", format_delta(delta)))
    }

    /// Path relative to the output root, with forward slashes. Paths
    /// outside the root are made absolute.
    pub fn relative(&self, path: &Path) -> String {
        let Ok(rel) = path.strip_prefix(&self.root) else {
            return absolute(path).display().to_string();
        };
        rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
    }
}

/// Canonical form of an existing path, else the path joined to the
/// working directory.
pub fn absolute(path: &Path) -> PathBuf {
    fs::canonicalize(path).or_else(|_| std::path::absolute(path)).unwrap_or_else(|_| path.to_path_buf())
}

/// Two-decimal δ, e.g. `0.05`.
pub fn format_delta(delta: f64) -> String {
    format!("{delta:.2}")
}

fn io_err(stage: Stage, path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::stage(stage, format!("{}: {e}", path.display()))
}

pub fn create(stage: Stage, path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(stage, dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(stage, path, e))
}

pub fn open(stage: Stage, path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| io_err(stage, path, format!("{e} (run the upstream stage first)")))
}

pub fn write_json<T: Serialize>(stage: Stage, path: &Path, value: &T) -> Result<()> {
    let mut w = create(stage, path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(stage, path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| io_err(stage, path, e))
}

pub fn read_json<T: DeserializeOwned>(stage: Stage, path: &Path) -> Result<T> {
    serde_json::from_reader(open(stage, path)?).map_err(|e| io_err(stage, path, e))
}

fn csv_writer(stage: Stage, path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(stage, path)?))
}

fn csv_reader(stage: Stage, path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    Ok(csv::Reader::from_reader(open(stage, path)?))
}

fn write_rows<S: Serialize>(stage: Stage, path: &Path, rows: impl IntoIterator<Item = S>) -> Result<()> {
    let mut w = csv_writer(stage, path)?;
    for row in rows {
        w.serialize(row).map_err(|e| io_err(stage, path, e))?;
    }
    w.flush().map_err(|e| io_err(stage, path, e))
}

fn read_rows<D: DeserializeOwned>(stage: Stage, path: &Path) -> Result<Vec<D>> {
    csv_reader(stage, path)?
        .deserialize()
        .collect::<std::result::Result<Vec<D>, _>>()
        .map_err(|e| io_err(stage, path, e))
}

fn opt_hour(h: Option<u8>) -> String {
    h.map(|h| h.to_string()).unwrap_or_default()
}

fn parse_opt_hour(s: &str) -> std::result::Result<Option<u8>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| format!("bad hour `{s}`"))
    }
}

// ---- preprocess/series.csv -------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SeriesRow {
    building_id: String,
    timestamp: String,
    kind: String,
    value: Option<f64>,
    quality: String,
    normalized: Option<f64>,
}

/// Writes raw-unit and normalized values of every series side by side.
/// `normalized[i]` must be the normalized copy of `series[i]`.
pub fn write_series(path: &Path, series: &[HourlySeries], normalized: &[HourlySeries]) -> Result<()> {
    let stage = Stage::Preprocess;
    let mut w = csv_writer(stage, path)?;
    for (s, n) in series.iter().zip(normalized) {
        for (i, (a, b)) in s.samples.iter().zip(&n.samples).enumerate() {
            w.serialize(SeriesRow {
                building_id: s.building_id.clone(),
                timestamp: format_timestamp(&s.timestamp(i)),
                kind: s.kind.as_str().into(),
                value: a.value,
                quality: a.quality.as_str().into(),
                normalized: b.value,
            })
            .map_err(|e| io_err(stage, path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(stage, path, e))
}

/// Reads back (raw, normalized) series in file order.
pub fn read_series(stage: Stage, path: &Path) -> Result<(Vec<HourlySeries>, Vec<HourlySeries>)> {
    let bad = |msg: String| io_err(stage, path, msg);
    let rows: Vec<SeriesRow> = read_rows(stage, path)?;
    let mut raw: Vec<HourlySeries> = Vec::new();
    let mut norm: Vec<HourlySeries> = Vec::new();
    let mut current: Option<(String, SeriesKind, NaiveDate, Vec<Sample>, Vec<Sample>)> = None;
    let mut flush = |c: Option<(String, SeriesKind, NaiveDate, Vec<Sample>, Vec<Sample>)>| -> Result<()> {
        if let Some((b, k, start, r, n)) = c {
            if !r.len().is_multiple_of(HOURS) {
                return Err(bad(format!("series {b}/{k} does not cover whole days")));
            }
            raw.push(HourlySeries::new(b.clone(), k, start, r));
            norm.push(HourlySeries::new(b, k, start, n));
        }
        Ok(())
    };
    for row in rows {
        let kind: SeriesKind = row.kind.parse().map_err(bad)?;
        let quality: Quality = row.quality.parse().map_err(bad)?;
        let ts = NaiveDateTime::parse_from_str(&row.timestamp, TIMESTAMP_FORMAT)
            .map_err(|e| bad(format!("bad timestamp `{}`: {e}", row.timestamp)))?;
        let same = matches!(&current, Some((b, k, _, _, _)) if *b == row.building_id && *k == kind);
        if !same {
            flush(current.take())?;
            current = Some((row.building_id.clone(), kind, ts.date(), Vec::new(), Vec::new()));
        }
        let (_, _, _, r, n) = current.as_mut().expect("set above");
        r.push(Sample { value: row.value, quality });
        n.push(Sample { value: row.normalized, quality });
    }
    flush(current)?;
    Ok((raw, norm))
}

// ---- cluster/ ---------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CalendarRow {
    building_id: String,
    date: NaiveDate,
    kind: String,
    label: ProfileId,
}

pub fn write_calendar(path: &Path, calendars: &[&ClusterCalendar]) -> Result<()> {
    let rows = calendars.iter().flat_map(|c| {
        c.entries.iter().map(|((b, d), id)| CalendarRow {
            building_id: b.clone(),
            date: *d,
            kind: id.kind.as_str().into(),
            label: *id,
        })
    });
    write_rows(Stage::Cluster, path, rows)
}

/// Occupancy and demand calendars.
pub fn read_calendar(stage: Stage, path: &Path, split: NaiveDate) -> Result<(ClusterCalendar, ClusterCalendar)> {
    let rows: Vec<CalendarRow> = read_rows(stage, path)?;
    let mut occ = ClusterCalendar { split: Some(split), ..Default::default() };
    let mut dem = occ.clone();
    for r in rows {
        let target = match r.label.kind {
            SeriesKind::OccupantCount => &mut occ,
            SeriesKind::DemandKw => &mut dem,
        };
        target.entries.insert((r.building_id, r.date), r.label);
    }
    Ok((occ, dem))
}

#[derive(Debug, Serialize, Deserialize)]
struct ScheduleRow {
    building_id: String,
    semester: Semester,
    day_group: String,
    kind: String,
    label: ProfileId,
}

pub fn write_schedule_table(path: &Path, tables: &[&ScheduleTable]) -> Result<()> {
    let rows = tables.iter().flat_map(|t| {
        t.rows.iter().map(|((b, s, g), id)| ScheduleRow {
            building_id: b.clone(),
            semester: *s,
            day_group: g.as_str().into(),
            kind: id.kind.as_str().into(),
            label: *id,
        })
    });
    write_rows(Stage::Cluster, path, rows)
}

/// Occupancy and demand schedule tables.
pub fn read_schedule_table(stage: Stage, path: &Path) -> Result<(ScheduleTable, ScheduleTable)> {
    let rows: Vec<ScheduleRow> = read_rows(stage, path)?;
    let mut occ = ScheduleTable::default();
    let mut dem = ScheduleTable::default();
    for r in rows {
        let group: DayGroup = r.day_group.parse().map_err(|e: String| io_err(stage, path, e))?;
        let target = match r.label.kind {
            SeriesKind::OccupantCount => &mut occ,
            SeriesKind::DemandKw => &mut dem,
        };
        target.rows.insert((r.building_id, r.semester, group), r.label);
    }
    Ok((occ, dem))
}

#[derive(Debug, Serialize)]
struct WssRow<'a> {
    dataset: &'a str,
    k: usize,
    wss: f64,
    selected: bool,
}

pub fn write_wss_curve(path: &Path, datasets: &[ClusterDataset]) -> Result<()> {
    let names: Vec<String> = datasets.iter().map(|d| d.name()).collect();
    let rows = datasets.iter().zip(&names).flat_map(|(d, name)| {
        d.wss_curve.iter().map(move |(&k, &wss)| WssRow { dataset: name, k, wss, selected: k == d.k })
    });
    write_rows(Stage::Cluster, path, rows)
}

// ---- schedule/ --------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct OccupancySignalRow {
    profile_label: ProfileId,
    delta: String,
    tau: u8,
    t_a: String,
    t_d: String,
    t_s_o: String,
    t_e_o: String,
    unoccupied: bool,
    open_ended: bool,
}

pub fn write_occupancy_signals(path: &Path, signals: &[DeltaSignals]) -> Result<()> {
    let rows = signals.iter().flat_map(|d| {
        d.profiles.iter().map(move |(id, s)| OccupancySignalRow {
            profile_label: *id,
            delta: format_delta(d.delta),
            tau: d.tau,
            t_a: opt_hour(s.t_a),
            t_d: opt_hour(s.t_d),
            t_s_o: opt_hour(s.t_s_o),
            t_e_o: opt_hour(s.t_e_o),
            unoccupied: s.unoccupied,
            open_ended: s.open_ended,
        })
    });
    write_rows(Stage::Schedule, path, rows)
}

pub fn read_occupancy_signals(stage: Stage, path: &Path) -> Result<Vec<DeltaSignals>> {
    let rows: Vec<OccupancySignalRow> = read_rows(stage, path)?;
    let bad = |e: String| io_err(stage, path, e);
    let mut out: Vec<DeltaSignals> = Vec::new();
    for r in rows {
        let delta: f64 = r.delta.parse().map_err(|_| bad(format!("bad delta `{}`", r.delta)))?;
        let signals = OccupancySignals {
            t_a: parse_opt_hour(&r.t_a).map_err(bad)?,
            t_d: parse_opt_hour(&r.t_d).map_err(bad)?,
            t_s_o: parse_opt_hour(&r.t_s_o).map_err(bad)?,
            t_e_o: parse_opt_hour(&r.t_e_o).map_err(bad)?,
            unoccupied: r.unoccupied,
            open_ended: r.open_ended,
        };
        match out.last_mut() {
            Some(d) if format_delta(d.delta) == r.delta => {
                d.profiles.insert(r.profile_label, signals);
            }
            _ => out.push(DeltaSignals { delta, tau: r.tau, profiles: BTreeMap::from([(r.profile_label, signals)]) }),
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct DemandSignalRow {
    profile_label: ProfileId,
    t_s_e: String,
    t_e_e: String,
    note: String,
}

pub fn write_demand_signals(
    path: &Path,
    signals: &BTreeMap<ProfileId, DemandSignals>,
    failures: &BTreeMap<ProfileId, String>,
) -> Result<()> {
    let mut rows: Vec<DemandSignalRow> = signals
        .iter()
        .map(|(id, s)| DemandSignalRow {
            profile_label: *id,
            t_s_e: s.t_s_e.to_string(),
            t_e_e: s.t_e_e.to_string(),
            note: String::new(),
        })
        .chain(failures.iter().map(|(id, why)| DemandSignalRow {
            profile_label: *id,
            t_s_e: String::new(),
            t_e_e: String::new(),
            note: why.clone(),
        }))
        .collect();
    rows.sort_by_key(|r| r.profile_label);
    write_rows(Stage::Schedule, path, rows)
}

pub type DemandSignalTable = (BTreeMap<ProfileId, DemandSignals>, BTreeMap<ProfileId, String>);

pub fn read_demand_signals(stage: Stage, path: &Path) -> Result<DemandSignalTable> {
    let rows: Vec<DemandSignalRow> = read_rows(stage, path)?;
    let bad = |e: String| io_err(stage, path, e);
    let mut ok = BTreeMap::new();
    let mut failed = BTreeMap::new();
    for r in rows {
        match (parse_opt_hour(&r.t_s_e).map_err(bad)?, parse_opt_hour(&r.t_e_e).map_err(bad)?) {
            (Some(t_s_e), Some(t_e_e)) => {
                ok.insert(r.profile_label, DemandSignals { t_s_e, t_e_e });
            }
            _ => {
                failed.insert(r.profile_label, r.note);
            }
        }
    }
    Ok((ok, failed))
}

pub fn write_miss_waste(path: &Path, rows: &[MissWasteRow]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        building_id: &'a str,
        semester: Semester,
        day_group: &'static str,
        delta: String,
        label_occupancy: ProfileId,
        label_demand: ProfileId,
        waste_h: u32,
        miss_h: u32,
    }
    write_rows(
        Stage::Schedule,
        path,
        rows.iter().map(|r| Row {
            building_id: &r.building_id,
            semester: r.semester,
            day_group: r.day_group.as_str(),
            delta: format_delta(r.delta),
            label_occupancy: r.label_occupancy,
            label_demand: r.label_demand,
            waste_h: r.waste_h,
            miss_h: r.miss_h,
        }),
    )
}

pub fn read_miss_waste(stage: Stage, path: &Path) -> Result<Vec<MissWasteRow>> {
    #[derive(Deserialize)]
    struct Row {
        building_id: String,
        semester: Semester,
        day_group: String,
        delta: f64,
        label_occupancy: ProfileId,
        label_demand: ProfileId,
        waste_h: u32,
        miss_h: u32,
    }
    let rows: Vec<Row> = read_rows(stage, path)?;
    rows.into_iter()
        .map(|r| {
            Ok(MissWasteRow {
                day_group: r.day_group.parse().map_err(|e: String| io_err(stage, path, e))?,
                building_id: r.building_id,
                semester: r.semester,
                delta: r.delta,
                label_occupancy: r.label_occupancy,
                label_demand: r.label_demand,
                waste_h: r.waste_h,
                miss_h: r.miss_h,
            })
        })
        .collect()
}

// ---- savings/ and sweep/ -----------------------------------------------------

pub fn write_ledger(path: &Path, ledger: &SavingsLedger) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        building_id: &'a str,
        date: NaiveDate,
        label_demand: ProfileId,
        label_occupancy: ProfileId,
        savings_kwh: f64,
    }
    write_rows(
        Stage::Savings,
        path,
        ledger.entries.iter().map(|e| Row {
            building_id: &e.building_id,
            date: e.date,
            label_demand: e.label_demand,
            label_occupancy: e.label_occupancy,
            savings_kwh: e.savings_kwh,
        }),
    )
}

pub fn write_skipped(path: &Path, stage: Stage, skipped: &[(String, &SkippedDay)]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        run: &'a str,
        building_id: &'a str,
        date: NaiveDate,
        reason: &'a str,
    }
    write_rows(
        stage,
        path,
        skipped.iter().map(|(run, s)| Row { run, building_id: &s.building_id, date: s.date, reason: &s.reason }),
    )
}

/// Savings rollup of one building and semester as stored in summary.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollupRecord {
    pub building_id: String,
    pub semester: Semester,
    pub total_kwh: f64,
    pub baseline_kwh: f64,
    pub pct: f64,
    pub by_hour_of_week: Vec<f64>,
    pub by_day: Vec<(NaiveDate, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemesterAverage {
    pub semester: Semester,
    pub pct: f64,
    pub mwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub delta: f64,
    pub tau: u8,
    pub total_kwh: f64,
    pub days: usize,
    pub skipped_days: usize,
    pub averages: Vec<SemesterAverage>,
    pub rollups: Vec<RollupRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsSummary {
    pub mode: setback::savings::SavingsMode,
    pub deltas: Vec<DeltaSummary>,
}

pub fn delta_summary(delta: f64, tau: u8, ledger: &SavingsLedger) -> DeltaSummary {
    DeltaSummary {
        delta,
        tau,
        total_kwh: ledger.total_kwh(),
        days: ledger.entries.len(),
        skipped_days: ledger.skipped.len(),
        averages: Semester::ALL
            .iter()
            .filter_map(|&s| {
                ledger.semester_average(s).map(|(pct, kwh)| SemesterAverage { semester: s, pct, mwh: kwh / 1000.0 })
            })
            .collect(),
        rollups: ledger
            .rollups
            .iter()
            .map(|((b, s), r)| RollupRecord {
                building_id: b.clone(),
                semester: *s,
                total_kwh: r.total_kwh,
                baseline_kwh: r.baseline_kwh,
                pct: r.pct,
                by_hour_of_week: r.by_hour_of_week.clone(),
                by_day: r.by_day.clone(),
            })
            .collect(),
    }
}

pub fn write_sweep(path: &Path, sweep: &SweepResult) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        building_id: &'a str,
        shift_morning_h: i32,
        shift_evening_h: i32,
        avg_savings_pct: f64,
    }
    write_rows(
        Stage::Sweep,
        path,
        sweep.cells.iter().map(|c| Row {
            building_id: &c.building_id,
            shift_morning_h: c.shift_morning_h,
            shift_evening_h: c.shift_evening_h,
            avg_savings_pct: c.avg_savings_pct,
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCellAverage {
    pub shift_morning_h: i32,
    pub shift_evening_h: i32,
    pub avg_savings_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub campus_average: Vec<SweepCellAverage>,
    pub max_savings_pct: BTreeMap<String, f64>,
    /// Buildings whose best cell saves `<1%`, `1-2%`, `2-4%`, `>=4%`.
    pub histogram: [usize; 4],
    pub skipped_days: usize,
}

pub fn sweep_summary(sweep: &SweepResult, morning: &[i32], evening: &[i32]) -> SweepSummary {
    let mut campus_average = Vec::new();
    for &a in morning {
        for &b in evening {
            if let Some(avg) = sweep.campus_average(a, b) {
                campus_average.push(SweepCellAverage { shift_morning_h: a, shift_evening_h: b, avg_savings_pct: avg });
            }
        }
    }
    SweepSummary {
        campus_average,
        max_savings_pct: sweep.max_savings.clone(),
        histogram: sweep.histogram,
        skipped_days: sweep.skipped.len(),
    }
}

/// `"08:00"` or `"-"`.
pub fn hour_cell(h: Option<u8>) -> String {
    format_hour(h)
}
