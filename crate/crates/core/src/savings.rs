//! Savings from moving the static HVAC schedule onto the occupied window.
//!
//! For each day a virtual demand profile is built from the actual (or
//! representative) profile by holding the pre-ramp level across a delayed
//! ramp-up and the post-setback level across an advanced setback. Earlier
//! ramp-ups and later setbacks hold the first/last operating-hour level and
//! produce negative savings. Savings are the integral of actual minus
//! virtual demand over the day's 24 one-hour bins.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{ClusterCalendar, ProfileId, ScheduleTable};
use crate::preprocess::{HourlySeries, NormalizationTable, SeriesKind};
use crate::schedule::{DemandSignals, OccupancySignals};
use crate::time::{weekday_index, Semester};
use crate::{DayProfile, HOURS};

/// Hours in a week, for hour-of-week distributions.
pub const HOURS_PER_WEEK: usize = 7 * HOURS;

#[derive(Debug, Error, PartialEq)]
pub enum SavingsError {
    #[error("morning window {morning:?} and evening window {evening:?} overlap")]
    OverlappingWindows { morning: Option<RangeInclusive<usize>>, evening: Option<RangeInclusive<usize>> },
    #[error("actual mode needs the cleaned demand series")]
    MissingActualSeries,
}

pub type Result<T> = std::result::Result<T, SavingsError>;

/// Which demand profile stands in for each day.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SavingsMode {
    /// The day's assigned demand centroid, denormalized per building.
    #[default]
    Centroid,
    /// The day's own cleaned demand profile.
    Actual,
}

/// Desired operating window for a day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// No occupancy: set back for the whole static operating window.
    Unoccupied,
    /// Ramp up at `start`; set back at `end` unless it is undefined.
    Window { start: u8, end: Option<u8> },
}

impl Target {
    pub fn from_signals(occ: &OccupancySignals) -> Option<Self> {
        if occ.unoccupied {
            return Some(Target::Unoccupied);
        }
        occ.t_s_o.map(|start| Target::Window { start, end: occ.t_e_o })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualProfile {
    pub base: DayProfile,
    pub virtual_demand: DayProfile,
    /// Hours overwritten around the ramp-up (the whole operating window on
    /// unoccupied days).
    pub morning_window: Option<RangeInclusive<usize>>,
    /// Hours overwritten around the setback.
    pub evening_window: Option<RangeInclusive<usize>>,
    /// Pre-ramp level, `base[t_s_e]`.
    pub pre_ramp_kw: f64,
    /// Post-setback level, `base[t_e_e + 1]`.
    pub post_setback_kw: f64,
}

fn overlaps(a: &RangeInclusive<usize>, b: &RangeInclusive<usize>) -> bool {
    a.start() <= b.end() && b.start() <= a.end()
}

pub fn virtual_profile(base: &DayProfile, dem: &DemandSignals, target: Target) -> Result<VirtualProfile> {
    let s_e = dem.t_s_e as usize;
    let e_e = dem.t_e_e as usize;
    let pre_ramp = base[s_e];
    let post_setback = base[(e_e + 1).min(HOURS - 1)];
    let mut virtual_demand = *base;
    let mut morning = None;
    let mut evening = None;

    match target {
        Target::Unoccupied => {
            if e_e > s_e {
                let w = s_e + 1..=e_e;
                virtual_demand[w.clone()].fill(pre_ramp);
                morning = Some(w);
            }
        }
        Target::Window { start, end } => {
            let s_o = start as usize;
            if let Some(e_o) = end {
                if s_o > e_o as usize {
                    return Err(SavingsError::OverlappingWindows {
                        morning: Some(s_o..=s_o),
                        evening: Some(e_o as usize..=e_o as usize),
                    });
                }
            }
            let (m_window, m_level) = if s_o > s_e {
                (Some(s_e + 1..=s_o), pre_ramp)
            } else if s_o < s_e {
                (Some(s_o + 1..=s_e), base[s_e + 1])
            } else {
                (None, 0.0)
            };
            let (e_window, e_level) = match end.map(usize::from) {
                Some(e_o) if e_o < e_e => (Some(e_o + 1..=e_e), post_setback),
                Some(e_o) if e_o > e_e => (Some(e_e + 1..=e_o), base[e_e]),
                _ => (None, 0.0),
            };
            if let (Some(m), Some(e)) = (&m_window, &e_window) {
                if overlaps(m, e) {
                    return Err(SavingsError::OverlappingWindows { morning: m_window, evening: e_window });
                }
            }
            if let Some(w) = &m_window {
                virtual_demand[w.clone()].fill(m_level);
            }
            if let Some(w) = &e_window {
                virtual_demand[w.clone()].fill(e_level);
            }
            morning = m_window;
            evening = e_window;
        }
    }
    Ok(VirtualProfile {
        base: *base,
        virtual_demand,
        morning_window: morning,
        evening_window: evening,
        pre_ramp_kw: pre_ramp,
        post_setback_kw: post_setback,
    })
}

/// Per-hour savings `base - virtual` in kWh.
pub fn hourly_savings(vp: &VirtualProfile) -> DayProfile {
    let mut out = [0.0; HOURS];
    for (o, (b, v)) in out.iter_mut().zip(vp.base.iter().zip(&vp.virtual_demand)) {
        *o = b - v;
    }
    out
}

/// Signed daily savings in kWh; negative when the shift adds demand.
pub fn daily_savings(vp: &VirtualProfile) -> f64 {
    hourly_savings(vp).iter().sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub building_id: String,
    pub date: NaiveDate,
    pub semester: Semester,
    pub label_demand: ProfileId,
    pub label_occupancy: ProfileId,
    pub savings_kwh: f64,
    pub baseline_kwh: f64,
    pub hourly_kwh: DayProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDay {
    pub building_id: String,
    pub date: NaiveDate,
    pub reason: String,
}

/// Savings of one building over one semester.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollup {
    pub total_kwh: f64,
    pub baseline_kwh: f64,
    /// `100 * total / baseline`.
    pub pct: f64,
    /// Indexed by `weekday_from_monday * 24 + hour`.
    pub by_hour_of_week: Vec<f64>,
    pub by_day: Vec<(NaiveDate, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SavingsLedger {
    /// Ordered by (building, date).
    pub entries: Vec<LedgerEntry>,
    pub skipped: Vec<SkippedDay>,
    pub rollups: BTreeMap<(String, Semester), Rollup>,
}

impl SavingsLedger {
    pub fn total_kwh(&self) -> f64 {
        self.entries.iter().map(|e| e.savings_kwh).sum()
    }

    /// Mean building percentage and mean building total (kWh) in a semester.
    pub fn semester_average(&self, semester: Semester) -> Option<(f64, f64)> {
        let rollups: Vec<&Rollup> = self.rollups.iter().filter(|((_, s), _)| *s == semester).map(|(_, r)| r).collect();
        if rollups.is_empty() {
            return None;
        }
        let n = rollups.len() as f64;
        Some((rollups.iter().map(|r| r.pct).sum::<f64>() / n, rollups.iter().map(|r| r.total_kwh).sum::<f64>() / n))
    }

    fn rollup(entries: &[LedgerEntry]) -> BTreeMap<(String, Semester), Rollup> {
        let mut out: BTreeMap<(String, Semester), Rollup> = BTreeMap::new();
        for e in entries {
            let r = out.entry((e.building_id.clone(), e.semester)).or_insert_with(|| Rollup {
                total_kwh: 0.0,
                baseline_kwh: 0.0,
                pct: 0.0,
                by_hour_of_week: vec![0.0; HOURS_PER_WEEK],
                by_day: Vec::new(),
            });
            r.total_kwh += e.savings_kwh;
            r.baseline_kwh += e.baseline_kwh;
            let week_offset = weekday_index(e.date) * HOURS;
            for (h, s) in e.hourly_kwh.iter().enumerate() {
                r.by_hour_of_week[week_offset + h] += s;
            }
            r.by_day.push((e.date, e.savings_kwh));
        }
        for r in out.values_mut() {
            r.pct = if r.baseline_kwh != 0.0 { 100.0 * r.total_kwh / r.baseline_kwh } else { 0.0 };
        }
        out
    }
}

/// Everything the savings stage reads from earlier stages.
#[derive(Debug, Clone, Copy)]
pub struct SavingsContext<'a> {
    pub split: NaiveDate,
    pub demand_calendar: &'a ClusterCalendar,
    /// Normalized demand centroids.
    pub demand_centroids: &'a BTreeMap<ProfileId, DayProfile>,
    /// Demand profiles without a detectable ramp are absent.
    pub demand_signals: &'a BTreeMap<ProfileId, DemandSignals>,
    pub norm: &'a NormalizationTable,
    /// Cleaned demand series in kW, needed in actual mode.
    pub actual: Option<&'a [HourlySeries]>,
}

/// A building-day with its demand profile in kW.
struct DemandDay {
    building_id: String,
    date: NaiveDate,
    label: ProfileId,
    signals: DemandSignals,
    base: DayProfile,
}

impl SavingsContext<'_> {
    /// Resolves the kW profile and static signals of every calendar day of
    /// `buildings` (all buildings when `None`).
    fn demand_days(
        &self,
        buildings: Option<&[String]>,
        mode: SavingsMode,
    ) -> Result<(Vec<DemandDay>, Vec<SkippedDay>)> {
        let actual: BTreeMap<&str, &HourlySeries> = match mode {
            SavingsMode::Centroid => BTreeMap::new(),
            SavingsMode::Actual => self
                .actual
                .ok_or(SavingsError::MissingActualSeries)?
                .iter()
                .filter(|s| s.kind == SeriesKind::DemandKw)
                .map(|s| (s.building_id.as_str(), s))
                .collect(),
        };
        let mut days = Vec::new();
        let mut skipped = Vec::new();
        for ((building, date), label) in &self.demand_calendar.entries {
            if buildings.is_some_and(|b| !b.contains(building)) {
                continue;
            }
            let skip = |reason: String| SkippedDay { building_id: building.clone(), date: *date, reason };
            let Some(signals) = self.demand_signals.get(label) else {
                skipped.push(skip(format!("demand profile {label} has no detectable ramp")));
                continue;
            };
            let base = match mode {
                SavingsMode::Centroid => {
                    let Some(centroid) = self.demand_centroids.get(label) else {
                        skipped.push(skip(format!("missing centroid {label}")));
                        continue;
                    };
                    let params = match self.norm.get(building, *date, SeriesKind::DemandKw) {
                        Ok(p) => p.bounds(),
                        Err(e) => {
                            skipped.push(skip(e.to_string()));
                            continue;
                        }
                    };
                    let mut base = [0.0; HOURS];
                    for (b, &v) in base.iter_mut().zip(centroid) {
                        *b = params.denormalize(v);
                    }
                    base
                }
                SavingsMode::Actual => {
                    let day = actual.get(building.as_str()).and_then(|s| {
                        let offset = (*date - s.start).num_days();
                        (0..s.days() as i64).contains(&offset).then(|| s.complete_day(offset as usize)).flatten()
                    });
                    match day {
                        Some(values) => values,
                        None => {
                            skipped.push(skip("no complete cleaned demand profile".into()));
                            continue;
                        }
                    }
                }
            };
            days.push(DemandDay { building_id: building.clone(), date: *date, label: *label, signals: *signals, base });
        }
        Ok((days, skipped))
    }
}

/// Daily and per-semester savings for every building that has an occupancy
/// schedule. `occupancy` holds the signals of every occupancy profile at the
/// (δ, τ) being evaluated.
pub fn aggregate_savings(
    ctx: &SavingsContext<'_>,
    schedule_table: &ScheduleTable,
    occupancy: &BTreeMap<ProfileId, OccupancySignals>,
    mode: SavingsMode,
) -> Result<SavingsLedger> {
    let mut buildings: Vec<String> = schedule_table.rows.keys().map(|(b, _, _)| b.clone()).collect();
    buildings.dedup();
    let (days, mut skipped) = ctx.demand_days(Some(&buildings), mode)?;

    let mut entries = Vec::new();
    for day in days {
        let skip = |reason: String| SkippedDay { building_id: day.building_id.clone(), date: day.date, reason };
        let Some(occ_label) = schedule_table.for_date(&day.building_id, day.date, ctx.split) else {
            skipped.push(skip("no occupancy schedule for day group".into()));
            continue;
        };
        let Some(target) = occupancy.get(&occ_label).and_then(Target::from_signals) else {
            skipped.push(skip(format!("no signals for occupancy profile {occ_label}")));
            continue;
        };
        let vp = match virtual_profile(&day.base, &day.signals, target) {
            Ok(vp) => vp,
            Err(e) => {
                skipped.push(skip(e.to_string()));
                continue;
            }
        };
        let hourly = hourly_savings(&vp);
        entries.push(LedgerEntry {
            building_id: day.building_id,
            date: day.date,
            semester: Semester::of(day.date, ctx.split),
            label_demand: day.label,
            label_occupancy: occ_label,
            savings_kwh: hourly.iter().sum(),
            baseline_kwh: vp.base.iter().sum(),
            hourly_kwh: hourly,
        });
    }
    let rollups = SavingsLedger::rollup(&entries);
    Ok(SavingsLedger { entries, skipped, rollups })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub building_id: String,
    pub shift_morning_h: i32,
    pub shift_evening_h: i32,
    pub avg_savings_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    /// Per building, the best cell's savings percentage.
    pub max_savings: BTreeMap<String, f64>,
    /// Counts of per-building maxima in `[<1%, 1-2%, 2-4%, >=4%]`.
    pub histogram: [usize; 4],
    pub skipped: Vec<SkippedDay>,
}

impl SweepResult {
    /// Mean over buildings of one grid cell.
    pub fn campus_average(&self, shift_morning_h: i32, shift_evening_h: i32) -> Option<f64> {
        let values: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.shift_morning_h == shift_morning_h && c.shift_evening_h == shift_evening_h)
            .map(|c| c.avg_savings_pct)
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub fn histogram_bucket(pct: f64) -> usize {
    if pct < 1.0 {
        0
    } else if pct < 2.0 {
        1
    } else if pct < 4.0 {
        2
    } else {
        3
    }
}

/// Savings from shifting every day's static ramp-up by `a` and setback by
/// `b` hours, for every (a, b) of the grid. Needs no occupancy data.
pub fn sensitivity_sweep(
    ctx: &SavingsContext<'_>,
    morning_shifts: &[i32],
    evening_shifts: &[i32],
    mode: SavingsMode,
) -> Result<SweepResult> {
    let (days, mut skipped) = ctx.demand_days(None, mode)?;
    let mut per_building: BTreeMap<&str, Vec<&DemandDay>> = BTreeMap::new();
    for d in &days {
        per_building.entry(&d.building_id).or_default().push(d);
    }

    let clamp = |h: i32| h.clamp(0, HOURS as i32 - 1) as u8;
    let mut cells = Vec::new();
    let mut max_savings = BTreeMap::new();
    for (building, days) in &per_building {
        let baseline: f64 = days.iter().map(|d| d.base.iter().sum::<f64>()).sum();
        let mut best = f64::NEG_INFINITY;
        for &a in morning_shifts {
            for &b in evening_shifts {
                let mut total = 0.0;
                for d in days {
                    let target = Target::Window {
                        start: clamp(d.signals.t_s_e as i32 + a),
                        end: Some(clamp(d.signals.t_e_e as i32 + b)),
                    };
                    match virtual_profile(&d.base, &d.signals, target) {
                        Ok(vp) => total += daily_savings(&vp),
                        Err(e) => skipped.push(SkippedDay {
                            building_id: d.building_id.clone(),
                            date: d.date,
                            reason: format!("shift ({a:+}, {b:+}): {e}"),
                        }),
                    }
                }
                let pct = if baseline != 0.0 { 100.0 * total / baseline } else { 0.0 };
                best = best.max(pct);
                cells.push(SweepCell {
                    building_id: building.to_string(),
                    shift_morning_h: a,
                    shift_evening_h: b,
                    avg_savings_pct: pct,
                });
            }
        }
        max_savings.insert(building.to_string(), best);
    }
    let mut histogram = [0; 4];
    for &m in max_savings.values() {
        histogram[histogram_bucket(m)] += 1;
    }
    Ok(SweepResult { cells, max_savings, histogram, skipped })
}
