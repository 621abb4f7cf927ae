//! From raw event streams to clean, normalized hourly series.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{Days, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ConnectionEvent, MeterReading};
use crate::time::{hour_start, slot_of_day, Semester, SLOTS_PER_DAY, SLOTS_PER_HOUR};
use crate::HOURS;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("expected a {expected} series, got {found}")]
    WrongKind { expected: SeriesKind, found: SeriesKind },
    #[error("no normalization parameters for scope {0}")]
    MissingParams(String),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    OccupantCount,
    DemandKw,
}

impl SeriesKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SeriesKind::OccupantCount => "occupant_count",
            SeriesKind::DemandKw => "demand_kw",
        }
    }

    /// Single-letter code used in profile labels.
    pub fn code(self) -> char {
        match self {
            SeriesKind::OccupantCount => 'O',
            SeriesKind::DemandKw => 'D',
        }
    }
}

impl fmt::Display for SeriesKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SeriesKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "occupant_count" => Ok(SeriesKind::OccupantCount),
            "demand_kw" => Ok(SeriesKind::DemandKw),
            other => Err(format!("unknown series kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Observed,
    Interpolated,
    Nullified,
    ZeroFilled,
}

impl Quality {
    pub fn as_str(self) -> &'static str {
        match self {
            Quality::Observed => "observed",
            Quality::Interpolated => "interpolated",
            Quality::Nullified => "nullified",
            Quality::ZeroFilled => "zero_filled",
        }
    }
}

impl FromStr for Quality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "observed" => Ok(Quality::Observed),
            "interpolated" => Ok(Quality::Interpolated),
            "nullified" => Ok(Quality::Nullified),
            "zero_filled" => Ok(Quality::ZeroFilled),
            other => Err(format!("unknown quality `{other}`")),
        }
    }
}

/// One hourly value. Nullified samples carry no value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: Option<f64>,
    pub quality: Quality,
}

impl Sample {
    pub fn observed(v: f64) -> Self {
        Self { value: Some(v), quality: Quality::Observed }
    }

    pub fn nullified() -> Self {
        Self { value: None, quality: Quality::Nullified }
    }

    pub fn zero_filled() -> Self {
        Self { value: Some(0.0), quality: Quality::ZeroFilled }
    }

    fn nullify(&mut self) {
        *self = Sample::nullified();
    }
}

/// Hourly samples for one building, 24 per covered day starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    pub building_id: String,
    pub kind: SeriesKind,
    pub start: NaiveDate,
    pub samples: Vec<Sample>,
    /// Non-fatal notes left by cleaning steps.
    pub warnings: Vec<String>,
}

impl HourlySeries {
    pub fn new(building_id: impl Into<String>, kind: SeriesKind, start: NaiveDate, samples: Vec<Sample>) -> Self {
        assert!(samples.len().is_multiple_of(HOURS), "series must cover whole days");
        Self { building_id: building_id.into(), kind, start, samples, warnings: Vec::new() }
    }

    pub fn from_values(
        building_id: impl Into<String>,
        kind: SeriesKind,
        start: NaiveDate,
        values: &[Option<f64>],
    ) -> Self {
        let samples = values.iter().map(|v| v.map_or_else(Sample::nullified, Sample::observed)).collect();
        Self::new(building_id, kind, start, samples)
    }

    pub fn days(&self) -> usize {
        self.samples.len() / HOURS
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start + Days::new(day as u64)
    }

    pub fn day(&self, day: usize) -> &[Sample] {
        &self.samples[day * HOURS..(day + 1) * HOURS]
    }

    pub fn timestamp(&self, index: usize) -> NaiveDateTime {
        hour_start(self.date(index / HOURS), index % HOURS)
    }

    pub fn values(&self) -> Vec<Option<f64>> {
        self.samples.iter().map(|s| s.value).collect()
    }

    /// The day's 24 values when none is missing.
    pub fn complete_day(&self, day: usize) -> Option<[f64; HOURS]> {
        let mut out = [0.0; HOURS];
        for (slot, sample) in out.iter_mut().zip(self.day(day)) {
            *slot = sample.value?;
        }
        Some(out)
    }

    pub fn count_quality(&self, quality: Quality) -> usize {
        self.samples.iter().filter(|s| s.quality == quality).count()
    }

    fn expect_kind(&self, expected: SeriesKind) -> Result<()> {
        if self.kind != expected {
            return Err(PreprocessError::WrongKind { expected, found: self.kind });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceClass {
    ShortStay,
    Regular,
    Stationary,
}

/// Daily connected-minute thresholds separating device classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds {
    /// Devices below this many minutes are short-stay.
    pub short_stay_max_min: u32,
    /// Devices above this many minutes are stationary.
    pub regular_max_min: u32,
}

impl Default for ClassThresholds {
    fn default() -> Self {
        Self { short_stay_max_min: 45, regular_max_min: 540 }
    }
}

impl ClassThresholds {
    pub fn classify(&self, connected_minutes: u32) -> DeviceClass {
        if connected_minutes < self.short_stay_max_min {
            DeviceClass::ShortStay
        } else if connected_minutes <= self.regular_max_min {
            DeviceClass::Regular
        } else {
            DeviceClass::Stationary
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DeviceDayStats {
    pub building_id: Arc<str>,
    pub date: NaiveDate,
    pub device_hash: Arc<str>,
    pub connected_minutes: u32,
    pub class: DeviceClass,
}

/// Bitset over the 288 five-minute slots of a day.
#[derive(Debug, Clone, Copy, Default)]
struct SlotSet([u64; 5]);

impl SlotSet {
    fn insert(&mut self, slot: usize) {
        self.0[slot / 64] |= 1 << (slot % 64);
    }

    fn len(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }

    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..SLOTS_PER_DAY).filter(|&s| self.0[s / 64] & (1 << (s % 64)) != 0)
    }
}

type DeviceDayKey = (Arc<str>, Arc<str>, NaiveDate);

fn device_slots(events: &[ConnectionEvent]) -> HashMap<DeviceDayKey, SlotSet> {
    let mut slots: HashMap<DeviceDayKey, SlotSet> = HashMap::new();
    for e in events {
        slots
            .entry((e.building_id.clone(), e.device_hash.clone(), e.timestamp.date()))
            .or_default()
            .insert(slot_of_day(&e.timestamp));
    }
    slots
}

/// Connected minutes and class for every (device, building, day).
///
/// A connection event marks its whole five-minute slot, so minutes are five
/// times the number of distinct slots. Output is sorted by building, date
/// and device.
pub fn classify_devices(events: &[ConnectionEvent], thresholds: &ClassThresholds) -> Vec<DeviceDayStats> {
    let mut stats: Vec<_> = device_slots(events)
        .into_iter()
        .map(|((building_id, device_hash, date), slots)| {
            let connected_minutes = 5 * slots.len();
            DeviceDayStats {
                building_id,
                date,
                device_hash,
                connected_minutes,
                class: thresholds.classify(connected_minutes),
            }
        })
        .collect();
    stats.sort();
    stats
}

/// Hourly counts of regular devices per building.
///
/// Each hour is the ceiling of the mean of its twelve slot counts. Hours
/// without any connection event are zero-filled. `range` fixes the covered
/// dates (inclusive); by default each building spans its first to last event.
pub fn occupancy_series(
    stats: &[DeviceDayStats],
    events: &[ConnectionEvent],
    range: Option<(NaiveDate, NaiveDate)>,
) -> Vec<HourlySeries> {
    let regular: HashSet<(&str, &str, NaiveDate)> = stats
        .iter()
        .filter(|s| s.class == DeviceClass::Regular)
        .map(|s| (&*s.building_id, &*s.device_hash, s.date))
        .collect();

    // per building: per date slot counts and hours with any data
    let mut per_building: BTreeMap<Arc<str>, BTreeMap<NaiveDate, ([u32; SLOTS_PER_DAY], [bool; HOURS])>> =
        BTreeMap::new();
    for ((building, device, date), slots) in device_slots(events) {
        let is_regular = regular.contains(&(&*building, &*device, date));
        let (counts, seen) = per_building
            .entry(building.clone())
            .or_default()
            .entry(date)
            .or_insert(([0; SLOTS_PER_DAY], [false; HOURS]));
        for slot in slots.iter() {
            seen[slot / SLOTS_PER_HOUR] = true;
            if is_regular {
                counts[slot] += 1;
            }
        }
    }

    per_building
        .into_iter()
        .map(|(building, days)| {
            let (first, last) = range.unwrap_or_else(|| {
                (*days.keys().next().expect("non-empty"), *days.keys().next_back().expect("non-empty"))
            });
            let mut samples = Vec::new();
            let mut date = first;
            while date <= last {
                match days.get(&date) {
                    Some((counts, seen)) => {
                        for hour in 0..HOURS {
                            if !seen[hour] {
                                samples.push(Sample::zero_filled());
                                continue;
                            }
                            let sum: u32 = counts[hour * SLOTS_PER_HOUR..(hour + 1) * SLOTS_PER_HOUR].iter().sum();
                            let ceil_mean = sum.div_ceil(SLOTS_PER_HOUR as u32);
                            samples.push(Sample::observed(ceil_mean as f64));
                        }
                    }
                    None => samples.extend(std::iter::repeat_n(Sample::zero_filled(), HOURS)),
                }
                date = date + Days::new(1);
            }
            HourlySeries::new(building.to_string(), SeriesKind::OccupantCount, first, samples)
        })
        .collect()
}

/// Hourly mean demand per building from the valid five-minute readings.
/// Hours without a valid reading are nullified.
pub fn resample_meter(readings: &[MeterReading], range: Option<(NaiveDate, NaiveDate)>) -> Vec<HourlySeries> {
    let mut per_building: BTreeMap<Arc<str>, BTreeMap<NaiveDate, [(f64, u32); HOURS]>> = BTreeMap::new();
    let mut span: HashMap<Arc<str>, (NaiveDate, NaiveDate)> = HashMap::new();
    for r in readings {
        let date = r.timestamp.date();
        span.entry(r.building_id.clone())
            .and_modify(|(lo, hi)| {
                *lo = (*lo).min(date);
                *hi = (*hi).max(date);
            })
            .or_insert((date, date));
        let day = per_building.entry(r.building_id.clone()).or_default().entry(date).or_insert([(0.0, 0); HOURS]);
        if r.valid {
            let cell = &mut day[slot_of_day(&r.timestamp) / SLOTS_PER_HOUR];
            cell.0 += r.demand_kw;
            cell.1 += 1;
        }
    }

    per_building
        .into_iter()
        .map(|(building, days)| {
            let (first, last) = range.unwrap_or(span[&building]);
            let mut samples = Vec::new();
            let mut date = first;
            while date <= last {
                match days.get(&date) {
                    Some(hours) => samples.extend(hours.iter().map(|&(sum, n)| {
                        if n == 0 {
                            Sample::nullified()
                        } else {
                            Sample::observed(sum / n as f64)
                        }
                    })),
                    None => samples.extend(std::iter::repeat_n(Sample::nullified(), HOURS)),
                }
                date = date + Days::new(1);
            }
            HourlySeries::new(building.to_string(), SeriesKind::DemandKw, first, samples)
        })
        .collect()
}

/// Linearly interpolated quantile of sorted data (the common "type 7" rule).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Upper IQR bound `Q3 + factor * (Q3 - Q1)`.
pub fn iqr_upper_bound(values: &[f64], factor: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    q3 + factor * (q3 - q1)
}

/// Outcome of a cleaning pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Cleaned {
    pub series: HourlySeries,
    /// Samples this pass nullified.
    pub nullified: usize,
    /// Upper bound used by the IQR pass.
    pub bound: Option<f64>,
}

/// Minimum complete days needed for the IQR pass.
pub const IQR_MIN_DAYS: usize = 4;

/// Nullifies hourly demand above the IQR upper bound of daily peaks.
///
/// Peaks come from complete days only. With fewer than four complete days
/// the series is returned unchanged with a warning.
pub fn iqr_clean(series: &HourlySeries, factor: f64) -> Result<Cleaned> {
    series.expect_kind(SeriesKind::DemandKw)?;
    let peaks: Vec<f64> = (0..series.days())
        .filter_map(|d| series.complete_day(d))
        .map(|day| day.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut out = series.clone();
    if peaks.len() < IQR_MIN_DAYS {
        out.warnings.push(format!("iqr_clean skipped: {} complete days, need {IQR_MIN_DAYS}", peaks.len()));
        return Ok(Cleaned { series: out, nullified: 0, bound: None });
    }
    let bound = iqr_upper_bound(&peaks, factor);
    let mut nullified = 0;
    for s in &mut out.samples {
        if s.value.is_some_and(|v| v > bound) {
            s.nullify();
            nullified += 1;
        }
    }
    Ok(Cleaned { series: out, nullified, bound: Some(bound) })
}

/// Nullifies every run of at least `window` consecutive hours whose
/// hour-to-hour change is exactly zero.
pub fn flatline_clean(series: &HourlySeries, window: usize) -> Result<Cleaned> {
    series.expect_kind(SeriesKind::DemandKw)?;
    let mut out = series.clone();
    let mut nullified = 0;
    let n = out.samples.len();
    let mut i = 0;
    while i < n {
        let Some(v) = out.samples[i].value else {
            i += 1;
            continue;
        };
        let mut j = i + 1;
        while j < n && out.samples[j].value == Some(v) {
            j += 1;
        }
        if j - i >= window.max(2) {
            for s in &mut out.samples[i..j] {
                s.nullify();
            }
            nullified += j - i;
        }
        i = j;
    }
    Ok(Cleaned { series: out, nullified, bound: None })
}

/// Fills nullified runs of at most `max_gap` hours that have a valid value
/// on both sides by linear interpolation.
pub fn interpolate_gaps(series: &HourlySeries, max_gap: usize) -> HourlySeries {
    let mut out = series.clone();
    let n = out.samples.len();
    let mut i = 0;
    while i < n {
        if out.samples[i].value.is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && out.samples[i].value.is_none() {
            i += 1;
        }
        let len = i - start;
        if start == 0 || i == n || len > max_gap {
            continue;
        }
        let (Some(left), Some(right)) = (out.samples[start - 1].value, out.samples[i].value) else {
            continue;
        };
        let step = (right - left) / (len + 1) as f64;
        for (k, s) in out.samples[start..i].iter_mut().enumerate() {
            *s = Sample { value: Some(left + step * (k + 1) as f64), quality: Quality::Interpolated };
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningConfig {
    pub iqr_factor: f64,
    pub flatline_window_h: usize,
    pub max_gap_h: usize,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self { iqr_factor: 1.5, flatline_window_h: 3, max_gap_h: 6 }
    }
}

/// Result of the full demand cleaning chain.
#[derive(Debug, Clone, PartialEq)]
pub struct CleaningReport {
    pub series: HourlySeries,
    /// Series right after outlier removal, before interpolation.
    pub after_outliers: HourlySeries,
    pub iqr_bound: Option<f64>,
    pub iqr_nullified: usize,
    pub flatline_nullified: usize,
    pub interpolated: usize,
}

/// IQR spike removal, then flat-line removal, then gap interpolation.
pub fn clean_demand(series: &HourlySeries, config: &CleaningConfig) -> Result<CleaningReport> {
    let iqr = iqr_clean(series, config.iqr_factor)?;
    let flat = flatline_clean(&iqr.series, config.flatline_window_h)?;
    let filled = interpolate_gaps(&flat.series, config.max_gap_h);
    let interpolated = filled.count_quality(Quality::Interpolated) - series.count_quality(Quality::Interpolated);
    Ok(CleaningReport {
        series: filled,
        after_outliers: flat.series,
        iqr_bound: iqr.bound,
        iqr_nullified: iqr.nullified,
        flatline_nullified: flat.nullified,
        interpolated,
    })
}

/// Min-max bounds of a normalization scope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        values.into_iter().fold(None, |acc, v| match acc {
            None => Some(MinMax { min: v, max: v }),
            Some(m) => Some(MinMax { min: m.min.min(v), max: m.max.max(v) }),
        })
    }

    /// True when max equals min and every value normalizes to zero.
    pub fn is_degenerate(&self) -> bool {
        self.max <= self.min
    }

    pub fn normalize(&self, v: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }
}

/// Min-max normalization. Without `params` the bounds are fitted on `values`;
/// an empty input yields the degenerate bounds `[0, 0]`.
pub fn normalize(values: &[f64], params: Option<MinMax>) -> (Vec<f64>, MinMax) {
    let params = params.or_else(|| MinMax::fit(values.iter().copied())).unwrap_or(MinMax { min: 0.0, max: 0.0 });
    (values.iter().map(|&v| params.normalize(v)).collect(), params)
}

pub fn denormalize(values: &[f64], params: &MinMax) -> Vec<f64> {
    values.iter().map(|&v| params.denormalize(v)).collect()
}

/// Granularity at which normalization bounds are fitted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormScope {
    #[default]
    #[serde(rename = "building-semester")]
    BuildingSemester,
    #[serde(rename = "building")]
    Building,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScopeKey {
    pub building_id: String,
    /// `None` when bounds span the whole analysis period.
    pub semester: Option<Semester>,
    pub kind: SeriesKind,
}

impl fmt::Display for ScopeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.semester {
            Some(s) => write!(f, "{}/{}/{}", self.building_id, s, self.kind),
            None => write!(f, "{}/all/{}", self.building_id, self.kind),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub scope: ScopeKey,
    pub min: f64,
    pub max: f64,
}

impl NormalizationParams {
    pub fn bounds(&self) -> MinMax {
        MinMax { min: self.min, max: self.max }
    }
}

/// Normalization bounds for every scope of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTable {
    pub scope: NormScope,
    pub split: Option<NaiveDate>,
    pub params: Vec<NormalizationParams>,
}

impl NormalizationTable {
    fn key(&self, building_id: &str, date: NaiveDate, kind: SeriesKind) -> ScopeKey {
        let semester = match (self.scope, self.split) {
            (NormScope::BuildingSemester, Some(split)) => Some(Semester::of(date, split)),
            _ => None,
        };
        ScopeKey { building_id: building_id.to_string(), semester, kind }
    }

    /// Bounds for the scope `date` falls in.
    pub fn get(&self, building_id: &str, date: NaiveDate, kind: SeriesKind) -> Result<&NormalizationParams> {
        let key = self.key(building_id, date, kind);
        self.params.iter().find(|p| p.scope == key).ok_or_else(|| PreprocessError::MissingParams(key.to_string()))
    }

    pub fn get_semester(
        &self,
        building_id: &str,
        semester: Semester,
        kind: SeriesKind,
    ) -> Result<&NormalizationParams> {
        let key = ScopeKey {
            building_id: building_id.to_string(),
            semester: match self.scope {
                NormScope::BuildingSemester => Some(semester),
                NormScope::Building => None,
            },
            kind,
        };
        self.params.iter().find(|p| p.scope == key).ok_or_else(|| PreprocessError::MissingParams(key.to_string()))
    }
}

/// Fits bounds per scope and returns normalized copies of the series.
/// Nullified samples stay nullified.
pub fn normalize_series(
    series: &[HourlySeries],
    split: NaiveDate,
    scope: NormScope,
) -> (Vec<HourlySeries>, NormalizationTable) {
    let mut table = NormalizationTable { scope, split: Some(split), params: Vec::new() };
    let mut fitted: BTreeMap<ScopeKey, MinMax> = BTreeMap::new();
    for s in series {
        for (i, sample) in s.samples.iter().enumerate() {
            let Some(v) = sample.value else { continue };
            let key = table.key(&s.building_id, s.date(i / HOURS), s.kind);
            fitted
                .entry(key)
                .and_modify(|m| {
                    m.min = m.min.min(v);
                    m.max = m.max.max(v);
                })
                .or_insert(MinMax { min: v, max: v });
        }
    }
    table.params =
        fitted.iter().map(|(scope, m)| NormalizationParams { scope: scope.clone(), min: m.min, max: m.max }).collect();

    let normalized = series
        .iter()
        .map(|s| {
            let mut out = s.clone();
            for (i, sample) in out.samples.iter_mut().enumerate() {
                if let Some(v) = sample.value {
                    let key = table.key(&s.building_id, s.date(i / HOURS), s.kind);
                    sample.value = Some(fitted[&key].normalize(v));
                }
            }
            out
        })
        .collect();
    (normalized, table)
}
