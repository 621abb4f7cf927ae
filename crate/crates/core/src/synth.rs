//! Synthetic campuses with known ground truth, and brute-force oracles.
//!
//! Occupancy comes from per-device WiFi sessions: regular occupants connect
//! from their arrival hour until their departure hour, short-stay visitors
//! for under 45 minutes, and stationary devices all day. Demand is an hourly
//! trapezoid (setback level, operating level between the ramp and setback
//! hours) with Gaussian noise on each five-minute reading, a linear trend in
//! the operating amplitude, and optional spike and flat-line defects.

use std::collections::HashSet;
use std::sync::Arc;

use chrono::{Datelike, Days, Duration, NaiveDate, NaiveDateTime, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::squared_distance;
use crate::ingest::{ConnectionEvent, MeterReading};
use crate::time::{hour_start, SLOTS_PER_DAY, SLOTS_PER_HOUR};
use crate::{DayProfile, HOURS};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid spec for {building}: {reason}")]
    InvalidSpec { building: String, reason: String },
    #[error("oracle_kmeans supports at most {max_n} points and k in 1..={max_k}, got n={n}, k={k}")]
    OracleBounds { n: usize, k: usize, max_n: usize, max_k: usize },
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccupancySpec {
    pub arrival_h: u8,
    pub departure_h: u8,
    pub peak_devices: u32,
    /// Fraction of the weekday device count present on weekends.
    pub weekend_scale: f64,
    /// Fraction of occupants leaving for the lunch hour.
    pub lunch_dip: f64,
    /// Relative sd of the daily device count.
    pub noise_sd: f64,
}

impl Default for OccupancySpec {
    fn default() -> Self {
        Self { arrival_h: 8, departure_h: 18, peak_devices: 15, weekend_scale: 0.05, lunch_dip: 0.3, noise_sd: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandSpec {
    pub setback_kw: f64,
    pub operating_kw: f64,
    /// Last hour at the setback level before the ramp-up.
    pub ramp_h: u8,
    /// Last hour at the operating level.
    pub setback_h: u8,
    /// Relative change of the operating amplitude from the first to the
    /// last generated day.
    pub seasonal_trend: f64,
    /// Operating amplitude multiplier on weekends.
    pub weekend_scale: f64,
    /// Sd of each five-minute reading as a fraction of the operating level.
    pub noise_sd: f64,
}

impl Default for DemandSpec {
    fn default() -> Self {
        Self {
            setback_kw: 100.0,
            operating_kw: 400.0,
            ramp_h: 5,
            setback_h: 21,
            seasonal_trend: -0.2,
            weekend_scale: 1.0,
            noise_sd: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceSpec {
    pub short_stay_per_day: u32,
    pub stationary: u32,
    /// Devices seen only on WAPs outside the naming pattern, at night.
    pub external_per_day: u32,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        Self { short_stay_per_day: 5, stationary: 1, external_per_day: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefectSpec {
    /// Hours whose readings all carry an added spike.
    pub spikes: u32,
    pub spike_kw: f64,
    /// Runs of identical readings; even runs are stuck at zero.
    pub flatline_runs: u32,
    pub flatline_hours: u32,
}

impl Default for DefectSpec {
    fn default() -> Self {
        Self { spikes: 0, spike_kw: 800.0, flatline_runs: 0, flatline_hours: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingSpec {
    pub building_id: String,
    #[serde(default)]
    pub occupancy: OccupancySpec,
    #[serde(default)]
    pub demand: DemandSpec,
    #[serde(default)]
    pub devices: DeviceSpec,
    #[serde(default)]
    pub defects: DefectSpec,
}

impl BuildingSpec {
    pub fn new(building_id: impl Into<String>) -> Self {
        Self {
            building_id: building_id.into(),
            occupancy: OccupancySpec::default(),
            demand: DemandSpec::default(),
            devices: DeviceSpec::default(),
            defects: DefectSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(SynthError::InvalidSpec { building: self.building_id.clone(), reason: reason.to_string() })
        };
        let o = &self.occupancy;
        let d = &self.demand;
        if self.building_id.is_empty() || !self.building_id.chars().all(|c| c.is_ascii_alphanumeric()) {
            return fail("building_id must be non-empty ASCII alphanumeric");
        }
        // three hours keep every regular session above 45 minutes
        if o.departure_h > 23 || o.arrival_h + 3 > o.departure_h {
            return fail("need arrival_h + 3 <= departure_h <= 23");
        }
        if o.peak_devices == 0 {
            return fail("peak_devices must be positive");
        }
        if !(0.0..=1.0).contains(&o.weekend_scale) || !(0.0..=1.0).contains(&o.lunch_dip) || o.noise_sd < 0.0 {
            return fail("occupancy scales must lie in [0, 1] and noise must be non-negative");
        }
        if d.setback_h > 22 || d.ramp_h >= d.setback_h {
            return fail("need ramp_h < setback_h <= 22");
        }
        if !(d.setback_kw > 0.0 && d.operating_kw > d.setback_kw) {
            return fail("need 0 < setback_kw < operating_kw");
        }
        if d.seasonal_trend <= -1.0 || d.weekend_scale <= 0.0 || d.noise_sd < 0.0 {
            return fail("demand amplitude must stay positive and noise non-negative");
        }
        let f = &self.defects;
        if f.spikes > 0 && f.spike_kw <= 0.0 {
            return fail("spike_kw must be positive");
        }
        if f.flatline_runs > 0 && !(1..=HOURS as u32).contains(&f.flatline_hours) {
            return fail("flatline_hours must lie in 1..=24");
        }
        Ok(())
    }
}

/// What the generator put into one building-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayTruth {
    pub date: NaiveDate,
    pub regular_devices: u32,
    /// 1 on weekdays, the occupancy weekend scale on weekends.
    pub occupancy_scale: f64,
    pub setback_kw: f64,
    /// Noise-free operating level of the day.
    pub operating_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub building_id: String,
    pub arrival_h: u8,
    pub departure_h: u8,
    pub ramp_h: u8,
    pub setback_h: u8,
    pub days: Vec<DayTruth>,
    /// Start of every hour carrying a spike.
    pub spike_hours: Vec<NaiveDateTime>,
    /// Start hour and length of every flat-line run.
    pub flatline_runs: Vec<(NaiveDateTime, u32)>,
}

impl GroundTruth {
    /// Noise-free hourly demand of a day.
    pub fn trapezoid(&self, day: &DayTruth) -> DayProfile {
        trapezoid(day.setback_kw, day.operating_kw, self.ramp_h, self.setback_h)
    }

    pub fn flatline_hours(&self) -> Vec<NaiveDateTime> {
        self.flatline_runs
            .iter()
            .flat_map(|&(start, len)| (0..len as i64).map(move |h| start + Duration::hours(h)))
            .collect()
    }
}

/// Setback level up to and including `ramp_h`, operating level through
/// `setback_h`, setback level after.
pub fn trapezoid(setback_kw: f64, operating_kw: f64, ramp_h: u8, setback_h: u8) -> DayProfile {
    let mut p = [setback_kw; HOURS];
    p[ramp_h as usize + 1..=setback_h as usize].fill(operating_kw);
    p
}

#[derive(Debug, Clone, Default)]
pub struct Generated {
    pub events: Vec<ConnectionEvent>,
    pub readings: Vec<MeterReading>,
    pub truth: Vec<GroundTruth>,
}

fn is_weekend(date: NaiveDate) -> bool {
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

fn device_hash(rng: &mut ChaCha8Rng) -> Arc<str> {
    format!("{:016x}", rng.random::<u64>()).into()
}

struct EventSink<'a> {
    rng: &'a mut ChaCha8Rng,
    building: Arc<str>,
    events: Vec<ConnectionEvent>,
}

impl EventSink<'_> {
    /// One event at a random second of every slot in `slots`.
    fn emit(&mut self, date: NaiveDate, wap: &Arc<str>, device: &Arc<str>, slots: impl Iterator<Item = usize>) {
        let midnight = hour_start(date, 0);
        for slot in slots {
            let second = self.rng.random_range(0..300);
            self.events.push(ConnectionEvent {
                timestamp: midnight + Duration::seconds((slot * 300 + second) as i64),
                building_id: self.building.clone(),
                wap_name: wap.clone(),
                device_hash: device.clone(),
            });
        }
    }
}

/// Connected slots of one regular occupant: arrival during the arrival hour,
/// departure during the hour before `departure_h`, at most 540 minutes.
fn regular_slots(rng: &mut ChaCha8Rng, o: &OccupancySpec) -> Vec<bool> {
    let a = o.arrival_h as usize * SLOTS_PER_HOUR;
    let d = o.departure_h as usize * SLOTS_PER_HOUR;
    let first = a + rng.random_range(0..SLOTS_PER_HOUR);
    let last = d - SLOTS_PER_HOUR + rng.random_range(0..SLOTS_PER_HOUR);
    let mut on = vec![false; SLOTS_PER_DAY];
    on[first..=last].fill(true);

    let max_slots = 540 / 5;
    let span = last - first + 1;
    if span > max_slots {
        // leave the arrival and departure hours untouched
        let gap = span - max_slots + rng.random_range(0..SLOTS_PER_HOUR);
        let lo = first + SLOTS_PER_HOUR;
        let hi = (last + 1).saturating_sub(SLOTS_PER_HOUR + gap).max(lo);
        let start = rng.random_range(lo..=hi);
        on[start..(start + gap).min(last)].fill(false);
    }
    let noon = 12 * SLOTS_PER_HOUR;
    if rng.random_bool(o.lunch_dip) && noon > first + SLOTS_PER_HOUR && noon + SLOTS_PER_HOUR <= last {
        let len = rng.random_range(6..=SLOTS_PER_HOUR);
        let remaining = on.iter().filter(|&&x| x).count() - on[noon..noon + len].iter().filter(|&&x| x).count();
        if remaining >= 9 {
            on[noon..noon + len].fill(false);
        }
    }
    on
}

/// Generates one building over `days` days from `start`.
pub fn gen_building(spec: &BuildingSpec, start: NaiveDate, days: u32, seed: u64) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let building: Arc<str> = spec.building_id.as_str().into();
    let o = &spec.occupancy;
    let d = &spec.demand;

    let pool_size = (o.peak_devices as f64 * (1.0 + 4.0 * o.noise_sd)).ceil() as usize + 1;
    let regulars: Vec<Arc<str>> = (0..pool_size).map(|_| device_hash(&mut rng)).collect();
    let stationary: Vec<Arc<str>> = (0..spec.devices.stationary).map(|_| device_hash(&mut rng)).collect();
    let waps: Vec<Arc<str>> = (1..=4).map(|i| format!("{}-{}-{}", spec.building_id, i, 100 + i).into()).collect();
    let external_wap: Arc<str> = format!("OUTDOOR-AP-{}", spec.building_id).into();
    let count_noise = Normal::new(0.0, o.noise_sd.max(f64::MIN_POSITIVE)).expect("finite sd");

    let mut truth_days = Vec::with_capacity(days as usize);
    let mut sink = EventSink { rng: &mut rng, building: building.clone(), events: Vec::new() };
    for day in 0..days {
        let date = start + Days::new(day as u64);
        let weekend = is_weekend(date);
        let scale = if weekend { o.weekend_scale } else { 1.0 };
        let jitter = if o.noise_sd > 0.0 { count_noise.sample(sink.rng) } else { 0.0 };
        let n = ((o.peak_devices as f64 * scale * (1.0 + jitter)).round().max(0.0) as usize).min(pool_size);

        let mut present = regulars.clone();
        present.shuffle(sink.rng);
        for device in &present[..n] {
            let wap = &waps[sink.rng.random_range(0..waps.len())];
            let on = regular_slots(sink.rng, o);
            sink.emit(date, wap, device, (0..SLOTS_PER_DAY).filter(|&s| on[s]));
        }
        for device in &stationary {
            sink.emit(date, &waps[0], device, 0..SLOTS_PER_DAY);
        }
        let day_start = o.arrival_h as usize * SLOTS_PER_HOUR;
        let day_end = o.departure_h as usize * SLOTS_PER_HOUR;
        for _ in 0..spec.devices.short_stay_per_day {
            let device = device_hash(sink.rng);
            let wap = &waps[sink.rng.random_range(0..waps.len())];
            let first = sink.rng.random_range(day_start..day_end);
            let len = sink.rng.random_range(1..=8).min(SLOTS_PER_DAY - first);
            sink.emit(date, wap, &device, first..first + len);
        }
        for _ in 0..spec.devices.external_per_day {
            let device = device_hash(sink.rng);
            // two hours after midnight: regular-length, but outside the building
            sink.emit(date, &external_wap, &device, 0..2 * SLOTS_PER_HOUR);
        }

        let progress = if days > 1 { day as f64 / (days - 1) as f64 } else { 0.0 };
        let amplitude = (d.operating_kw - d.setback_kw)
            * (1.0 + d.seasonal_trend * progress)
            * if weekend { d.weekend_scale } else { 1.0 };
        truth_days.push(DayTruth {
            date,
            regular_devices: n as u32,
            occupancy_scale: scale,
            setback_kw: d.setback_kw,
            operating_kw: d.setback_kw + amplitude,
        });
    }
    let mut events = sink.events;
    events.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.device_hash.cmp(&b.device_hash)));

    let mut truth = GroundTruth {
        building_id: spec.building_id.clone(),
        arrival_h: o.arrival_h,
        departure_h: o.departure_h,
        ramp_h: d.ramp_h,
        setback_h: d.setback_h,
        days: truth_days,
        spike_hours: Vec::new(),
        flatline_runs: Vec::new(),
    };
    let readings = gen_meter(spec, &mut truth, &mut rng);
    Ok(Generated { events, readings, truth: vec![truth] })
}

fn gen_meter(spec: &BuildingSpec, truth: &mut GroundTruth, rng: &mut ChaCha8Rng) -> Vec<MeterReading> {
    let d = &spec.demand;
    let f = &spec.defects;
    let total_hours = truth.days.len() * HOURS;
    let mut hourly: Vec<f64> = truth.days.iter().flat_map(|day| truth.trapezoid(day)).collect();
    let noise = Normal::new(0.0, (d.noise_sd * d.operating_kw).max(f64::MIN_POSITIVE)).expect("finite sd");

    // defect placement: spikes on single hours, flat-lines inside one day
    let mut used: HashSet<usize> = HashSet::new();
    let mut spiked = vec![false; total_hours];
    let mut stuck: Vec<Option<f64>> = vec![None; total_hours];
    if total_hours > 0 {
        for run in 0..f.flatline_runs {
            let len = f.flatline_hours as usize;
            for _ in 0..1000 {
                let day = rng.random_range(0..truth.days.len());
                let h0 = day * HOURS + rng.random_range(0..=HOURS - len);
                // one free hour on both sides keeps runs from merging
                let lo = h0.saturating_sub(1);
                let hi = (h0 + len).min(total_hours - 1);
                if (lo..=hi).any(|h| used.contains(&h)) {
                    continue;
                }
                let value = if run % 2 == 0 { 0.0 } else { hourly[h0].round() };
                stuck[h0..h0 + len].fill(Some(value));
                used.extend(lo..=hi);
                truth.flatline_runs.push((hour_start(truth.days[day].date, h0 % HOURS), len as u32));
                break;
            }
        }
        for _ in 0..f.spikes {
            for _ in 0..1000 {
                let h = rng.random_range(0..total_hours);
                if used.contains(&h) {
                    continue;
                }
                used.insert(h);
                spiked[h] = true;
                truth.spike_hours.push(hour_start(truth.days[h / HOURS].date, h % HOURS));
                break;
            }
        }
    }
    truth.flatline_runs.sort();
    truth.spike_hours.sort();

    let building: Arc<str> = spec.building_id.as_str().into();
    let mut readings = Vec::with_capacity(total_hours * SLOTS_PER_HOUR);
    for (h, level) in hourly.iter_mut().enumerate() {
        let hour = hour_start(truth.days[h / HOURS].date, h % HOURS);
        for slot in 0..SLOTS_PER_HOUR {
            let value = match stuck[h] {
                Some(v) => v,
                None => {
                    let mut v = *level;
                    if d.noise_sd > 0.0 {
                        v += noise.sample(rng);
                    }
                    if spiked[h] {
                        v += f.spike_kw;
                    }
                    v.max(0.0)
                }
            };
            readings.push(MeterReading {
                timestamp: hour + Duration::minutes(5 * slot as i64),
                building_id: building.clone(),
                demand_kw: value,
                valid: true,
            });
        }
    }
    readings
}

/// A campus of buildings generated over the same period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampusSpec {
    pub start: NaiveDate,
    pub days: u32,
    pub seed: u64,
    #[serde(rename = "building")]
    pub buildings: Vec<BuildingSpec>,
}

/// Per-building seed: buildings get independent streams.
pub fn building_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Generates every building in parallel; output is ordered by building
/// then timestamp.
pub fn gen_campus(campus: &CampusSpec) -> Result<Generated> {
    let parts: Vec<Generated> = campus
        .buildings
        .par_iter()
        .enumerate()
        .map(|(i, spec)| gen_building(spec, campus.start, campus.days, building_seed(campus.seed, i)))
        .collect::<Result<_>>()?;
    let mut out = Generated::default();
    for p in parts {
        out.events.extend(p.events);
        out.readings.extend(p.readings);
        out.truth.extend(p.truth);
    }
    Ok(out)
}

/// Target window for the closed-form savings oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleTarget {
    /// The same (ramp-up, setback) hours every day.
    Fixed { start: u8, end: Option<u8> },
    /// Static hours shifted by (morning, evening) hours.
    Shift { morning: i32, evening: i32 },
    /// The true occupied window at threshold δ and lag τ, with the evening
    /// lag subtracted; days whose occupancy scale is at most δ are
    /// unoccupied.
    Occupancy { delta: f64, tau: u8 },
}

/// Savings in kWh implied by the generator's trapezoids for `target`,
/// summed over every generated day. Noise and defects are ignored.
///
/// On a trapezoid with amplitude `A`, ramp `r` and setback `s`, moving the
/// ramp-up to `t_s` and the setback to `t_e` saves `A * ((t_s - r) + (s - t_e))`;
/// an unoccupied day saves `A * (s - r)`.
pub fn oracle_savings(truth: &GroundTruth, target: OracleTarget) -> f64 {
    let r = truth.ramp_h as i64;
    let s = truth.setback_h as i64;
    let clamp = |h: i64| h.clamp(0, HOURS as i64 - 1);
    truth
        .days
        .iter()
        .map(|day| {
            let amplitude = day.operating_kw - day.setback_kw;
            let window = match target {
                OracleTarget::Fixed { start, end } => Some((start as i64, end.map(i64::from))),
                OracleTarget::Shift { morning, evening } => {
                    Some((clamp(r + morning as i64), Some(clamp(s + evening as i64))))
                }
                OracleTarget::Occupancy { delta, tau } => (day.occupancy_scale > delta).then(|| {
                    (clamp(truth.arrival_h as i64 - tau as i64), Some(clamp(truth.departure_h as i64 - tau as i64)))
                }),
            };
            let hours = match window {
                None => s - r,
                Some((start, end)) => (start - r) + end.map_or(0, |e| s - e),
            };
            amplitude * hours as f64
        })
        .sum()
}

pub const ORACLE_MAX_POINTS: usize = 8;
pub const ORACLE_MAX_K: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePartition {
    pub wss: f64,
    /// Group index per point, canonical (first point in group 0, ...).
    pub partition: Vec<usize>,
}

/// Exhaustive minimum of the within-cluster sum of squares over every
/// partition of `points` into at most `k` non-empty groups.
pub fn oracle_kmeans<P: AsRef<[f64]>>(points: &[P], k: usize) -> Result<OraclePartition> {
    let n = points.len();
    if n == 0 || n > ORACLE_MAX_POINTS || k == 0 || k > ORACLE_MAX_K {
        return Err(SynthError::OracleBounds { n, k, max_n: ORACLE_MAX_POINTS, max_k: ORACLE_MAX_K });
    }
    let dim = points[0].as_ref().len();
    let mut best = OraclePartition { wss: f64::INFINITY, partition: vec![0; n] };
    // restricted growth strings: labels[i] <= max(labels[..i]) + 1
    let mut labels = vec![0usize; n];
    loop {
        let groups = labels.iter().max().map_or(0, |m| m + 1);
        let mut wss = 0.0;
        for g in 0..groups {
            let members: Vec<&[f64]> = (0..n).filter(|&i| labels[i] == g).map(|i| points[i].as_ref()).collect();
            let mut mean = vec![0.0; dim];
            for m in &members {
                for (a, b) in mean.iter_mut().zip(m.iter()) {
                    *a += b;
                }
            }
            for a in &mut mean {
                *a /= members.len() as f64;
            }
            wss += members.iter().map(|m| squared_distance(m, &mean)).sum::<f64>();
        }
        if wss < best.wss {
            best = OraclePartition { wss, partition: labels.clone() };
        }
        // next string in lexicographic order
        let mut i = n;
        loop {
            if i == 1 {
                return Ok(best);
            }
            i -= 1;
            let prefix_max = labels[..i].iter().max().copied().unwrap_or(0);
            if labels[i] <= prefix_max && labels[i] + 1 < k {
                labels[i] += 1;
                labels[i + 1..].fill(0);
                break;
            }
        }
    }
}

/// Gaussian blobs around `centers`, `per_cluster` points each.
pub fn gaussian_blobs(centers: &[Vec<f64>], per_cluster: usize, sd: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sd).expect("finite sd");
    let mut out = Vec::with_capacity(centers.len() * per_cluster);
    for c in centers {
        for _ in 0..per_cluster {
            out.push(c.iter().map(|x| x + normal.sample(&mut rng)).collect());
        }
    }
    out
}
