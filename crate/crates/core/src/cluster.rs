//! Daily profile clustering.
//!
//! Days are clustered jointly across buildings, one data set per
//! (series kind, semester). Centroids are labeled 1..=k in order of
//! descending peak so that label 1 is always the highest-peak profile.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{HourlySeries, NormalizationParams, NormalizationTable, SeriesKind};
use crate::time::{DayGroup, Semester};
use crate::DayProfile;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("cannot form {k} clusters from {rows} rows")]
    TooFewRows { rows: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no complete days for {kind} in {semester}")]
    EmptyMatrix { kind: SeriesKind, semester: Semester },
    #[error("elbow selection needs at least 3 curve points, got {0}")]
    TooFewCurvePoints(usize),
    #[error("WSS curve must cover a contiguous k range (gap after k={0})")]
    NonContiguousCurve(usize),
    #[error("bad profile label `{0}`")]
    BadLabel(String),
}

pub type Result<T> = std::result::Result<T, ClusterError>;

/// Identifies one representative profile, e.g. `OS-1` (occupancy, summer,
/// label 1) or `DF-3` (demand, fall, label 3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProfileId {
    pub kind: SeriesKind,
    pub semester: Semester,
    /// 1-based label.
    pub label: u32,
}

impl ProfileId {
    pub fn index(&self) -> usize {
        self.label as usize - 1
    }
}

impl fmt::Display for ProfileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}-{}", self.kind.code(), self.semester.code(), self.label)
    }
}

impl FromStr for ProfileId {
    type Err = ClusterError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || ClusterError::BadLabel(s.to_string());
        let (prefix, label) = s.split_once('-').ok_or_else(bad)?;
        let mut chars = prefix.chars();
        let kind = match chars.next() {
            Some('O') => SeriesKind::OccupantCount,
            Some('D') => SeriesKind::DemandKw,
            _ => return Err(bad()),
        };
        let semester = match chars.next() {
            Some('S') => Semester::Summer,
            Some('F') => Semester::Fall,
            _ => return Err(bad()),
        };
        if chars.next().is_some() {
            return Err(bad());
        }
        let label: u32 = label.parse().map_err(|_| bad())?;
        if label == 0 {
            return Err(bad());
        }
        Ok(ProfileId { kind, semester, label })
    }
}

impl Serialize for ProfileId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProfileId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub building_id: String,
    pub date: NaiveDate,
    pub values: DayProfile,
}

/// n x 24 matrix of normalized daily profiles for one data set.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyProfileMatrix {
    pub kind: SeriesKind,
    pub semester: Semester,
    pub rows: Vec<ProfileRow>,
    pub norm_params: Vec<NormalizationParams>,
}

impl DailyProfileMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn points(&self) -> Vec<DayProfile> {
        self.rows.iter().map(|r| r.values).collect()
    }
}

/// One row per complete (building, day) of `semester` in normalized series
/// of `kind`. Days with any missing hour are left out.
pub fn build_profile_matrix(
    series: &[HourlySeries],
    table: &NormalizationTable,
    split: NaiveDate,
    semester: Semester,
    kind: SeriesKind,
) -> Result<DailyProfileMatrix> {
    let mut rows = Vec::new();
    for s in series.iter().filter(|s| s.kind == kind) {
        for day in 0..s.days() {
            let date = s.date(day);
            if Semester::of(date, split) != semester {
                continue;
            }
            if let Some(values) = s.complete_day(day) {
                debug_assert!(values.iter().all(|v| v.is_finite()));
                rows.push(ProfileRow { building_id: s.building_id.clone(), date, values });
            }
        }
    }
    if rows.is_empty() {
        return Err(ClusterError::EmptyMatrix { kind, semester });
    }
    rows.sort_by(|a, b| a.building_id.cmp(&b.building_id).then(a.date.cmp(&b.date)));
    let norm_params = table
        .params
        .iter()
        .filter(|p| p.scope.kind == kind && p.scope.semester.is_none_or(|s| s == semester))
        .cloned()
        .collect();
    Ok(DailyProfileMatrix { kind, semester, rows, norm_params })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl KMeansParams {
    pub fn new(k: usize, restarts: usize, seed: u64) -> Self {
        Self { k, restarts, seed, max_iter: 300 }
    }
}

/// Fitted KMeans model.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    /// Ordered by descending peak value.
    pub centroids: Vec<Vec<f64>>,
    /// Row index to centroid index.
    pub assignments: Vec<usize>,
    pub wss: f64,
    pub seed: u64,
    pub restarts: usize,
    /// Lloyd iterations of the winning restart.
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Within-cluster sum of squared errors of an explicit clustering.
pub fn wss_of<P: AsRef<[f64]>>(points: &[P], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points.iter().zip(assignments).map(|(p, &a)| squared_distance(p.as_ref(), &centroids[a])).sum()
}

/// WSS of `model` evaluated on `points`.
pub fn wss<P: AsRef<[f64]>>(model: &ClusterModel, points: &[P]) -> Result<f64> {
    if points.len() != model.assignments.len() {
        return Err(ClusterError::DimensionMismatch { expected: model.assignments.len(), found: points.len() });
    }
    let dim = model.centroids.first().map_or(0, Vec::len);
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(ClusterError::DimensionMismatch { expected: dim, found: p.as_ref().len() });
    }
    Ok(wss_of(points, &model.centroids, &model.assignments))
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (restart as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Farthest-point seeding from a random first pick.
fn maximin_seeds<P: AsRef<[f64]>>(points: &[P], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].as_ref().to_vec()];
    let mut min_dist: Vec<f64> = points.iter().map(|p| squared_distance(p.as_ref(), &centroids[0])).collect();
    while centroids.len() < k {
        let mut pick = None;
        for i in (0..n).filter(|&i| !chosen[i]) {
            if pick.is_none_or(|j: usize| min_dist[i] > min_dist[j]) {
                pick = Some(i);
            }
        }
        let pick = pick.expect("n >= k");
        chosen[pick] = true;
        let c = points[pick].as_ref().to_vec();
        for (d, p) in min_dist.iter_mut().zip(points) {
            *d = d.min(squared_distance(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// D²-weighted seeding: each further centroid is a point drawn with
/// probability proportional to its squared distance to the nearest chosen
/// centroid.
fn d2_seeds<P: AsRef<[f64]>>(points: &[P], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let first = rng.random_range(0..points.len());
    let mut centroids = vec![points[first].as_ref().to_vec()];
    let mut min_dist: Vec<f64> = points.iter().map(|p| squared_distance(p.as_ref(), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = min_dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = min_dist.iter().rposition(|&d| d > 0.0).expect("positive total");
            for (i, &d) in min_dist.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // all points coincide with a centroid; empty-cluster repair follows
            rng.random_range(0..points.len())
        };
        let c = points[pick].as_ref().to_vec();
        for (d, p) in min_dist.iter_mut().zip(points) {
            *d = d.min(squared_distance(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty<P: AsRef<[f64]>>(points: &[P], centroids: &mut [Vec<f64>], assignments: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if sizes[assignments[i]] < 2 {
                continue;
            }
            let d = squared_distance(p.as_ref(), &centroids[assignments[i]]);
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let (i, _) = far.expect("n >= k leaves a donor cluster");
        assignments[i] = empty;
        centroids[empty] = points[i].as_ref().to_vec();
    }
}

fn update_means<P: AsRef<[f64]>>(points: &[P], assignments: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = centroids[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p.as_ref()) {
            *s += x;
        }
    }
    for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            *c = s.into_iter().map(|x| x / n as f64).collect();
        }
    }
}

struct Run {
    centroids: Vec<Vec<f64>>,
    assignments: Vec<usize>,
    wss: f64,
    iterations: usize,
    converged: bool,
}

const WSS_TOL: f64 = 1e-10;

fn lloyd<P: AsRef<[f64]>>(points: &[P], k: usize, max_iter: usize, restart: usize, rng: &mut ChaCha8Rng) -> Run {
    // even restarts seed farthest-point, odd ones D²-weighted
    let mut centroids =
        if restart.is_multiple_of(2) { maximin_seeds(points, k, rng) } else { d2_seeds(points, k, rng) };
    let mut assignments: Vec<usize> = vec![usize::MAX; points.len()];
    let mut prev_wss = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p.as_ref(), &centroids).0).collect();
        repair_empty(points, &mut centroids, &mut next);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
        update_means(points, &assignments, &mut centroids);
        let wss = wss_of(points, &centroids, &assignments);
        debug_assert!(
            wss <= prev_wss + 1e-9 * prev_wss.abs().max(1.0),
            "Lloyd iteration increased WSS: {prev_wss} -> {wss}"
        );
        if prev_wss - wss < WSS_TOL {
            converged = true;
            prev_wss = wss;
            break;
        }
        prev_wss = wss;
    }
    let wss = wss_of(points, &centroids, &assignments);
    debug_assert!(wss <= prev_wss + 1e-9 * prev_wss.abs().max(1.0));
    Run { centroids, assignments, wss, iterations, converged }
}

/// Lloyd's algorithm, best of `params.restarts` runs by WSS.
///
/// Even restarts seed with farthest-point selection from a random first
/// point, odd restarts with D²-weighted sampling. Ties between restarts go
/// to the lowest restart index, so the result depends only on the inputs
/// and the seed.
pub fn kmeans<P: AsRef<[f64]> + Sync>(points: &[P], params: &KMeansParams) -> Result<ClusterModel> {
    if params.k == 0 || params.restarts == 0 {
        return Err(ClusterError::InvalidK);
    }
    if points.len() < params.k {
        return Err(ClusterError::TooFewRows { rows: points.len(), k: params.k });
    }
    let dim = points[0].as_ref().len();
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(ClusterError::DimensionMismatch { expected: dim, found: p.as_ref().len() });
    }

    let runs: Vec<Run> = (0..params.restarts)
        .into_par_iter()
        .map(|r| lloyd(points, params.k, params.max_iter, r, &mut restart_rng(params.seed, r)))
        .collect();
    let best =
        runs.into_iter().reduce(|best, run| if run.wss < best.wss { run } else { best }).expect("at least one restart");

    // relabel by descending peak, ties keep the original order
    let peak = |c: &Vec<f64>| c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut order: Vec<usize> = (0..params.k).collect();
    order.sort_by(|&a, &b| peak(&best.centroids[b]).total_cmp(&peak(&best.centroids[a])));
    let mut new_index = vec![0; params.k];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    Ok(ClusterModel {
        k: params.k,
        centroids: order.iter().map(|&o| best.centroids[o].clone()).collect(),
        assignments: best.assignments.iter().map(|&a| new_index[a]).collect(),
        wss: best.wss,
        seed: params.seed,
        restarts: params.restarts,
        iterations: best.iterations,
        converged: best.converged,
    })
}

/// WSS for every k in `k_range` (capped at the number of rows), together
/// with the fitted models.
pub fn wss_curve<P: AsRef<[f64]> + Sync>(
    points: &[P],
    k_range: std::ops::RangeInclusive<usize>,
    restarts: usize,
    seed: u64,
) -> Result<BTreeMap<usize, ClusterModel>> {
    let mut models = BTreeMap::new();
    for k in k_range.filter(|&k| k <= points.len()) {
        models.insert(k, kmeans(points, &KMeansParams::new(k, restarts, seed))?);
    }
    Ok(models)
}

/// Outcome of elbow selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowReport {
    pub k: usize,
    pub overridden: bool,
    pub curve: BTreeMap<usize, f64>,
    /// `WSS(k-1) - 2 WSS(k) + WSS(k+1)` for interior k.
    pub second_differences: BTreeMap<usize, f64>,
    /// k values whose WSS exceeds WSS(k-1).
    pub violations: Vec<usize>,
}

/// Picks k at the largest discrete second difference of the WSS curve;
/// ties go to the smallest k. `k_override` bypasses the rule.
pub fn select_k(curve: &BTreeMap<usize, f64>, k_override: Option<usize>) -> Result<ElbowReport> {
    let ks: Vec<usize> = curve.keys().copied().collect();
    for w in ks.windows(2) {
        if w[1] != w[0] + 1 {
            return Err(ClusterError::NonContiguousCurve(w[0]));
        }
    }
    let scale = curve.values().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let violations = ks.windows(2).filter(|w| curve[&w[1]] > curve[&w[0]] + 1e-12 * scale).map(|w| w[1]).collect();
    let second_differences: BTreeMap<usize, f64> =
        ks.windows(3).map(|w| (w[1], curve[&w[0]] - 2.0 * curve[&w[1]] + curve[&w[2]])).collect();

    let k = match k_override {
        Some(k) => {
            if k == 0 {
                return Err(ClusterError::InvalidK);
            }
            k
        }
        None => {
            if curve.len() < 3 {
                return Err(ClusterError::TooFewCurvePoints(curve.len()));
            }
            let mut best: Option<(usize, f64)> = None;
            for (&k, &d2) in &second_differences {
                if best.is_none_or(|(_, b)| d2 > b + 1e-9 * scale) {
                    best = Some((k, d2));
                }
            }
            best.expect("interior point exists").0
        }
    };
    Ok(ElbowReport { k, overridden: k_override.is_some(), curve: curve.clone(), second_differences, violations })
}

/// Per-building, per-day profile labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterCalendar {
    pub split: Option<NaiveDate>,
    pub entries: BTreeMap<(String, NaiveDate), ProfileId>,
}

impl ClusterCalendar {
    pub fn merge(&mut self, other: ClusterCalendar) {
        self.split = self.split.or(other.split);
        self.entries.extend(other.entries);
    }

    pub fn get(&self, building_id: &str, date: NaiveDate) -> Option<ProfileId> {
        self.entries.get(&(building_id.to_string(), date)).copied()
    }

    pub fn buildings(&self) -> Vec<String> {
        let mut b: Vec<String> = self.entries.keys().map(|(b, _)| b.clone()).collect();
        b.dedup();
        b
    }
}

/// Labels every matrix row with its nearest centroid.
pub fn assign_calendar(model: &ClusterModel, matrix: &DailyProfileMatrix, split: NaiveDate) -> ClusterCalendar {
    let entries = matrix
        .rows
        .iter()
        .map(|row| {
            let (idx, _) = nearest(&row.values, &model.centroids);
            let id = ProfileId { kind: matrix.kind, semester: matrix.semester, label: idx as u32 + 1 };
            ((row.building_id.clone(), row.date), id)
        })
        .collect();
    ClusterCalendar { split: Some(split), entries }
}

/// Mode profile per (building, semester, day group).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScheduleTable {
    pub rows: BTreeMap<(String, Semester, DayGroup), ProfileId>,
    /// Groups without any calendar entry.
    pub warnings: Vec<String>,
}

impl ScheduleTable {
    pub fn get(&self, building_id: &str, semester: Semester, group: DayGroup) -> Option<ProfileId> {
        self.rows.get(&(building_id.to_string(), semester, group)).copied()
    }

    pub fn for_date(&self, building_id: &str, date: NaiveDate, split: NaiveDate) -> Option<ProfileId> {
        self.get(building_id, Semester::of(date, split), DayGroup::of(date))
    }
}

pub fn mode_schedule_table(calendar: &ClusterCalendar) -> ScheduleTable {
    let split = calendar.split.unwrap_or(NaiveDate::MIN);
    let mut counts: BTreeMap<(String, Semester, DayGroup), BTreeMap<ProfileId, usize>> = BTreeMap::new();
    for ((building, date), id) in &calendar.entries {
        *counts
            .entry((building.clone(), Semester::of(*date, split), DayGroup::of(*date)))
            .or_default()
            .entry(*id)
            .or_default() += 1;
    }
    let mut table = ScheduleTable::default();
    for building in calendar.buildings() {
        for semester in Semester::ALL {
            for group in DayGroup::ALL {
                let key = (building.clone(), semester, group);
                match counts.get(&key) {
                    Some(labels) => {
                        // BTreeMap iterates labels ascending: strict > keeps the lowest on ties
                        let mut best: Option<(ProfileId, usize)> = None;
                        for (&id, &n) in labels {
                            if best.is_none_or(|(_, b)| n > b) {
                                best = Some((id, n));
                            }
                        }
                        table.rows.insert(key, best.expect("non-empty").0);
                    }
                    None => table.warnings.push(format!("no days for {building} {semester} {group}; row omitted")),
                }
            }
        }
    }
    table
}
