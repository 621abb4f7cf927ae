//! In-memory stage functions. The on-disk runner in [`crate::stages`]
//! wraps each of them with artifact reading and writing.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use setback::cluster::{
    assign_calendar, build_profile_matrix, kmeans, mode_schedule_table, select_k, wss_curve, ClusterError, ElbowReport,
    KMeansParams,
};
use setback::ingest::{dedup_readings, parse_connection_log, parse_meter_log, ParseReport, WapClassifier};
use setback::preprocess::{
    classify_devices, clean_demand, normalize_series, occupancy_series, resample_meter, DeviceClass,
    NormalizationTable, Quality,
};
use setback::savings::{aggregate_savings, sensitivity_sweep, SavingsContext, SavingsLedger, SweepResult};
use setback::schedule::{demand_signals, miss_waste, occupancy_signals, ScheduleParams};
use setback::time::{DayGroup, Semester};
use setback::{
    ClusterCalendar, ConnectionEvent, DayProfile, DemandSignals, HourlySeries, MeterReading, OccupancySignals,
    ProfileId, ScheduleTable, SeriesKind, HOURS,
};

use crate::config::RunConfig;
use crate::error::{CliError, Result, Stage};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub wifi: ParseReport,
    pub meter: ParseReport,
    pub external_events_dropped: usize,
    pub duplicate_readings_removed: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    /// Events on internal WAPs only.
    pub events: Vec<ConnectionEvent>,
    /// Sorted by building and timestamp, duplicates resolved.
    pub readings: Vec<MeterReading>,
    pub summary: IngestSummary,
}

pub fn ingest(config: &RunConfig) -> Result<Ingested> {
    let (wifi, meter) = config.inputs()?;
    let ic = &config.ingest;
    let data = |e: setback::ingest::IngestError| CliError::Data(e.to_string());
    let classifier = WapClassifier::new(&ic.config.wap_pattern).map_err(|e| CliError::Config(e.to_string()))?;
    let events = parse_connection_log(&wifi, &ic.wifi_columns, &ic.config).map_err(data)?;
    let readings = parse_meter_log(&meter, &ic.meter_columns, &ic.config).map_err(data)?;
    filter_and_dedup(events, readings, &classifier, config)
}

pub fn filter_and_dedup(
    events: setback::ingest::Parsed<ConnectionEvent>,
    readings: setback::ingest::Parsed<MeterReading>,
    classifier: &WapClassifier,
    config: &RunConfig,
) -> Result<Ingested> {
    let (kept, dropped) = classifier.filter_internal(events.records);
    let n_readings = readings.records.len();
    let deduped = dedup_readings(readings.records, config.ingest.config.duplicate_policy)
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(Ingested {
        summary: IngestSummary {
            wifi: events.report,
            meter: readings.report,
            external_events_dropped: dropped,
            duplicate_readings_removed: n_readings - deduped.len(),
        },
        events: kept,
        readings: deduped,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub short_stay: usize,
    pub regular: usize,
    pub stationary: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningSummary {
    pub iqr_bound: Option<f64>,
    pub iqr_nullified: usize,
    pub flatline_nullified: usize,
    pub interpolated: usize,
    /// Hours still missing after interpolation.
    pub remaining_nullified: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    /// Device-days per class, per building.
    pub device_days: BTreeMap<String, ClassCounts>,
    pub cleaning: BTreeMap<String, CleaningSummary>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Preprocessed {
    /// Hourly regular-device counts.
    pub occupancy: Vec<HourlySeries>,
    /// Cleaned hourly demand in kW.
    pub demand: Vec<HourlySeries>,
    /// Normalized copies of both, occupancy first.
    pub normalized: Vec<HourlySeries>,
    pub norm: NormalizationTable,
    pub summary: PreprocessSummary,
}

/// Analysis period: configured bounds, else the span of the data.
pub fn analysis_period(config: &RunConfig, ingested: &Ingested) -> Result<(NaiveDate, NaiveDate)> {
    let dates =
        ingested.events.iter().map(|e| e.timestamp.date()).chain(ingested.readings.iter().map(|r| r.timestamp.date()));
    let (lo, hi) = dates.fold((None, None), |(lo, hi): (Option<NaiveDate>, Option<NaiveDate>), d| {
        (Some(lo.map_or(d, |l| l.min(d))), Some(hi.map_or(d, |h| h.max(d))))
    });
    let start = config.preprocess.start.or(lo);
    let end = config.preprocess.end.or(hi);
    match (start, end) {
        (Some(s), Some(e)) => {
            config.check_period(s, e)?;
            Ok((s, e))
        }
        _ => Err(CliError::Data("no events or readings to analyze".into())),
    }
}

pub fn preprocess(config: &RunConfig, ingested: &Ingested) -> Result<Preprocessed> {
    let (start, end) = analysis_period(config, ingested)?;
    let range = Some((start, end));
    let pc = &config.preprocess;
    let in_range = |d: NaiveDate| d >= start && d <= end;
    let events: Vec<ConnectionEvent> =
        ingested.events.iter().filter(|e| in_range(e.timestamp.date())).cloned().collect();
    let readings: Vec<MeterReading> =
        ingested.readings.iter().filter(|r| in_range(r.timestamp.date())).cloned().collect();

    let stats = classify_devices(&events, &pc.thresholds());
    let mut summary = PreprocessSummary { start: Some(start), end: Some(end), ..Default::default() };
    for s in &stats {
        let c = summary.device_days.entry(s.building_id.to_string()).or_default();
        match s.class {
            DeviceClass::ShortStay => c.short_stay += 1,
            DeviceClass::Regular => c.regular += 1,
            DeviceClass::Stationary => c.stationary += 1,
        }
    }
    let occupancy = occupancy_series(&stats, &events, range);

    let mut demand = Vec::new();
    for raw in resample_meter(&readings, range) {
        let report = clean_demand(&raw, &pc.cleaning).map_err(|e| CliError::stage(Stage::Preprocess, e))?;
        summary.warnings.extend(report.series.warnings.iter().map(|w| format!("{}: {w}", raw.building_id)));
        summary.cleaning.insert(
            raw.building_id.clone(),
            CleaningSummary {
                iqr_bound: report.iqr_bound,
                iqr_nullified: report.iqr_nullified,
                flatline_nullified: report.flatline_nullified,
                interpolated: report.interpolated,
                remaining_nullified: report.series.count_quality(Quality::Nullified),
            },
        );
        demand.push(report.series);
    }
    if occupancy.is_empty() && demand.is_empty() {
        return Err(CliError::Data(format!("no data inside {start}..{end}")));
    }
    let all: Vec<HourlySeries> = occupancy.iter().chain(&demand).cloned().collect();
    let (normalized, norm) = normalize_series(&all, config.split, pc.norm_scope);
    Ok(Preprocessed { occupancy, demand, normalized, norm, summary })
}

/// Clustering result for one (kind, semester) data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDataset {
    pub kind: SeriesKind,
    pub semester: Semester,
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub rows: usize,
    /// Label `i + 1` belongs to `centroids[i]`.
    pub centroids: Vec<Vec<f64>>,
    pub cluster_sizes: Vec<usize>,
    pub wss: f64,
    pub wss_curve: BTreeMap<usize, f64>,
    pub elbow: ElbowReport,
}

impl ClusterDataset {
    pub fn name(&self) -> String {
        format!("{}{}", self.kind.code(), self.semester.code())
    }

    pub fn profile(&self, index: usize) -> ProfileId {
        ProfileId { kind: self.kind, semester: self.semester, label: index as u32 + 1 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Clustered {
    pub datasets: Vec<ClusterDataset>,
    pub occupancy_calendar: ClusterCalendar,
    pub demand_calendar: ClusterCalendar,
    pub occupancy_table: ScheduleTable,
    pub demand_table: ScheduleTable,
    pub warnings: Vec<String>,
}

impl Clustered {
    pub fn centroids(&self, kind: SeriesKind) -> BTreeMap<ProfileId, DayProfile> {
        centroids_of(&self.datasets, kind)
    }
}

/// Centroids of every data set of one kind, keyed by profile.
pub fn centroids_of(datasets: &[ClusterDataset], kind: SeriesKind) -> BTreeMap<ProfileId, DayProfile> {
    let mut out = BTreeMap::new();
    for ds in datasets.iter().filter(|d| d.kind == kind) {
        for (i, c) in ds.centroids.iter().enumerate() {
            let mut p = [0.0; HOURS];
            p.copy_from_slice(c);
            out.insert(ds.profile(i), p);
        }
    }
    out
}

pub fn cluster(config: &RunConfig, normalized: &[HourlySeries], norm: &NormalizationTable) -> Result<Clustered> {
    let cc = &config.cluster;
    let seed = config.cluster_seed();
    let mut out = Clustered {
        occupancy_calendar: ClusterCalendar { split: Some(config.split), ..Default::default() },
        demand_calendar: ClusterCalendar { split: Some(config.split), ..Default::default() },
        ..Default::default()
    };
    let fail = |e: ClusterError| CliError::stage(Stage::Cluster, e);
    for kind in [SeriesKind::OccupantCount, SeriesKind::DemandKw] {
        for semester in Semester::ALL {
            let matrix = match build_profile_matrix(normalized, norm, config.split, semester, kind) {
                Ok(m) => m,
                Err(e @ ClusterError::EmptyMatrix { .. }) => {
                    out.warnings.push(e.to_string());
                    continue;
                }
                Err(e) => return Err(fail(e)),
            };
            let points = matrix.points();
            let k_max = cc.k_max.min(points.len());
            let models = wss_curve(&points, cc.k_min..=k_max, cc.restarts, seed).map_err(fail)?;
            let curve: BTreeMap<usize, f64> = models.iter().map(|(&k, m)| (k, m.wss)).collect();
            let elbow = select_k(&curve, cc.k_override).map_err(|e| {
                CliError::Data(format!("{}{}: {e}; set cluster.k_override", kind.code(), semester.code()))
            })?;
            if elbow.k > points.len() {
                return Err(fail(ClusterError::TooFewRows { rows: points.len(), k: elbow.k }));
            }
            let model = match models.get(&elbow.k) {
                Some(m) => m.clone(),
                None => kmeans(&points, &KMeansParams::new(elbow.k, cc.restarts, seed)).map_err(fail)?,
            };
            let calendar = assign_calendar(&model, &matrix, config.split);
            match kind {
                SeriesKind::OccupantCount => out.occupancy_calendar.merge(calendar),
                SeriesKind::DemandKw => out.demand_calendar.merge(calendar),
            }
            out.datasets.push(ClusterDataset {
                kind,
                semester,
                k: model.k,
                seed,
                restarts: cc.restarts,
                rows: points.len(),
                cluster_sizes: model.cluster_sizes(),
                centroids: model.centroids,
                wss: model.wss,
                wss_curve: curve,
                elbow,
            });
        }
    }
    out.occupancy_table = mode_schedule_table(&out.occupancy_calendar);
    out.demand_table = mode_schedule_table(&out.demand_calendar);
    Ok(out)
}

/// Occupancy signals of every profile at one δ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSignals {
    pub delta: f64,
    pub tau: u8,
    pub profiles: BTreeMap<ProfileId, OccupancySignals>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissWasteRow {
    pub building_id: String,
    pub semester: Semester,
    pub day_group: DayGroup,
    pub delta: f64,
    pub label_occupancy: ProfileId,
    pub label_demand: ProfileId,
    pub waste_h: u32,
    pub miss_h: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Signals {
    pub occupancy: Vec<DeltaSignals>,
    pub demand: BTreeMap<ProfileId, DemandSignals>,
    /// Demand profiles without a detectable ramp, with the reason.
    pub demand_failures: BTreeMap<ProfileId, String>,
    pub miss_waste: Vec<MissWasteRow>,
}

pub fn schedule_params(config: &RunConfig) -> Result<Vec<ScheduleParams>> {
    config
        .savings
        .delta
        .iter()
        .map(|&d| {
            ScheduleParams::new(d, config.savings.tau, config.schedule.tau_sign_evening)
                .map_err(|e| CliError::Config(e.to_string()))
        })
        .collect()
}

pub fn schedule(
    config: &RunConfig,
    occupancy_centroids: &BTreeMap<ProfileId, DayProfile>,
    demand_centroids: &BTreeMap<ProfileId, DayProfile>,
    occupancy_table: &ScheduleTable,
    demand_table: &ScheduleTable,
) -> Result<Signals> {
    let mut out = Signals::default();
    for (id, c) in demand_centroids {
        match demand_signals(c) {
            Ok(s) => {
                out.demand.insert(*id, s);
            }
            Err(e) => {
                out.demand_failures.insert(*id, e.to_string());
            }
        }
    }
    for params in schedule_params(config)? {
        let profiles: BTreeMap<ProfileId, OccupancySignals> =
            occupancy_centroids.iter().map(|(id, c)| (*id, occupancy_signals(c, &params))).collect();
        for ((building, semester, group), occ_id) in &occupancy_table.rows {
            let Some(dem_id) = demand_table.get(building, *semester, *group) else {
                continue;
            };
            let (Some(occ), Some(dem)) = (profiles.get(occ_id), out.demand.get(&dem_id)) else {
                continue;
            };
            let mw = miss_waste(occ, dem);
            out.miss_waste.push(MissWasteRow {
                building_id: building.clone(),
                semester: *semester,
                day_group: *group,
                delta: params.delta,
                label_occupancy: *occ_id,
                label_demand: dem_id,
                waste_h: mw.waste_h,
                miss_h: mw.miss_h,
            });
        }
        out.occupancy.push(DeltaSignals { delta: params.delta, tau: params.tau, profiles });
    }
    Ok(out)
}

/// Everything the savings and sweep stages need.
#[derive(Debug, Clone, Copy)]
pub struct SavingsInputs<'a> {
    pub demand_calendar: &'a ClusterCalendar,
    pub demand_centroids: &'a BTreeMap<ProfileId, DayProfile>,
    pub demand_signals: &'a BTreeMap<ProfileId, DemandSignals>,
    pub norm: &'a NormalizationTable,
    pub demand: &'a [HourlySeries],
}

impl<'a> SavingsInputs<'a> {
    fn context(&self, split: NaiveDate) -> SavingsContext<'a> {
        SavingsContext {
            split,
            demand_calendar: self.demand_calendar,
            demand_centroids: self.demand_centroids,
            demand_signals: self.demand_signals,
            norm: self.norm,
            actual: Some(self.demand),
        }
    }
}

pub fn savings(
    config: &RunConfig,
    inputs: &SavingsInputs<'_>,
    occupancy_table: &ScheduleTable,
    occupancy: &[DeltaSignals],
) -> Result<Vec<(f64, SavingsLedger)>> {
    let ctx = inputs.context(config.split);
    occupancy
        .iter()
        .map(|d| {
            aggregate_savings(&ctx, occupancy_table, &d.profiles, config.savings.mode)
                .map(|ledger| (d.delta, ledger))
                .map_err(|e| CliError::stage(Stage::Savings, e))
        })
        .collect()
}

pub fn sweep(config: &RunConfig, inputs: &SavingsInputs<'_>) -> Result<SweepResult> {
    sensitivity_sweep(
        &inputs.context(config.split),
        &config.savings.sweep_morning,
        &config.savings.sweep_evening,
        config.savings.mode,
    )
    .map_err(|e| CliError::stage(Stage::Sweep, e))
}

/// Every in-memory result of a full run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub preprocessed: Preprocessed,
    pub clustered: Clustered,
    pub signals: Signals,
    pub ledgers: Vec<(f64, SavingsLedger)>,
    pub sweep: SweepResult,
}

/// Runs preprocess through sweep without touching the disk.
pub fn run_in_memory(config: &RunConfig, ingested: &Ingested) -> Result<RunOutput> {
    config.validate()?;
    let preprocessed = preprocess(config, ingested)?;
    let clustered = cluster(config, &preprocessed.normalized, &preprocessed.norm)?;
    let occ = clustered.centroids(SeriesKind::OccupantCount);
    let dem = clustered.centroids(SeriesKind::DemandKw);
    let signals = schedule(config, &occ, &dem, &clustered.occupancy_table, &clustered.demand_table)?;
    let inputs = SavingsInputs {
        demand_calendar: &clustered.demand_calendar,
        demand_centroids: &dem,
        demand_signals: &signals.demand,
        norm: &preprocessed.norm,
        demand: &preprocessed.demand,
    };
    let ledgers = savings(config, &inputs, &clustered.occupancy_table, &signals.occupancy)?;
    let sweep = sweep(config, &inputs)?;
    Ok(RunOutput { preprocessed, clustered, signals, ledgers, sweep })
}
