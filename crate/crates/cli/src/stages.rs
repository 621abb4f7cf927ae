//! On-disk stage runner. Each stage reads its upstream artifacts, checks
//! them against the manifest, runs, writes its own artifacts and records
//! their hashes.

use std::path::{Path, PathBuf};

use log::{info, warn};
use setback::ingest::{parse_connection_log, parse_meter_log, write_connection_csv, write_meter_csv};
use setback::ingest::{IngestConfig, MeterSchema, WifiSchema};
use setback::preprocess::NormalizationTable;
use setback::{HourlySeries, SeriesKind};

use crate::artifacts::{self as art, Layout};
use crate::config::RunConfig;
use crate::error::{CliError, Result, Stage};
use crate::manifest::Manifest;
use crate::pipeline::{self, centroids_of, ClusterDataset, IngestSummary, Ingested, SavingsInputs};
use crate::report::{emit_report, ReportInputs};

/// Runs `stages` in order against the output directory of `config`.
pub fn run_stages(config: &RunConfig, stages: &[Stage]) -> Result<()> {
    config.validate()?;
    let layout = Layout::new(&config.paths.out);
    let mut manifest = Manifest::load_or_new(&layout, config)?;
    for &stage in stages {
        info!("stage {stage}: start");
        run_stage(config, &layout, &mut manifest, stage)?;
        manifest.save(&layout)?;
        info!("stage {stage}: done");
    }
    Ok(())
}

/// Stages from `from` through `to`, inclusive.
pub fn stage_range(from: Stage, to: Stage) -> Vec<Stage> {
    Stage::ALL.into_iter().filter(|s| *s >= from && *s <= to).collect()
}

fn run_stage(config: &RunConfig, layout: &Layout, manifest: &mut Manifest, stage: Stage) -> Result<()> {
    match stage {
        Stage::Ingest => ingest(config, layout, manifest),
        Stage::Preprocess => preprocess(config, layout, manifest),
        Stage::Cluster => cluster(config, layout, manifest),
        Stage::Schedule => schedule(config, layout, manifest),
        Stage::Savings => savings(config, layout, manifest),
        Stage::Sweep => sweep(config, layout, manifest),
        Stage::Report => report(config, layout, manifest),
    }
}

fn paths(v: &[PathBuf]) -> Vec<&Path> {
    v.iter().map(PathBuf::as_path).collect()
}

fn write_with<F>(stage: Stage, path: &Path, f: F) -> Result<()>
where
    F: FnOnce(std::io::BufWriter<std::fs::File>) -> csv::Result<()>,
{
    let w = art::create(stage, path)?;
    f(w).map_err(|e| CliError::stage(stage, format!("{}: {e}", path.display())))
}

fn ingest(config: &RunConfig, layout: &Layout, manifest: &mut Manifest) -> Result<()> {
    let (wifi, meter) = config.inputs()?;
    let ingested = pipeline::ingest(config)?;
    let s = &ingested.summary;
    info!(
        "ingest: {} events ({} malformed, {} external dropped), {} readings ({} malformed, {} duplicates)",
        ingested.events.len(),
        s.wifi.rejected.len(),
        s.external_events_dropped,
        ingested.readings.len(),
        s.meter.rejected.len(),
        s.duplicate_readings_removed
    );
    write_with(Stage::Ingest, &layout.events(), |w| write_connection_csv(w, &ingested.events))?;
    write_with(Stage::Ingest, &layout.readings(), |w| write_meter_csv(w, &ingested.readings))?;
    art::write_json(Stage::Ingest, &layout.ingest_summary(), s)?;
    let outputs = [layout.events(), layout.readings(), layout.ingest_summary()];
    manifest.record(layout, Stage::Ingest, &[&wifi, &meter], &paths(&outputs))
}

/// Canonical ingest outputs, already filtered and deduplicated.
fn read_ingested(layout: &Layout) -> Result<Ingested> {
    let stage = Stage::Preprocess;
    let config = IngestConfig::default();
    let bad = |e: setback::ingest::IngestError| CliError::stage(stage, e);
    let events = parse_connection_log(&layout.events(), &WifiSchema::default(), &config).map_err(bad)?;
    let readings = parse_meter_log(&layout.readings(), &MeterSchema::default(), &config).map_err(bad)?;
    let summary: IngestSummary = art::read_json(stage, &layout.ingest_summary())?;
    Ok(Ingested { events: events.records, readings: readings.records, summary })
}

fn preprocess(config: &RunConfig, layout: &Layout, manifest: &mut Manifest) -> Result<()> {
    let inputs = [layout.events(), layout.readings(), layout.ingest_summary()];
    manifest.check_upstream(layout, Stage::Preprocess, Stage::Ingest, &paths(&inputs))?;
    let ingested = read_ingested(layout)?;
    let pre = pipeline::preprocess(config, &ingested)?;
    for w in &pre.summary.warnings {
        warn!("preprocess: {w}");
    }
    let raw: Vec<HourlySeries> = pre.occupancy.iter().chain(&pre.demand).cloned().collect();
    art::write_series(&layout.series(), &raw, &pre.normalized)?;
    art::write_json(Stage::Preprocess, &layout.normalization(), &pre.norm)?;
    art::write_json(Stage::Preprocess, &layout.preprocess_summary(), &pre.summary)?;
    let outputs = [layout.series(), layout.normalization(), layout.preprocess_summary()];
    manifest.record(layout, Stage::Preprocess, &paths(&inputs), &paths(&outputs))
}

fn read_preprocessed(
    layout: &Layout,
    stage: Stage,
) -> Result<(Vec<HourlySeries>, Vec<HourlySeries>, NormalizationTable)> {
    let (raw, normalized) = art::read_series(stage, &layout.series())?;
    let norm: NormalizationTable = art::read_json(stage, &layout.normalization())?;
    Ok((raw, normalized, norm))
}

fn cluster(config: &RunConfig, layout: &Layout, manifest: &mut Manifest) -> Result<()> {
    let inputs = [layout.series(), layout.normalization()];
    manifest.check_upstream(layout, Stage::Cluster, Stage::Preprocess, &paths(&inputs))?;
    let (_, normalized, norm) = read_preprocessed(layout, Stage::Cluster)?;
    let clustered = pipeline::cluster(config, &normalized, &norm)?;
    for w in
        clustered.warnings.iter().chain(&clustered.occupancy_table.warnings).chain(&clustered.demand_table.warnings)
    {
        warn!("cluster: {w}");
    }
    for d in &clustered.datasets {
        info!("cluster: {} rows={} k={} wss={:.4}", d.name(), d.rows, d.k, d.wss);
    }
    art::write_json(Stage::Cluster, &layout.clusters(), &clustered.datasets)?;
    art::write_calendar(&layout.calendar(), &[&clustered.occupancy_calendar, &clustered.demand_calendar])?;
    art::write_schedule_table(&layout.schedule_table(), &[&clustered.occupancy_table, &clustered.demand_table])?;
    art::write_wss_curve(&layout.wss_curve(), &clustered.datasets)?;
    let outputs = [layout.clusters(), layout.calendar(), layout.schedule_table(), layout.wss_curve()];
    manifest.record(layout, Stage::Cluster, &paths(&inputs), &paths(&outputs))
}

fn read_datasets(layout: &Layout, stage: Stage) -> Result<Vec<ClusterDataset>> {
    art::read_json(stage, &layout.clusters())
}

fn schedule(config: &RunConfig, layout: &Layout, manifest: &mut Manifest) -> Result<()> {
    let inputs = [layout.clusters(), layout.schedule_table()];
    manifest.check_upstream(layout, Stage::Schedule, Stage::Cluster, &paths(&inputs))?;
    let datasets = read_datasets(layout, Stage::Schedule)?;
    let (occ_table, dem_table) = art::read_schedule_table(Stage::Schedule, &layout.schedule_table())?;
    let occ = centroids_of(&datasets, SeriesKind::OccupantCount);
    let dem = centroids_of(&datasets, SeriesKind::DemandKw);
    let signals = pipeline::schedule(config, &occ, &dem, &occ_table, &dem_table)?;
    for (id, reason) in &signals.demand_failures {
        warn!("schedule: demand profile {id}: {reason}");
    }
    art::write_occupancy_signals(&layout.occupancy_signals(), &signals.occupancy)?;
    art::write_demand_signals(&layout.demand_signals(), &signals.demand, &signals.demand_failures)?;
    art::write_miss_waste(&layout.miss_waste(), &signals.miss_waste)?;
    let outputs = [layout.occupancy_signals(), layout.demand_signals(), layout.miss_waste()];
    manifest.record(layout, Stage::Schedule, &paths(&inputs), &paths(&outputs))
}

/// Upstream artifacts shared by the savings and sweep stages.
struct SavingsData {
    demand: Vec<HourlySeries>,
    norm: NormalizationTable,
    demand_calendar: setback::ClusterCalendar,
    occupancy_table: setback::ScheduleTable,
    demand_centroids: std::collections::BTreeMap<setback::ProfileId, setback::DayProfile>,
    demand_signals: art::DemandSignalTable,
}

impl SavingsData {
    fn inputs(&self) -> SavingsInputs<'_> {
        SavingsInputs {
            demand_calendar: &self.demand_calendar,
            demand_centroids: &self.demand_centroids,
            demand_signals: &self.demand_signals.0,
            norm: &self.norm,
            demand: &self.demand,
        }
    }
}

fn savings_upstream(layout: &Layout) -> [(Stage, Vec<PathBuf>); 3] {
    [
        (Stage::Preprocess, vec![layout.series(), layout.normalization()]),
        (Stage::Cluster, vec![layout.clusters(), layout.calendar(), layout.schedule_table()]),
        (Stage::Schedule, vec![layout.occupancy_signals(), layout.demand_signals()]),
    ]
}

fn read_savings_data(
    config: &RunConfig,
    layout: &Layout,
    manifest: &Manifest,
    stage: Stage,
) -> Result<(SavingsData, Vec<PathBuf>)> {
    let mut inputs = Vec::new();
    for (upstream, files) in savings_upstream(layout) {
        manifest.check_upstream(layout, stage, upstream, &paths(&files))?;
        inputs.extend(files);
    }
    let (raw, _, norm) = read_preprocessed(layout, stage)?;
    let demand = raw.into_iter().filter(|s| s.kind == SeriesKind::DemandKw).collect();
    let datasets = read_datasets(layout, stage)?;
    let (_, demand_calendar) = art::read_calendar(stage, &layout.calendar(), config.split)?;
    let (occupancy_table, _) = art::read_schedule_table(stage, &layout.schedule_table())?;
    let demand_signals = art::read_demand_signals(stage, &layout.demand_signals())?;
    Ok((
        SavingsData {
            demand,
            norm,
            demand_calendar,
            occupancy_table,
            demand_centroids: centroids_of(&datasets, SeriesKind::DemandKw),
            demand_signals,
        },
        inputs,
    ))
}

fn savings(config: &RunConfig, layout: &Layout, manifest: &mut Manifest) -> Result<()> {
    let (data, inputs) = read_savings_data(config, layout, manifest, Stage::Savings)?;
    let occupancy = art::read_occupancy_signals(Stage::Savings, &layout.occupancy_signals())?;
    let ledgers = pipeline::savings(config, &data.inputs(), &data.occupancy_table, &occupancy)?;
    let mut outputs = Vec::new();
    let mut skipped = Vec::new();
    let mut deltas = Vec::new();
    for (delta, ledger) in &ledgers {
        let path = layout.ledger(*delta);
        art::write_ledger(&path, ledger)?;
        outputs.push(path);
        let run = format!("delta={}", art::format_delta(*delta));
        skipped.extend(ledger.skipped.iter().map(|s| (run.clone(), s)));
        let summary = art::delta_summary(*delta, config.savings.tau, ledger);
        info!(
            "savings: delta={} total={:.0} kWh over {} days, {} skipped",
            art::format_delta(*delta),
            summary.total_kwh,
            summary.days,
            summary.skipped_days
        );
        deltas.push(summary);
    }
    if !skipped.is_empty() {
        warn!("savings: {} building-days skipped, see {}", skipped.len(), layout.relative(&layout.skipped()));
    }
    art::write_skipped(&layout.skipped(), Stage::Savings, &skipped)?;
    let summary = art::SavingsSummary { mode: config.savings.mode, deltas };
    art::write_json(Stage::Savings, &layout.savings_summary(), &summary)?;
    outputs.extend([layout.skipped(), layout.savings_summary()]);
    manifest.record(layout, Stage::Savings, &paths(&inputs), &paths(&outputs))
}

fn sweep(config: &RunConfig, layout: &Layout, manifest: &mut Manifest) -> Result<()> {
    let (data, inputs) = read_savings_data(config, layout, manifest, Stage::Sweep)?;
    let result = pipeline::sweep(config, &data.inputs())?;
    if !result.skipped.is_empty() {
        warn!("sweep: {} building-day-cells skipped for overlapping windows", result.skipped.len());
    }
    art::write_sweep(&layout.sweep(), &result)?;
    let summary = art::sweep_summary(&result, &config.savings.sweep_morning, &config.savings.sweep_evening);
    art::write_json(Stage::Sweep, &layout.sweep_summary(), &summary)?;
    let outputs = [layout.sweep(), layout.sweep_summary()];
    manifest.record(layout, Stage::Sweep, &paths(&inputs), &paths(&outputs))
}

fn report(config: &RunConfig, layout: &Layout, manifest: &mut Manifest) -> Result<()> {
    let upstream = [
        (Stage::Cluster, vec![layout.clusters(), layout.schedule_table()]),
        (Stage::Schedule, vec![layout.occupancy_signals(), layout.demand_signals(), layout.miss_waste()]),
        (Stage::Savings, vec![layout.savings_summary()]),
        (Stage::Sweep, vec![layout.sweep_summary()]),
    ];
    let mut inputs = Vec::new();
    for (stage, files) in upstream {
        manifest.check_upstream(layout, Stage::Report, stage, &paths(&files))?;
        inputs.extend(files);
    }
    let s = Stage::Report;
    let datasets = read_datasets(layout, s)?;
    let (occupancy_table, demand_table) = art::read_schedule_table(s, &layout.schedule_table())?;
    let occupancy_signals = art::read_occupancy_signals(s, &layout.occupancy_signals())?;
    let (demand_signals, demand_failures) = art::read_demand_signals(s, &layout.demand_signals())?;
    let miss_waste = art::read_miss_waste(s, &layout.miss_waste())?;
    let savings: art::SavingsSummary = art::read_json(s, &layout.savings_summary())?;
    let sweep: art::SweepSummary = art::read_json(s, &layout.sweep_summary())?;
    let report_inputs = ReportInputs {
        datasets: &datasets,
        occupancy_table: &occupancy_table,
        demand_table: &demand_table,
        occupancy_signals: &occupancy_signals,
        demand_signals: &demand_signals,
        demand_failures: &demand_failures,
        miss_waste: &miss_waste,
        savings: &savings,
        sweep: &sweep,
    };
    let outputs = emit_report(&layout.report_dir(), &report_inputs, &config.report.formats)?;
    for p in &outputs {
        info!("report: wrote {}", layout.relative(p));
    }
    manifest.record(layout, Stage::Report, &paths(&inputs), &paths(&outputs))
}
