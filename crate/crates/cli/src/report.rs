//! Report tables and charts rendered from stage artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use setback::time::{format_hour, DayGroup, Semester};
use setback::{DemandSignals, ProfileId, ScheduleTable, SeriesKind};

use crate::artifacts::{format_delta, DeltaSummary, SavingsSummary, SweepSummary};
use crate::error::{CliError, Result, Stage};
use crate::pipeline::{ClusterDataset, DeltaSignals, MissWasteRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Table,
    #[value(alias = "svg-lines")]
    #[serde(alias = "svg-lines")]
    Svg,
}

impl std::str::FromStr for ReportFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "table" => Ok(ReportFormat::Table),
            "svg" | "svg-lines" => Ok(ReportFormat::Svg),
            other => Err(CliError::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// A titled grid of strings with optional footer rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub footer: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, title: &str, headers: &[&str]) -> Self {
        Self {
            name: name.into(),
            title: title.into(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn to_text(&self) -> String {
        let all: Vec<&Vec<String>> = std::iter::once(&self.headers).chain(&self.rows).chain(&self.footer).collect();
        let cols = self.headers.len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| all.iter().map(|r| r.get(c).map_or(0, |s| s.chars().count())).max().unwrap_or(0))
            .collect();
        let line = |row: &Vec<String>| {
            let cells: Vec<String> = (0..cols)
                .map(|c| {
                    let s = row.get(c).map_or("", String::as_str);
                    if c == 0 {
                        format!("{s:<w$}", w = widths[c])
                    } else {
                        format!("{s:>w$}", w = widths[c])
                    }
                })
                .collect();
            cells.join("  ").trim_end().to_string()
        };
        let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1));
        let mut out = format!("{}\n{}\n{rule}\n", self.title, line(&self.headers));
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        if !self.footer.is_empty() {
            out.push_str(&rule);
            out.push('\n');
            for r in &self.footer {
                out.push_str(&line(r));
                out.push('\n');
            }
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::stage(Stage::Report, e);
        w.write_record(&self.headers).map_err(err)?;
        for r in self.rows.iter().chain(&self.footer) {
            w.write_record(r).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::stage(Stage::Report, e))?;
        Ok(String::from_utf8(bytes).expect("csv of strings is utf-8"))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let obj = |r: &Vec<String>| {
            serde_json::Value::Object(
                self.headers.iter().zip(r).map(|(h, v)| (h.clone(), serde_json::Value::String(v.clone()))).collect(),
            )
        };
        serde_json::json!({
            "title": self.title,
            "rows": self.rows.iter().map(obj).collect::<Vec<_>>(),
            "footer": self.footer.iter().map(obj).collect::<Vec<_>>(),
        })
    }
}

fn pct(v: f64) -> String {
    format!("{v:.1}")
}

/// Occupancy signals: one row per (profile, δ), undefined times as "-".
pub fn signals_table(signals: &[DeltaSignals]) -> Table {
    let mut t = Table::new(
        "occupancy_signals",
        "WiFi-derived arrival/departure and occupant-aligned HVAC times",
        &["profile", "delta", "tau", "t_a", "t_d", "t_s_o", "t_e_o"],
    );
    let mut ids: Vec<ProfileId> = signals.iter().flat_map(|d| d.profiles.keys().copied()).collect();
    ids.sort();
    ids.dedup();
    for id in ids {
        for d in signals {
            if let Some(s) = d.profiles.get(&id) {
                t.rows.push(vec![
                    id.to_string(),
                    format_delta(d.delta),
                    d.tau.to_string(),
                    format_hour(s.t_a),
                    format_hour(s.t_d),
                    format_hour(s.t_s_o),
                    format_hour(s.t_e_o),
                ]);
            }
        }
    }
    t
}

pub fn demand_signals_table(
    signals: &BTreeMap<ProfileId, DemandSignals>,
    failures: &BTreeMap<ProfileId, String>,
) -> Table {
    let mut t = Table::new(
        "demand_signals",
        "Static ramp-up and setback times of demand profiles",
        &["profile", "t_s_e", "t_e_e"],
    );
    let mut ids: Vec<&ProfileId> = signals.keys().chain(failures.keys()).collect();
    ids.sort();
    for id in ids {
        let s = signals.get(id);
        t.rows.push(vec![id.to_string(), format_hour(s.map(|s| s.t_s_e)), format_hour(s.map(|s| s.t_e_e))]);
    }
    t
}

pub fn schedule_table(table: &ScheduleTable, kind: SeriesKind) -> Table {
    let (name, title) = match kind {
        SeriesKind::OccupantCount => {
            ("occupancy_schedule", "Building occupancy schedules (mode profile per day group)")
        }
        SeriesKind::DemandKw => ("demand_schedule", "Building demand schedules (mode profile per day group)"),
    };
    let mut t = Table::new(name, title, &["building", "semester", "mon-thu", "fri", "sat-sun"]);
    let mut keys: Vec<(String, Semester)> = table.rows.keys().map(|(b, s, _)| (b.clone(), *s)).collect();
    keys.dedup();
    for (b, s) in keys {
        let mut row = vec![b.clone(), s.to_string()];
        for g in DayGroup::ALL {
            row.push(table.get(&b, s, g).map_or("-".into(), |id| id.to_string()));
        }
        t.rows.push(row);
    }
    t
}

/// Savings per building with one % and one MWh column per (semester, δ),
/// and Average(%) / Average(MWh) footers.
pub fn savings_table(summary: &SavingsSummary) -> Table {
    let mut columns: Vec<(Semester, &DeltaSummary)> = Vec::new();
    for s in Semester::ALL {
        for d in &summary.deltas {
            columns.push((s, d));
        }
    }
    let mut headers = vec!["building".to_string()];
    for (s, d) in &columns {
        headers.push(format!("{s} d={} %", format_delta(d.delta)));
    }
    for (s, d) in &columns {
        headers.push(format!("{s} d={} MWh", format_delta(d.delta)));
    }
    let mut t = Table {
        name: "savings".into(),
        title: format!("Estimated chilled water energy savings ({:?} profiles)", summary.mode).to_lowercase(),
        headers,
        ..Default::default()
    };
    let mut buildings: Vec<&str> =
        summary.deltas.iter().flat_map(|d| d.rollups.iter().map(|r| r.building_id.as_str())).collect();
    buildings.sort();
    buildings.dedup();
    fn lookup<'a>(b: &str, s: Semester, d: &'a DeltaSummary) -> Option<&'a crate::artifacts::RollupRecord> {
        d.rollups.iter().find(|r| r.building_id == b && r.semester == s)
    }
    for b in buildings {
        let mut row = vec![b.to_string()];
        for (s, d) in &columns {
            row.push(lookup(b, *s, d).map_or("-".into(), |r| pct(r.pct)));
        }
        for (s, d) in &columns {
            row.push(lookup(b, *s, d).map_or("-".into(), |r| format!("{:.1}", r.total_kwh / 1000.0)));
        }
        t.rows.push(row);
    }
    fn avg(s: Semester, d: &DeltaSummary) -> Option<&crate::artifacts::SemesterAverage> {
        d.averages.iter().find(|a| a.semester == s)
    }
    let n = columns.len();
    let mut avg_pct = vec!["Average (%)".to_string()];
    let mut avg_mwh = vec!["Average (MWh)".to_string()];
    for (s, d) in &columns {
        avg_pct.push(avg(*s, d).map_or("-".into(), |a| pct(a.pct)));
        avg_mwh.push(avg(*s, d).map_or("-".into(), |a| format!("{:.1}", a.mwh)));
    }
    avg_pct.extend(std::iter::repeat_n(String::new(), n));
    let mut mwh_row = vec![avg_mwh[0].clone()];
    mwh_row.extend(std::iter::repeat_n(String::new(), n));
    mwh_row.extend(avg_mwh[1..].iter().cloned());
    t.footer = vec![avg_pct, mwh_row];
    t
}

pub fn miss_waste_table(rows: &[MissWasteRow]) -> Table {
    let mut t = Table::new(
        "miss_waste",
        "Miss and waste hours of the static schedule",
        &["building", "semester", "day_group", "delta", "occupancy", "demand", "waste_h", "miss_h"],
    );
    for r in rows {
        t.rows.push(vec![
            r.building_id.clone(),
            r.semester.to_string(),
            r.day_group.as_str().into(),
            format_delta(r.delta),
            r.label_occupancy.to_string(),
            r.label_demand.to_string(),
            r.waste_h.to_string(),
            r.miss_h.to_string(),
        ]);
    }
    t
}

pub fn sweep_table(summary: &SweepSummary) -> Table {
    let mut t = Table::new(
        "sweep",
        "Campus-average savings from shifting the static schedule",
        &["shift_morning_h", "shift_evening_h", "avg_savings_pct"],
    );
    for c in &summary.campus_average {
        t.rows.push(vec![
            format!("{:+}", c.shift_morning_h),
            format!("{:+}", c.shift_evening_h),
            format!("{:.2}", c.avg_savings_pct),
        ]);
    }
    let labels = ["< 1%", "1% - 2%", "2% - 4%", ">= 4%"];
    for (label, n) in labels.iter().zip(summary.histogram) {
        t.footer.push(vec![format!("buildings with max {label}"), String::new(), n.to_string()]);
    }
    t
}

pub fn cluster_table(datasets: &[ClusterDataset]) -> Table {
    let mut t = Table::new(
        "clusters",
        "Selected k per data set",
        &["dataset", "rows", "k", "overridden", "wss", "cluster_sizes"],
    );
    for d in datasets {
        t.rows.push(vec![
            d.name(),
            d.rows.to_string(),
            d.k.to_string(),
            d.elbow.overridden.to_string(),
            format!("{:.4}", d.wss),
            d.cluster_sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "),
        ]);
    }
    t
}

/// A minimal SVG line chart.
pub fn svg_lines(title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
    let points = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r#"<path d="M{M},{M} L{M},{b} L{r},{b}" fill="none" stroke="black"/>"#, b = H - M, r = W - M);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        W / 2.0,
        H - 10.0,
        escape(x_label)
    );
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#,
            M - 4.0,
            y,
            fmt_tick(v)
        );
    }
    for (v, x) in [(x0, sx(x0)), (x1, sx(x1))] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            x,
            H - M + 14.0,
            fmt_tick(v)
        );
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let d: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(j, &(x, y))| format!("{}{:.1},{:.1}", if j == 0 { "M" } else { "L" }, sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            W - M + 4.0,
            M + 14.0 * i as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn centroid_chart(d: &ClusterDataset) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> = d
        .centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (d.profile(i).to_string(), c.iter().enumerate().map(|(h, &v)| (h as f64, v)).collect()))
        .collect();
    svg_lines(&format!("{} centroids", d.name()), "hour of day", &series)
}

pub fn wss_chart(datasets: &[ClusterDataset]) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> =
        datasets.iter().map(|d| (d.name(), d.wss_curve.iter().map(|(&k, &w)| (k as f64, w)).collect())).collect();
    svg_lines("Within-cluster sum of squared errors", "k", &series)
}

/// Every artifact the report reads.
#[derive(Debug, Clone, Copy)]
pub struct ReportInputs<'a> {
    pub datasets: &'a [ClusterDataset],
    pub occupancy_table: &'a ScheduleTable,
    pub demand_table: &'a ScheduleTable,
    pub occupancy_signals: &'a [DeltaSignals],
    pub demand_signals: &'a BTreeMap<ProfileId, DemandSignals>,
    pub demand_failures: &'a BTreeMap<ProfileId, String>,
    pub miss_waste: &'a [MissWasteRow],
    pub savings: &'a SavingsSummary,
    pub sweep: &'a SweepSummary,
}

pub fn tables(inputs: &ReportInputs<'_>) -> Vec<Table> {
    vec![
        cluster_table(inputs.datasets),
        schedule_table(inputs.occupancy_table, SeriesKind::OccupantCount),
        schedule_table(inputs.demand_table, SeriesKind::DemandKw),
        signals_table(inputs.occupancy_signals),
        demand_signals_table(inputs.demand_signals, inputs.demand_failures),
        miss_waste_table(inputs.miss_waste),
        savings_table(inputs.savings),
        sweep_table(inputs.sweep),
    ]
}

/// Writes the report in every requested format; returns the files written.
pub fn emit_report(dir: &Path, inputs: &ReportInputs<'_>, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    let mut files: BTreeMap<PathBuf, String> = BTreeMap::new();
    let tables = tables(inputs);
    for format in formats {
        match format {
            ReportFormat::Csv => {
                for t in &tables {
                    files.insert(dir.join(format!("{}.csv", t.name)), t.to_csv()?);
                }
            }
            ReportFormat::Table => {
                let text: Vec<String> = tables.iter().map(Table::to_text).collect();
                files.insert(dir.join("report.txt"), text.join("\n"));
            }
            ReportFormat::Json => {
                let obj: serde_json::Map<String, serde_json::Value> =
                    tables.iter().map(|t| (t.name.clone(), t.to_json())).collect();
                let mut text = serde_json::to_string_pretty(&obj).expect("json of strings");
                text.push('\n');
                files.insert(dir.join("report.json"), text);
            }
            ReportFormat::Svg => {
                for d in inputs.datasets {
                    files.insert(dir.join(format!("centroids_{}.svg", d.name())), centroid_chart(d));
                }
                files.insert(dir.join("wss_curves.svg"), wss_chart(inputs.datasets));
            }
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::stage(Stage::Report, format!("{}: {e}", dir.display())))?;
    for (path, content) in &files {
        std::fs::write(path, content)
            .map_err(|e| CliError::stage(Stage::Report, format!("{}: {e}", path.display())))?;
    }
    Ok(files.into_keys().collect())
}
