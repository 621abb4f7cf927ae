use std::path::Path;
use std::process::{Command, Output};

use setback::ingest::ParseReport;
use setback::synth::{gen_campus, BuildingSpec, CampusSpec};
use setback::WapClassifier;
use setback_cli::config::RunConfig;
use setback_cli::pipeline::{run_in_memory, IngestSummary, Ingested};
use tempfile::TempDir;

const CAMPUS: &str = r#"
start = "2019-08-12"
days = 28
seed = 3

[[building]]
building_id = "B1"

[[building]]
building_id = "B2"
[building.occupancy]
arrival_h = 9
departure_h = 19
"#;

fn setback(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_setback")).args(args).current_dir(dir).env("MARTINI_LOG", "warn").output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let o = setback(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn synthesized() -> TempDir {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("campus.toml"), CAMPUS).unwrap();
    ok(tmp.path(), &["synth", "--spec", "campus.toml", "--out", "."]);
    tmp
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = synthesized();
    let dir = tmp.path();
    let code = |args: &[&str]| setback(dir, args).status.code();
    assert_eq!(code(&["--out", "o", "run", "--all"]), Some(2));
    assert_eq!(code(&["--config", "config.toml", "--delta", "1.5", "--out", "o", "run", "--all"]), Some(2));
    std::fs::write(dir.join("bad.csv"), "a,b\n1,2\n").unwrap();
    assert_eq!(code(&["--config", "config.toml", "--wifi", "bad.csv", "--out", "o", "ingest"]), Some(3));
    assert_eq!(code(&["--out", "fresh", "schedule"]), Some(4));
}

#[test]
fn stages_run_one_at_a_time_and_reuse_artifacts() {
    let tmp = synthesized();
    let dir = tmp.path();
    for stage in ["ingest", "preprocess", "cluster", "schedule", "savings", "sweep", "report"] {
        ok(dir, &["--config", "config.toml", "--out", "staged", stage]);
    }
    ok(dir, &["--config", "config.toml", "--out", "whole", "run", "--all"]);
    for file in ["cluster/clusters.json", "savings/summary.json", "sweep/sweep.csv", "report/report.txt"] {
        assert_eq!(
            std::fs::read(dir.join("staged").join(file)).unwrap(),
            std::fs::read(dir.join("whole").join(file)).unwrap(),
            "{file}"
        );
    }
    // rerunning one stage leaves its siblings untouched
    let before = std::fs::read(dir.join("staged/savings/summary.json")).unwrap();
    ok(dir, &["--config", "config.toml", "--out", "staged", "sweep"]);
    assert_eq!(std::fs::read(dir.join("staged/savings/summary.json")).unwrap(), before);
}

#[test]
fn tampered_upstream_is_stale() {
    let tmp = synthesized();
    let dir = tmp.path();
    ok(dir, &["--config", "config.toml", "--out", "o", "run", "--to", "cluster"]);
    let path = dir.join("o/cluster/clusters.json");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push('\n');
    std::fs::write(&path, text).unwrap();
    let o = setback(dir, &["--config", "config.toml", "--out", "o", "schedule"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stale"));
    // rebuilding from the tampered stage clears it
    ok(dir, &["--config", "config.toml", "--out", "o", "run", "--from", "cluster"]);
}

#[test]
fn report_formats_and_k_override() {
    let tmp = synthesized();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "--config",
            "config.toml",
            "--out",
            "o",
            "--k-override",
            "2",
            "--format",
            "json,svg-lines,table",
            "run",
            "--all",
        ],
    );
    let report = dir.join("o/report");
    assert!(report.join("report.json").is_file());
    assert!(report.join("report.txt").is_file());
    assert!(report.join("wss_curves.svg").is_file());
    assert!(!report.join("savings.csv").exists());
    let svg = std::fs::read_to_string(report.join("wss_curves.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    let clusters: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("o/cluster/clusters.json")).unwrap()).unwrap();
    let ks: Vec<u64> = clusters.as_array().unwrap().iter().map(|d| d["k"].as_u64().unwrap()).collect();
    assert!(!ks.is_empty() && ks.iter().all(|&k| k == 2), "{ks:?}");
}

#[test]
fn ledger_totals_are_additive() {
    let buildings = ["B1", "B2", "B3"].map(BuildingSpec::new).to_vec();
    let campus = CampusSpec { start: "2019-08-05".parse().unwrap(), days: 42, seed: 9, buildings };
    let g = gen_campus(&campus).unwrap();
    let (events, _) = WapClassifier::default().filter_internal(g.events);
    let ingested = Ingested {
        events,
        readings: g.readings,
        summary: IngestSummary {
            wifi: ParseReport::default(),
            meter: ParseReport::default(),
            external_events_dropped: 0,
            duplicate_readings_removed: 0,
        },
    };
    let out = run_in_memory(&RunConfig::default(), &ingested).unwrap();
    assert_eq!(out.ledgers.len(), 3);
    for (delta, ledger) in &out.ledgers {
        assert!(!ledger.entries.is_empty(), "δ={delta}");
        let entries: f64 = ledger.entries.iter().map(|e| e.savings_kwh).sum();
        let hourly: f64 = ledger.entries.iter().flat_map(|e| e.hourly_kwh).sum();
        let rollups: f64 = ledger.rollups.values().map(|r| r.total_kwh).sum();
        let by_day: f64 = ledger.rollups.values().flat_map(|r| r.by_day.iter().map(|d| d.1)).sum();
        let by_hour: f64 = ledger.rollups.values().flat_map(|r| r.by_hour_of_week.iter()).sum();
        for total in [hourly, rollups, by_day, by_hour, ledger.total_kwh()] {
            assert!((total - entries).abs() <= 1e-6 * entries.abs().max(1.0), "{total} vs {entries}");
        }
    }
}
