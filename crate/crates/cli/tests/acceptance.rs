//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setback::cluster::{kmeans, select_k, wss_curve, KMeansParams};
use setback::ingest::ParseReport;
use setback::preprocess::{clean_demand, denormalize, normalize, resample_meter, CleaningConfig, Quality};
use setback::savings::{daily_savings, virtual_profile, Target};
use setback::schedule::{demand_signals, hvac_window, occupancy_signals, EveningLag, OccupiedWindow, ScheduleParams};
use setback::synth::{
    gaussian_blobs, gen_building, gen_campus, oracle_kmeans, oracle_savings, BuildingSpec, CampusSpec, OracleTarget,
};
use setback::{DayGroup, DayProfile, WapClassifier, HOURS};
use setback_cli::config::RunConfig;
use setback_cli::pipeline::{run_in_memory, IngestSummary, Ingested, RunOutput};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const OCCUPANCY: DayProfile = [
    0.02, 0.02, 0.02, 0.02, 0.03, 0.04, 0.06, 0.10, 0.35, 0.70, 0.90, 1.00, 0.85, 0.90, 0.95, 0.80, 0.60, 0.45, 0.30,
    0.20, 0.12, 0.08, 0.05, 0.03,
];

const DEMAND_KW: DayProfile = [
    310.0, 305.0, 300.0, 300.0, 305.0, 320.0, 720.0, 790.0, 840.0, 900.0, 950.0, 990.0, 1000.0, 985.0, 970.0, 950.0,
    920.0, 880.0, 850.0, 810.0, 770.0, 730.0, 350.0, 315.0,
];

/// Both fixtures go through normalization and a single-cluster fit before
/// signal extraction, as the pipeline would treat a week of identical days.
fn worked_example() -> Outcome {
    let t0 = Instant::now();
    let week = |p: &DayProfile| -> Vec<Vec<f64>> {
        let (n, _) = normalize(&p.repeat(7), None);
        n.chunks(HOURS).map(<[f64]>::to_vec).collect()
    };
    let centroid = |rows: Vec<Vec<f64>>| -> DayProfile {
        let m = kmeans(&rows, &KMeansParams::new(1, 1, 0)).unwrap();
        m.centroids[0].clone().try_into().unwrap()
    };
    let occ_c = centroid(week(&OCCUPANCY));
    let dem_c = centroid(week(&DEMAND_KW));
    let occ = occupancy_signals(&occ_c, &ScheduleParams::new(0.15, 2, EveningLag::Minus).unwrap());
    let dem = demand_signals(&dem_c).map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed().as_secs_f64();
    let got = (occ.t_a, occ.t_d, occ.t_s_o, occ.t_e_o, dem.t_s_e, dem.t_e_e);
    let want = (Some(8), Some(20), Some(6), Some(18), 5, 21);
    check(got == want && elapsed < 1.0, format!("{got:?}, {elapsed:.3}s"))
}

type Row = (&'static str, f64, Option<u8>, Option<u8>, Option<u8>, Option<u8>);

const REFERENCE_WINDOWS: [Row; 21] = [
    ("OS-1", 0.05, Some(8), Some(19), Some(6), Some(17)),
    ("OS-1", 0.10, Some(8), Some(18), Some(6), Some(16)),
    ("OS-1", 0.15, Some(9), Some(17), Some(7), Some(15)),
    ("OS-2", 0.05, None, None, None, None),
    ("OS-2", 0.10, None, None, None, None),
    ("OS-2", 0.15, None, None, None, None),
    ("OS-3", 0.05, Some(8), Some(20), Some(6), Some(18)),
    ("OS-3", 0.10, Some(8), Some(18), Some(6), Some(16)),
    ("OS-3", 0.15, Some(9), Some(18), Some(7), Some(16)),
    ("OF-1", 0.05, Some(8), Some(23), Some(6), Some(21)),
    ("OF-1", 0.10, Some(8), Some(21), Some(6), Some(19)),
    ("OF-1", 0.15, Some(8), Some(20), Some(6), Some(18)),
    ("OF-2", 0.05, Some(10), Some(22), Some(8), Some(20)),
    ("OF-2", 0.10, Some(13), Some(19), Some(11), Some(17)),
    ("OF-2", 0.15, Some(15), Some(16), Some(13), Some(14)),
    ("OF-3", 0.05, Some(7), None, Some(5), None),
    ("OF-3", 0.10, Some(8), Some(22), Some(6), Some(20)),
    ("OF-3", 0.15, Some(8), Some(21), Some(6), Some(19)),
    ("OF-4", 0.05, Some(8), None, Some(6), None),
    ("OF-4", 0.10, Some(8), None, Some(6), None),
    ("OF-4", 0.15, Some(9), Some(23), Some(7), Some(21)),
];

fn signal_table() -> Outcome {
    let mismatches: Vec<String> = REFERENCE_WINDOWS
        .iter()
        .filter_map(|&(profile, delta, t_a, t_d, t_s_o, t_e_o)| {
            let w = OccupiedWindow { t_a, t_d, unoccupied: t_a.is_none(), open_ended: t_a.is_some() && t_d.is_none() };
            let got = hvac_window(&w, 2, EveningLag::Minus);
            ((got.t_s_o, got.t_e_o) != (t_s_o, t_e_o)).then(|| format!("{profile} δ={delta}"))
        })
        .collect();
    check(mismatches.is_empty(), format!("{} rows, mismatches {mismatches:?}", REFERENCE_WINDOWS.len()))
}

fn kmeans_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut misses = Vec::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..=8);
        let dim = rng.random_range(1..=3);
        let k = rng.random_range(1..=3);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let model = kmeans(&points, &KMeansParams::new(k, 20, seed)).map_err(|e| e.to_string())?;
        let oracle = oracle_kmeans(&points, k).map_err(|e| e.to_string())?;
        if (model.wss - oracle.wss).abs() > 1e-9 {
            misses.push(format!("seed {seed}: {:.6} vs {:.6}", model.wss, oracle.wss));
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    check(
        misses.len() <= 1 && elapsed < 5.0,
        format!("{}/100 optimal, {elapsed:.2}s, misses {misses:?}", 100 - misses.len()),
    )
}

fn elbow() -> Outcome {
    let mut hits = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let centers: Vec<Vec<f64>> = (0..3)
            .map(|c| (0..24).map(|h| if h % 3 == c { 1.0 } else { 0.0 } + rng.random_range(-0.1..0.1)).collect())
            .collect();
        let points = gaussian_blobs(&centers, 20, 0.05, seed);
        let models = wss_curve(&points, 2..=10, 10, seed).map_err(|e| e.to_string())?;
        let curve: BTreeMap<usize, f64> = models.iter().map(|(&k, m)| (k, m.wss)).collect();
        if select_k(&curve, None).map_err(|e| e.to_string())?.k == 3 {
            hits += 1;
        }
    }
    check(hits >= 95, format!("k=3 on {hits}/100 seeds"))
}

const ARRIVALS: [u8; 5] = [8, 8, 9, 9, 8];
const DEPARTURES: [u8; 5] = [18, 18, 19, 19, 18];

fn recovery_campus() -> CampusSpec {
    let buildings = (0..5)
        .map(|i| {
            let mut b = BuildingSpec::new(format!("B00{}", i + 1));
            b.occupancy.arrival_h = ARRIVALS[i];
            b.occupancy.departure_h = DEPARTURES[i];
            b.occupancy.noise_sd = 0.02;
            b.demand.noise_sd = 0.02;
            b.demand.operating_kw = 400.0 + 100.0 * i as f64;
            b.defects.spikes = 10;
            b.defects.flatline_runs = 4;
            b
        })
        .collect();
    CampusSpec { start: "2019-07-09".parse().unwrap(), days: 180, seed: 1, buildings }
}

fn in_memory(campus: &CampusSpec, config: &RunConfig) -> (setback::synth::Generated, RunOutput) {
    let g = gen_campus(campus).unwrap();
    let (events, dropped) = WapClassifier::default().filter_internal(g.events.clone());
    let ingested = Ingested {
        events,
        readings: g.readings.clone(),
        summary: IngestSummary {
            wifi: ParseReport::default(),
            meter: ParseReport::default(),
            external_events_dropped: dropped,
            duplicate_readings_removed: 0,
        },
    };
    let out = run_in_memory(config, &ingested).unwrap();
    (g, out)
}

fn end_to_end(campus: &CampusSpec, g: &setback::synth::Generated, out: &RunOutput, elapsed: f64) -> Outcome {
    let signals = &out.signals.occupancy[0];
    let mut off = Vec::new();
    for (i, spec) in campus.buildings.iter().enumerate() {
        for ((b, semester, group), label) in &out.clustered.occupancy_table.rows {
            if *b != spec.building_id || *group == DayGroup::SatSun {
                continue;
            }
            let s = &signals.profiles[label];
            let near = |got: Option<u8>, want: u8| got.is_some_and(|g| g.abs_diff(want) <= 1);
            if !near(s.t_a, ARRIVALS[i]) || !near(s.t_d, DEPARTURES[i]) {
                off.push(format!("{b} {semester:?} {group:?}: {:?}/{:?}", s.t_a, s.t_d));
            }
        }
    }
    let (_, ledger) = &out.ledgers[0];
    let oracle: f64 = g.truth.iter().map(|t| oracle_savings(t, OracleTarget::Occupancy { delta: 0.15, tau: 2 })).sum();
    let rel = (ledger.total_kwh() - oracle) / oracle;
    check(
        off.is_empty() && rel.abs() <= 0.05 && elapsed < 10.0,
        format!(
            "ledger {:.0} kWh vs oracle {oracle:.0} ({:+.2}%), {elapsed:.2}s, off-by-more-than-1h {off:?}",
            ledger.total_kwh(),
            100.0 * rel
        ),
    )
}

fn alignment(g: &setback::synth::Generated, out: &RunOutput) -> Outcome {
    let mut days = 0;
    let mut nonzero = 0;
    for series in resample_meter(&g.readings, None) {
        for d in 0..series.days() {
            let Some(base) = series.complete_day(d) else { continue };
            let Ok(dem) = demand_signals(&base) else { continue };
            let vp = virtual_profile(&base, &dem, Target::Window { start: dem.t_s_e, end: Some(dem.t_e_e) })
                .map_err(|e| e.to_string())?;
            days += 1;
            if daily_savings(&vp) != 0.0 {
                nonzero += 1;
            }
        }
    }
    let cells: Vec<f64> = out
        .sweep
        .cells
        .iter()
        .filter(|c| c.shift_morning_h == 0 && c.shift_evening_h == 0)
        .map(|c| c.avg_savings_pct)
        .collect();
    let totals_zero = !cells.is_empty() && cells.iter().all(|&v| v == 0.0);
    check(
        nonzero == 0 && totals_zero,
        format!("{days} days, {nonzero} non-zero; {} building totals at (0,0) all zero: {totals_zero}", cells.len()),
    )
}

fn round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut tested = 0;
    while tested < 1000 {
        let len = rng.random_range(2..64);
        let scale = 10f64.powi(rng.random_range(-3..6));
        let v: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let (n, params) = normalize(&v, None);
        if params.is_degenerate() {
            continue;
        }
        tested += 1;
        for (a, b) in v.iter().zip(denormalize(&n, &params)) {
            worst = worst.max((a - b).abs() / (1.0 + a.abs()));
        }
    }
    let degenerate_ok = [0.0, -3.5, 1e6].iter().all(|&c| {
        let (n, p) = normalize(&[c; 24], None);
        p.is_degenerate() && n.iter().all(|&x| x == 0.0)
    });
    check(
        worst <= 1e-9 && degenerate_ok,
        format!("1000 vectors, worst relative error {worst:.2e}; degenerate to zeros: {degenerate_ok}"),
    )
}

fn cleaning() -> Outcome {
    let mut spec = BuildingSpec::new("B001");
    spec.defects.spikes = 12;
    spec.defects.flatline_runs = 10;
    spec.defects.flatline_hours = 4;
    let days = 90;
    let g = gen_building(&spec, "2019-08-12".parse().unwrap(), days, 21).map_err(|e| e.to_string())?;
    let raw = &resample_meter(&g.readings, None)[0];
    let report = clean_demand(raw, &CleaningConfig::default()).map_err(|e| e.to_string())?;
    let nulled: HashSet<_> = report
        .after_outliers
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.quality == Quality::Nullified)
        .map(|(i, _)| raw.timestamp(i))
        .collect();
    let truth = &g.truth[0];
    let spikes: HashSet<_> = truth.spike_hours.iter().copied().collect();
    let flat: HashSet<_> = truth.flatline_hours().into_iter().collect();
    let caught = spikes.intersection(&nulled).count();
    let flat_caught = flat.intersection(&nulled).count();
    let clean_hours = days as usize * HOURS - spikes.len() - flat.len();
    let false_pos = nulled.iter().filter(|h| !spikes.contains(*h) && !flat.contains(*h)).count();
    let fp_rate = false_pos as f64 / clean_hours as f64;
    check(
        caught as f64 >= 0.95 * spikes.len() as f64 && flat_caught == flat.len() && fp_rate <= 0.02,
        format!(
            "spikes {caught}/{}, flat-line hours {flat_caught}/{}, false positives {:.2}%",
            spikes.len(),
            flat.len(),
            100.0 * fp_rate
        ),
    )
}

fn sweep_structure() -> Outcome {
    let buildings = (0..4)
        .map(|i| {
            let mut b = BuildingSpec::new(format!("T00{}", i + 1));
            // exactly flat hours would be cleaned away as stuck readings
            b.demand.noise_sd = 0.005;
            b.demand.ramp_h = 4 + i as u8;
            b.demand.setback_h = 20 + (i % 2) as u8;
            b.demand.operating_kw = 300.0 + 150.0 * i as f64;
            b
        })
        .collect();
    let campus = CampusSpec { start: "2019-08-01".parse().unwrap(), days: 42, seed: 5, buildings };
    let (_, out) = in_memory(&campus, &RunConfig::default());
    let s = &out.sweep;
    let avg = |a: i32, b: i32| s.campus_average(a, b).unwrap_or(f64::NAN);
    let mut grid = String::new();
    let mut ok = avg(0, 0) == 0.0;
    for a in 0..=2 {
        for b in 0..=2 {
            let here = avg(a, -b);
            grid.push_str(&format!("({a:+},{:+})={here:.2}% ", -b));
            if a < 2 && avg(a + 1, -b) < here {
                ok = false;
            }
            if b < 2 && avg(a, -b - 1) < here {
                ok = false;
            }
        }
    }
    ok &= avg(2, -2) > 0.0;
    check(ok, grid.trim_end().to_string())
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_setback");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let spec = r#"
start = "2019-08-05"
days = 56
seed = 11

[[building]]
building_id = "B001"

[[building]]
building_id = "B002"
[building.occupancy]
arrival_h = 9
departure_h = 19

[[building]]
building_id = "B003"
[building.defects]
spikes = 4
"#;
    std::fs::write(dir.join("campus.toml"), spec).map_err(|e| e.to_string())?;
    let run = |args: &[&str]| -> Result<(), String> {
        let o = Command::new(bin)
            .args(args)
            .current_dir(dir)
            .env("MARTINI_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        if o.status.success() {
            Ok(())
        } else {
            Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)))
        }
    };
    run(&["synth", "--spec", "campus.toml", "--out", "."])?;
    run(&["--config", "config.toml", "--out", "a", "run", "--all"])?;
    run(&["--config", "config.toml", "--out", "b", "run", "--all"])?;
    let (a, b) = (tree(&dir.join("a")), tree(&dir.join("b")));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    check(
        !a.is_empty() && a.len() == b.len() && differing.is_empty(),
        format!("{} files, differing {differing:?}", a.len()),
    )
}

fn main() {
    // the harness passes libtest flags; list mode must not run anything
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "worked example", worked_example()),
        (2, "reference signal table", signal_table()),
        (3, "kmeans vs exhaustive optimum", kmeans_oracle()),
        (4, "elbow recovery", elbow()),
    ];

    let campus = recovery_campus();
    let mut config = RunConfig::default();
    config.savings.delta = vec![0.15];
    let t0 = Instant::now();
    let (g, out) = in_memory(&campus, &config);
    let elapsed = t0.elapsed().as_secs_f64();
    results.push((5, "end-to-end synthetic recovery", end_to_end(&campus, &g, &out, elapsed)));
    results.push((6, "alignment identity", alignment(&g, &out)));

    results.push((7, "normalization round trip", round_trip()));
    results.push((8, "cleaning recall and precision", cleaning()));
    results.push((9, "sweep structure", sweep_structure()));
    results.push((10, "run determinism", determinism()));

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(d) => println!("PASS {n:>2} {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {d}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
