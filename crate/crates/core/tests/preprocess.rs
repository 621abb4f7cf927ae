use std::collections::{BTreeMap, HashSet};

use chrono::NaiveDate;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use setback::preprocess::{
    classify_devices, clean_demand, denormalize, flatline_clean, iqr_clean, normalize, occupancy_series,
    ClassThresholds, CleaningConfig, DeviceClass, MinMax, Quality,
};
use setback::synth::{gen_building, BuildingSpec};
use setback::time::format_timestamp;
use setback::{HourlySeries, SeriesKind, WapClassifier, HOURS};

fn start() -> NaiveDate {
    "2019-08-12".parse().unwrap()
}

proptest! {
    #[test]
    fn normalize_round_trip(values in prop::collection::vec(-1e6f64..1e6, 2..48)) {
        let (n, params) = normalize(&values, None);
        prop_assert!(n.iter().all(|v| (0.0..=1.0).contains(v)));
        if !params.is_degenerate() {
            let back = denormalize(&n, &params);
            for (a, b) in values.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn degenerate_maps_to_zero(v in -1e6f64..1e6, len in 1usize..30) {
        let (n, params) = normalize(&vec![v; len], None);
        prop_assert!(params.is_degenerate());
        prop_assert!(n.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn iqr_keeps_everything_at_or_below_bound(
        values in prop::collection::vec(prop::option::weighted(0.95, 0.0f64..1000.0), HOURS * 4..HOURS * 8),
    ) {
        let days = values.len() / HOURS;
        let s = HourlySeries::from_values("B1", SeriesKind::DemandKw, start(), &values[..days * HOURS]);
        let c = iqr_clean(&s, 1.5).unwrap();
        for (before, after) in s.samples.iter().zip(&c.series.samples) {
            match c.bound {
                Some(bound) if before.value.is_some_and(|v| v > bound) => prop_assert_eq!(after.value, None),
                _ => prop_assert_eq!(before, after),
            }
        }
    }

    #[test]
    fn flatline_only_touches_qualifying_runs(
        values in prop::collection::vec(prop::option::weighted(0.95, 0u8..4), HOURS..HOURS * 3),
        window in 2usize..5,
    ) {
        let days = values.len() / HOURS;
        let values: Vec<Option<f64>> = values[..days * HOURS].iter().map(|v| v.map(f64::from)).collect();
        let s = HourlySeries::from_values("B1", SeriesKind::DemandKw, start(), &values);
        let c = flatline_clean(&s, window).unwrap();
        // independent run finder
        let mut in_run = vec![false; values.len()];
        let mut i = 0;
        while i < values.len() {
            let mut j = i + 1;
            while values[i].is_some() && j < values.len() && values[j] == values[i] {
                j += 1;
            }
            if values[i].is_some() && j - i >= window {
                in_run[i..j].fill(true);
            }
            i = j;
        }
        for (h, (before, after)) in s.samples.iter().zip(&c.series.samples).enumerate() {
            if in_run[h] {
                prop_assert_eq!(after.quality, Quality::Nullified);
            } else {
                prop_assert_eq!(before, after);
            }
        }
    }
}

#[test]
fn device_classes_partition_and_match_generator() {
    let mut spec = BuildingSpec::new("B3");
    spec.devices.short_stay_per_day = 6;
    spec.devices.stationary = 2;
    let g = gen_building(&spec, start(), 14, 5).unwrap();
    let (events, dropped) = WapClassifier::default().filter_internal(g.events);
    assert_eq!(dropped, 14 * 3 * 24);

    let stats = classify_devices(&events, &ClassThresholds::default());
    let mut per_day: BTreeMap<NaiveDate, [usize; 3]> = BTreeMap::new();
    for s in &stats {
        let c = per_day.entry(s.date).or_default();
        c[s.class as usize] += 1;
    }
    let devices_per_day: BTreeMap<NaiveDate, usize> =
        events.iter().map(|e| (e.timestamp.date(), e.device_hash.clone())).collect::<HashSet<_>>().into_iter().fold(
            BTreeMap::new(),
            |mut m, (d, _)| {
                *m.entry(d).or_default() += 1;
                m
            },
        );
    for day in &g.truth[0].days {
        let c = per_day[&day.date];
        assert_eq!(c[DeviceClass::ShortStay as usize], 6, "{}", day.date);
        assert_eq!(c[DeviceClass::Regular as usize], day.regular_devices as usize, "{}", day.date);
        assert_eq!(c[DeviceClass::Stationary as usize], 2, "{}", day.date);
        assert_eq!(c.iter().sum::<usize>(), devices_per_day[&day.date]);
    }
}

#[test]
fn occupancy_series_ignores_event_order() {
    let g = gen_building(&BuildingSpec::new("B4"), start(), 5, 9).unwrap();
    let thresholds = ClassThresholds::default();
    let a = occupancy_series(&classify_devices(&g.events, &thresholds), &g.events, None);
    let mut shuffled = g.events.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let b = occupancy_series(&classify_devices(&shuffled, &thresholds), &shuffled, None);
    assert_eq!(a, b);
}

#[test]
fn cleaning_recovers_injected_defects() {
    let mut spec = BuildingSpec::new("B5");
    spec.defects.spikes = 12;
    spec.defects.flatline_runs = 10;
    spec.defects.flatline_hours = 4;
    let days = 90;
    let g = gen_building(&spec, start(), days, 21).unwrap();
    let raw = &setback::preprocess::resample_meter(&g.readings, None)[0];
    let report = clean_demand(raw, &CleaningConfig::default()).unwrap();
    let nulled: HashSet<String> = report
        .after_outliers
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.quality == Quality::Nullified)
        .map(|(i, _)| format_timestamp(&raw.timestamp(i)))
        .collect();
    let truth = &g.truth[0];
    let spikes: HashSet<String> = truth.spike_hours.iter().map(format_timestamp).collect();
    let flat: HashSet<String> = truth.flatline_hours().iter().map(format_timestamp).collect();
    let caught = spikes.intersection(&nulled).count();
    assert!(caught as f64 >= 0.95 * spikes.len() as f64, "{caught}/{}", spikes.len());
    assert!(flat.is_subset(&nulled));
    let clean_hours = days as usize * HOURS - spikes.len() - flat.len();
    let false_pos = nulled.difference(&spikes).filter(|h| !flat.contains(*h)).count();
    assert!(false_pos as f64 <= 0.02 * clean_hours as f64, "{false_pos}");
}

#[test]
fn dense_spikes_defeat_the_peak_bound() {
    // with a spike on most days the quartiles of daily peaks are spikes too
    let mut spec = BuildingSpec::new("B6");
    spec.defects.spikes = 40;
    let g = gen_building(&spec, start(), 30, 3).unwrap();
    let raw = &setback::preprocess::resample_meter(&g.readings, None)[0];
    let c = iqr_clean(raw, 1.5).unwrap();
    assert!(c.nullified < 20, "{}", c.nullified);
}

#[test]
fn min_max_fit() {
    let m = MinMax::fit([3.0, -1.0, 7.0]).unwrap();
    assert_eq!((m.min, m.max), (-1.0, 7.0));
    assert_eq!(m.normalize(3.0), 0.5);
    assert!(MinMax::fit(std::iter::empty()).is_none());
}
