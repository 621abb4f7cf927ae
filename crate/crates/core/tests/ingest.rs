use std::io::Cursor;

use proptest::prelude::*;
use setback::ingest::{
    parse_connection_reader, parse_meter_reader, write_connection_csv, write_meter_csv, IngestConfig, MeterSchema,
    WifiSchema,
};
use setback::synth::{gen_building, BuildingSpec};
use setback::WapClassifier;

fn lenient() -> IngestConfig {
    IngestConfig { malformed_abort_pct: 100.0, ..Default::default() }
}

fn row() -> impl Strategy<Value = String> {
    prop_oneof![
        // well-formed
        (0u32..28, 0u32..24, 0u32..60, "[A-Z]{1,3}[0-9]{1,3}", "[a-f0-9]{4,16}")
            .prop_map(|(d, h, m, b, dev)| { format!("2019-09-{:02} {h:02}:{m:02}:00,{b},{b}-1-101,{dev}", d + 1) }),
        // bad timestamp
        "[a-z0-9 :-]{0,20}".prop_map(|t| format!("{t},B1,B1-1-101,abc")),
        // empty device
        Just("2019-09-01 10:00:00,B1,B1-1-101,".to_string()),
        // arbitrary junk, quotes and commas included
        "[ -~]{0,40}",
    ]
}

proptest! {
    #[test]
    fn connection_parsing_is_total(rows in prop::collection::vec(row(), 0..60)) {
        let text = format!("timestamp,building_id,wap_name,device_hash\n{}", rows.join("\n"));
        let parsed = parse_connection_reader(Cursor::new(text), &WifiSchema::default(), &lenient()).unwrap();
        let r = &parsed.report;
        prop_assert_eq!(parsed.records.len(), r.accepted);
        prop_assert_eq!(r.accepted + r.rejected.len(), r.data_rows);
    }

    #[test]
    fn meter_parsing_is_total(values in prop::collection::vec("[-0-9.a-z]{0,8}", 0..60)) {
        let body: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, v)| format!("2019-09-01 {:02}:{:02}:00,B1,{v}", (i / 12) % 24, (i % 12) * 5))
            .collect();
        let text = format!("timestamp,building_id,demand_kw\n{}", body.join("\n"));
        let parsed = parse_meter_reader(Cursor::new(text), &MeterSchema::default(), &lenient()).unwrap();
        let r = &parsed.report;
        prop_assert_eq!(parsed.records.len(), r.accepted);
        prop_assert_eq!(r.accepted + r.rejected.len(), r.data_rows);
    }

    #[test]
    fn wap_classification_is_pure(name in "[A-Za-z0-9-]{0,20}") {
        let a = WapClassifier::default();
        let b = WapClassifier::default();
        prop_assert_eq!(a.classify(&name), a.classify(&name));
        prop_assert_eq!(a.classify(&name), b.classify(&name));
        prop_assert_eq!(a.is_external(&name), b.is_external(&name));
    }
}

#[test]
fn canonical_round_trip() {
    let mut spec = BuildingSpec::new("B7");
    spec.defects.spikes = 3;
    let g = gen_building(&spec, "2019-08-20".parse().unwrap(), 6, 11).unwrap();

    let mut buf = Vec::new();
    write_connection_csv(&mut buf, &g.events).unwrap();
    let events = parse_connection_reader(Cursor::new(&buf), &WifiSchema::default(), &IngestConfig::default()).unwrap();
    assert!(events.report.rejected.is_empty());
    assert_eq!(events.records, g.events);

    let mut buf = Vec::new();
    write_meter_csv(&mut buf, &g.readings).unwrap();
    let readings = parse_meter_reader(Cursor::new(&buf), &MeterSchema::default(), &IngestConfig::default()).unwrap();
    assert!(readings.report.rejected.is_empty());
    assert_eq!(readings.records, g.readings);

    // a second pass is byte-identical
    let mut again = Vec::new();
    write_meter_csv(&mut again, &readings.records).unwrap();
    assert_eq!(again, buf);
}
