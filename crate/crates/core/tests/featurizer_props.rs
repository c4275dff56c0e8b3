mod common;

use std::collections::BTreeMap;

use common::{http_record, oracle_bin, rng};
use fedstream::featurizer::{parse_record, Binning, FeatureSchema, Featurizer, LogRecord, RecordFormat, RecordReader};
use fedstream::nb::nb_bin;
use proptest::prelude::*;

const FIELDS: [&str; 11] = [
    "url",
    "host",
    "method",
    "status",
    "bytes_in",
    "bytes_out",
    "content_type",
    "user_agent",
    "referrer",
    "dst_port",
    "duration_ms",
];

fn value_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        any::<String>(),
        "[a-z0-9./:?&=%-]{0,80}",
        any::<f64>().prop_map(|v| v.to_string()),
        any::<i64>().prop_map(|v| v.to_string()),
        Just("NaN".to_string()),
        Just("-inf".to_string()),
        Just("1e400".to_string()),
        Just(String::new()),
    ]
}

fn record_strategy() -> impl Strategy<Value = LogRecord> {
    (any::<i64>(), prop::collection::btree_map(prop::sample::select(FIELDS.to_vec()), value_strategy(), 0..11)).prop_map(
        |(ts, fields)| {
            let mut r = LogRecord::new("fuzz", ts);
            r.fields = fields.into_iter().map(|(k, v)| (k.to_string(), v)).collect::<BTreeMap<_, _>>();
            r
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn featurize_is_total_finite_and_pure(r in record_strategy()) {
        let f = Featurizer::new(FeatureSchema::default_http());
        let x = f.featurize(&r);
        prop_assert_eq!(x.len(), 81);
        prop_assert!(x.values.iter().all(|v| v.is_finite()));
        prop_assert_eq!(x.values, f.featurize(&r.clone()).values);
    }

    #[test]
    fn features_stay_inside_their_declared_domain(r in record_strategy()) {
        let s = FeatureSchema::default_http();
        let x = Featurizer::new(s.clone()).featurize(&r);
        for (v, b) in x.values.iter().zip(s.binnings()) {
            match b {
                Binning::Numeric { lo, hi, .. } => prop_assert!(*v >= lo && *v <= hi),
                Binning::Categorical { count } => prop_assert!(v.fract() == 0.0 && *v >= 0.0 && (*v as u32) < count),
            }
        }
    }

    #[test]
    fn binning_matches_the_floor_rule(lo in -1e3f64..1e3, width in 1e-3f64..1e3, bins in 1u32..64, t in -0.5f64..1.5) {
        let b = Binning::Numeric { lo, hi: lo + width, bins };
        let x = lo + t * width;
        prop_assert_eq!(nb_bin(&b, x), oracle_bin(&b, x));
    }
}

#[test]
fn binning_edges() {
    let b = Binning::Numeric { lo: 0.0, hi: 10.0, bins: 5 };
    assert_eq!(nb_bin(&b, 0.0), 0);
    assert_eq!(nb_bin(&b, 10.0), 4);
    assert_eq!(nb_bin(&b, 4.99), oracle_bin(&b, 4.99));
    assert_eq!(nb_bin(&b, 4.99), 2);
}

#[test]
fn missing_fields_use_midpoint_or_reserved_category() {
    let s = FeatureSchema::default_http();
    let x = Featurizer::new(s.clone()).featurize(&LogRecord::new("empty", 0));
    // the timestamp is always present; check every feature that reads a field
    for ((def, b), v) in s.features.iter().zip(s.binnings()).zip(&x.values) {
        if def.source.starts_with('@') {
            continue;
        }
        match b {
            Binning::Numeric { lo, hi, .. } => assert_eq!(*v, (lo + hi) / 2.0, "{}", def.name),
            Binning::Categorical { .. } => assert_eq!(*v, 0.0, "{}", def.name),
        }
    }
}

fn csv_cell(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

#[test]
fn csv_and_jsonl_parse_to_identical_records() {
    let mut r = rng(20);
    let records: Vec<LogRecord> = (0..20).map(|i| http_record(&mut r, i, i % 3 == 0)).collect();
    let mut columns = vec!["record_id".to_string(), "timestamp".to_string(), "label".to_string()];
    columns.extend(FIELDS.iter().map(|s| s.to_string()));

    let mut csv = columns.join(",") + "\n";
    let mut jsonl = String::new();
    for rec in &records {
        let cells: Vec<String> = columns
            .iter()
            .map(|c| match c.as_str() {
                "record_id" => rec.record_id.clone(),
                "timestamp" => rec.timestamp.to_string(),
                "label" => rec.label.map_or(String::new(), |l| l.as_str().to_string()),
                f => rec.fields.get(f).cloned().unwrap_or_default(),
            })
            .map(|v| csv_cell(&v))
            .collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
        // same content as the CSV row: no label source column there
        let mut plain = rec.clone();
        plain.label_source = None;
        jsonl.push_str(&plain.to_json_line());
        jsonl.push('\n');
    }
    let from_csv: Vec<LogRecord> = RecordReader::new(csv.as_bytes(), RecordFormat::Csv).map(Result::unwrap).collect();
    let from_json: Vec<LogRecord> = RecordReader::new(jsonl.as_bytes(), RecordFormat::Jsonl).map(Result::unwrap).collect();
    assert_eq!(from_csv.len(), 20);
    // empty CSV cells are absent fields, so compare against records without empty values
    let expected: Vec<LogRecord> = from_json
        .iter()
        .cloned()
        .map(|mut r| {
            r.fields.retain(|_, v| !v.is_empty());
            r
        })
        .collect();
    assert_eq!(from_csv, expected);
}

#[test]
fn parse_errors_are_reported() {
    assert!(parse_record("", RecordFormat::Jsonl).is_err());
    assert!(parse_record("{\"timestamp\": 1}", RecordFormat::Jsonl).is_err());
    let ok = parse_record(r#"{"record_id":"a","timestamp":5,"host":"h","url":"u"}"#, RecordFormat::Jsonl).unwrap();
    assert_eq!(ok.fields.len(), 2);
}
