use std::fs;

use mcd_telemetry::dataio::{
    denormalize, list_channels, load_channel, normalize, read_detections, read_forecast, read_labels, read_series,
    write_detections, write_forecast, write_labels, write_series, ForecastRow, LabelMap, NormalizationState,
    EXCLUDED_CHANNELS,
};
use mcd_telemetry::{AnomalyInterval, Error};
use proptest::prelude::*;

#[test]
fn channel_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train: Vec<f64> = (0..50).map(|i| i as f64 * 0.37 - 4.0).collect();
    let test: Vec<f64> = (0..40).map(|i| (i as f64).cos()).collect();
    write_series(&dir.path().join("P-1_train.csv"), &train).unwrap();
    write_series(&dir.path().join("P-1_test.csv"), &test).unwrap();
    write_series(&dir.path().join("M-6_train.csv"), &train).unwrap();
    write_series(&dir.path().join("M-6_test.csv"), &test).unwrap();
    let mut labels = LabelMap::new();
    labels.insert("P-1".into(), vec![AnomalyInterval::label(10, 19)]);
    write_labels(&dir.path().join("labels.json"), &labels).unwrap();
    assert_eq!(read_labels(&dir.path().join("labels.json")).unwrap(), labels);

    assert_eq!(list_channels(dir.path()).unwrap(), vec!["M-6", "P-1"]);
    let rec = load_channel::<f64, _>(dir.path(), "P-1", &EXCLUDED_CHANNELS).unwrap();
    assert_eq!(rec.train, train);
    assert_eq!(rec.test, test);
    assert_eq!(rec.labels, vec![AnomalyInterval::label(10, 19)]);
    assert!(!rec.excluded);
    assert!(load_channel::<f64, _>(dir.path(), "M-6", &EXCLUDED_CHANNELS).unwrap().excluded);
}

#[test]
fn corrupt_rows_are_reported_with_their_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("X_train.csv");
    fs::write(&p, "1.0\n2.0\nabc\n").unwrap();
    match read_series::<f64>(&p) {
        Err(Error::Ingest { row, .. }) => assert_eq!(row, 3),
        other => panic!("{other:?}"),
    }
    fs::write(&p, "").unwrap();
    assert!(read_series::<f64>(&p).is_err());
    assert!(read_series::<f64>(&dir.path().join("missing.csv")).is_err());
}

#[test]
fn labels_past_the_test_split_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_series(&dir.path().join("A_train.csv"), &[1.0, 2.0, 3.0]).unwrap();
    write_series(&dir.path().join("A_test.csv"), &[1.0, 2.0, 3.0]).unwrap();
    fs::write(dir.path().join("labels.json"), r#"{"A": [[1, 7]]}"#).unwrap();
    assert!(load_channel::<f64, &str>(dir.path(), "A", &[]).is_err());
}

#[test]
fn forecast_and_detection_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<ForecastRow> = (0..5)
        .map(|i| ForecastRow {
            index: i,
            actual: 0.1 * i as f64,
            mean: 1.0 / 3.0,
            variance: 1e-17,
            lower: -0.25,
            upper: 2f64.sqrt(),
        })
        .collect();
    let p = dir.path().join("forecast.csv");
    write_forecast(&p, &rows).unwrap();
    assert_eq!(read_forecast(&p).unwrap(), rows);

    let ivs = [
        AnomalyInterval {
            start: 3,
            end: 9,
            trigger_index: 5,
        },
        AnomalyInterval::label(20, 21),
    ];
    let p = dir.path().join("detections.csv");
    write_detections(&p, "P-1", 8, &ivs).unwrap();
    let back = read_detections(&p).unwrap();
    assert_eq!(back.iter().map(|r| r.interval()).collect::<Vec<_>>(), ivs);
    assert!(back.iter().all(|r| r.channel_id == "P-1" && r.n_max == 8));
}

#[test]
fn constant_training_split_maps_to_midpoint() {
    let (tr, te, state) = normalize(&[3.0; 10], &[3.0, 4.0]).unwrap();
    assert!(tr.iter().all(|&v| v == 0.0));
    assert_eq!(te, vec![0.0, 0.0]);
    assert_eq!(state.min, state.max);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 500, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn normalization_round_trips(
        train in prop::collection::vec(-1e4..1e4f64, 2..100),
        test in prop::collection::vec(-2e4..2e4f64, 1..100),
    ) {
        let (tr, te, state) = normalize(&train, &test).unwrap();
        prop_assume!(state.max > state.min);
        for v in &tr {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(v));
        }
        let scale = state.max.abs().max(state.min.abs()).max(1.0);
        for (a, b) in denormalize(&te, &state).iter().zip(&test) {
            prop_assert!((a - b).abs() <= 1e-12 * scale);
        }
        prop_assert_eq!(state, NormalizationState::fit(&train).unwrap());
    }
}
