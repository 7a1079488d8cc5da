use mcd_telemetry::metrics::{f1_score, scalar_metrics};
use mcd_telemetry::{ConfusionCounts, MetricReport};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 2000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn score_identities(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50, tn in 0usize..50) {
        let c = ConfusionCounts { tp, fp, fn_, tn };
        let s = scalar_metrics(&c);
        let (p, r) = (s.precision, s.recall);
        let harmonic = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        prop_assert_eq!(s.f1, harmonic);
        prop_assert!(s.f1 >= 0.0);
        prop_assert!(s.f1 <= (p * r).sqrt() + 1e-15 && (p * r).sqrt() <= p.max(r) + 1e-15);
        for v in [p, r, s.accuracy, s.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if c.total() > 0 {
            prop_assert_eq!(s.accuracy == 1.0, fp == 0 && fn_ == 0);
        }
        prop_assert_eq!(s.zero_division, tp + fp == 0 || tp + fn_ == 0 || c.total() == 0);
        let report = MetricReport::new(0.5, &c);
        prop_assert_eq!((report.precision, report.recall, report.f1), (p, r, s.f1));
    }
}

#[test]
fn precision_082_recall_087_rounds_to_f1_084() {
    let f1 = f1_score(0.82, 0.87);
    assert_eq!(f1, 2.0 * 0.82 * 0.87 / (0.82 + 0.87));
    assert_eq!(format!("{f1:.2}"), "0.84");
}
