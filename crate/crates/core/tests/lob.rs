use marked_ratio::estimators::JointPredictor;
use marked_ratio::lob::{
    compute_covariates, imbalance, imbalance_levels, read_lob_csv, spread_ticks, synthesize_lob_stream,
    synthetic_table_points, to_marked_sample, training_sample, write_lob_csv, RawLobEvent, SyntheticLobLaw,
};
use proptest::prelude::*;

fn ev(t: i64, side: u8, bid: i64, ask: i64, qb: u64, qa: u64) -> RawLobEvent {
    RawLobEvent { timestamp_us: t, side, best_bid: bid, best_ask: ask, qty_bid: qb, qty_ask: qa, mid_changed: side }
}

fn arb_event() -> impl Strategy<Value = RawLobEvent> {
    (0u8..2, 0i64..5, 0u64..50, 0u64..50, 0u8..2).prop_map(|(side, gap, qb, qa, mid)| RawLobEvent {
        timestamp_us: 0,
        side,
        best_bid: 1_000,
        best_ask: 1_000 + gap - 1,
        qty_bid: qb,
        qty_ask: qa,
        mid_changed: mid,
    })
}

fn stream(mut events: Vec<RawLobEvent>) -> Vec<RawLobEvent> {
    for (n, e) in events.iter_mut().enumerate() {
        e.timestamp_us = 1_000 * n as i64;
    }
    events
}

#[test]
fn fixture_covariates() {
    let events = [ev(1, 0, 100, 101, 100, 50), ev(2, 1, 100, 105, 10, 10), ev(3, 0, 100, 102, 1, 3)];
    let cov = compute_covariates(&events, 1.0).unwrap();
    let got: Vec<Vec<f64>> = cov.covariates.iter().map(|c| c.to_vec()).collect();
    assert_eq!(got, vec![vec![1.0 / 3.0, 1.0, 1.0], vec![0.0, -1.0, 3.0], vec![-0.5, 1.0, 2.0]]);
    assert_eq!(spread_ticks(100, 110, 5.0), 2.0);
    assert_eq!(spread_ticks(100, 101, 5.0), 1.0);
}

#[test]
fn broken_records_are_rejected_and_bad_streams_fail() {
    let events = [ev(1, 0, 100, 101, 5, 5), ev(2, 1, 101, 100, 5, 5), ev(3, 1, 100, 101, 0, 5), ev(4, 0, 100, 102, 2, 2)];
    let cov = compute_covariates(&events, 1.0).unwrap();
    assert_eq!(cov.rejected, 2);
    assert_eq!(cov.accepted, vec![0, 3]);
    assert_eq!(cov.covariates[1].last_sign, -1.0);

    assert!(compute_covariates(&[], 1.0).is_err());
    assert!(compute_covariates(&[ev(5, 0, 1, 2, 1, 1), ev(4, 0, 1, 2, 1, 1)], 1.0).is_err());
    assert!(compute_covariates(&[RawLobEvent { side: 2, ..ev(1, 0, 1, 2, 1, 1) }], 1.0).is_err());
    assert!(compute_covariates(&events, 0.0).is_err());
}

#[test]
fn sessions_concatenate_without_their_first_events() {
    let a = [ev(0, 0, 100, 101, 5, 5), ev(1_000_000, 1, 100, 101, 5, 5), ev(2_000_000, 0, 100, 101, 5, 5)];
    let b = [ev(0, 1, 100, 101, 5, 5), ev(500_000, 1, 100, 101, 5, 5)];
    let sessions: Vec<_> = [&a[..], &b[..]]
        .iter()
        .map(|events| to_marked_sample(events, &compute_covariates(events, 1.0).unwrap()))
        .collect();
    assert_eq!(sessions[0].len(), 3);
    let joined = training_sample(&sessions).unwrap();
    assert_eq!(joined.len(), 3);
    assert_eq!(joined.horizon, 2.5);
    let times: Vec<f64> = joined.events.iter().map(|e| e.time).collect();
    assert_eq!(times, vec![1.0, 2.0, 2.5]);
    assert_eq!(joined.events[2].x[1], 1.0);
}

#[test]
fn csv_round_trip_and_header_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("book.csv");
    let events = synthesize_lob_stream(50.0, 3).unwrap();
    write_lob_csv(&path, &events).unwrap();
    assert_eq!(read_lob_csv(&path).unwrap(), events);
    std::fs::write(&path, "time,side\n1,0\n").unwrap();
    assert!(read_lob_csv(&path).is_err());
}

#[test]
fn synthetic_stream_matches_its_law() {
    let events = synthesize_lob_stream(20_000.0, 9).unwrap();
    let cov = compute_covariates(&events, 1.0).unwrap();
    assert_eq!(cov.rejected, 0);
    let levels = imbalance_levels();
    assert!(cov.covariates.iter().all(|c| levels.iter().any(|l| (l - c.imbalance).abs() < 1e-12)));
    // Frequency of ask-side orders in one table cell against the law.
    let law = SyntheticLobLaw::default();
    let cell = [0.4, 1.0, 1.0];
    let hits: Vec<u8> = cov
        .accepted
        .iter()
        .zip(&cov.covariates)
        .filter(|(_, c)| c.to_vec().iter().zip(cell).all(|(a, b)| (a - b).abs() < 1e-9))
        .map(|(&n, _)| events[n].side)
        .collect();
    let p = law.class_probs(&cell);
    let ask = p[2] + p[3];
    let freq = hits.iter().map(|&s| s as f64).sum::<f64>() / hits.len() as f64;
    assert!((freq - ask).abs() < 4.0 * (ask * (1.0 - ask) / hits.len() as f64).sqrt(), "{freq} vs {ask}");

    let points = synthetic_table_points();
    assert_eq!(points.nrows(), 30);
    let probs = law.joint_probs(points.view());
    for r in 0..30 {
        assert!((probs.row(r).sum() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn covariates_are_prefix_consistent(events in prop::collection::vec(arb_event(), 1..60), cut in 1usize..60) {
        let events = stream(events);
        let cut = cut.min(events.len());
        let full = compute_covariates(&events, 1.0).unwrap();
        let prefix = compute_covariates(&events[..cut], 1.0).unwrap();
        let kept = full.accepted.iter().filter(|&&n| n < cut).count();
        prop_assert_eq!(&prefix.accepted[..], &full.accepted[..kept]);
        prop_assert_eq!(&prefix.covariates[..], &full.covariates[..kept]);
    }

    #[test]
    fn imbalance_is_strictly_inside_the_unit_interval(qb in 1u64..1_000_000, qa in 1u64..1_000_000) {
        let v = imbalance(qb, qa);
        prop_assert!(v > -1.0 && v < 1.0);
        prop_assert_eq!(imbalance(qa, qb), -v);
    }

    #[test]
    fn accepted_records_have_bounded_covariates(events in prop::collection::vec(arb_event(), 1..60)) {
        let cov = compute_covariates(&stream(events.clone()), 1.0).unwrap();
        prop_assert_eq!(cov.accepted.len() + cov.rejected, events.len());
        for c in &cov.covariates {
            prop_assert!(c.imbalance.abs() < 1.0);
            prop_assert!(c.last_sign == 1.0 || c.last_sign == -1.0);
            prop_assert!((1.0..=3.0).contains(&c.spread_ticks));
        }
    }
}
