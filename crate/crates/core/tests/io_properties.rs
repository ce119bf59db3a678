use pathsim_core::io::{read_dataset, write_dataset, Discretizer, GlobalRanges, Range};
use pathsim_core::{Dataset, Delay, SplitTag, Trace};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arb_trace() -> impl Strategy<Value = Trace> {
    prop::collection::vec((0.0f64..0.05, 40u32..=1500, prop::option::weighted(0.9, 1e-4f64..0.5)), 1..60)
        .prop_filter("needs a delivered packet", |v| v.iter().any(|p| p.2.is_some()))
        .prop_map(|v| {
            let mut t = 0.0;
            let outcomes: Vec<_> = v
                .into_iter()
                .map(|(gap, size, d)| {
                    t += gap;
                    (t, size, Delay::from(d))
                })
                .collect();
            Trace::from_outcomes(outcomes, "cubic", "s1-c0", 42).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dataset_round_trip(traces in prop::collection::vec(arb_trace(), 0..4)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ndnet.jsonl");
        let d = Dataset::new(traces, SplitTag::Test);
        write_dataset(&d, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let back = read_dataset(&path).unwrap();
        prop_assert_eq!(&back, &d);
        for (a, b) in back.traces.iter().zip(&d.traces) {
            let recomputed = pathsim_core::trace::compute_static_features(a).unwrap();
            prop_assert_eq!(recomputed, b.static_features);
        }
        write_dataset(&back, &path).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn bin_round_trip_within_one_width(v in 0.0f64..=1.0, seed in any::<u64>()) {
        let disc = Discretizer::new(100, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let back = disc.bin_to_value(disc.discretize(v), &mut rng);
        prop_assert!((back - v).abs() <= disc.width());
    }

    #[test]
    fn static_features_within_ranges(traces in prop::collection::vec(arb_trace(), 1..5)) {
        let ranges = GlobalRanges::of(traces.iter().map(|t| &t.static_features)).unwrap();
        for t in &traces {
            let x = pathsim_core::io::normalize_static(&t.static_features, &ranges);
            prop_assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn bin_fifty_draws_stay_in_bin() {
    let disc = Discretizer::new(100, 0.0, 1.0).unwrap();
    assert_eq!(disc.discretize(0.505), 50);
    assert_eq!(disc.discretize(0.0), 0);
    assert_eq!(disc.discretize(1.0), 99);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10_000 {
        let v = disc.bin_to_value(50, &mut rng);
        assert!((0.50..0.51).contains(&v), "{v}");
    }
}

#[test]
fn degenerate_range_maps_to_half() {
    assert_eq!(Range { min: 2.0, max: 2.0 }.normalize(2.0), 0.5);
    assert_eq!(Range { min: 0.0, max: 4.0 }.normalize(2.0), 0.5);
    assert_eq!(Range { min: 0.0, max: 4.0 }.normalize(9.0), 1.0);
}

#[test]
fn drop_is_null_on_disk() {
    let t = Trace::from_outcomes([(0.0, 1500, Delay::Delivered(0.02)), (0.01, 1500, Delay::Drop)], "x", "", 1).unwrap();
    let line = pathsim_core::io::trace_to_json(&t).unwrap();
    assert!(line.contains("null"));
    assert_eq!(pathsim_core::io::trace_from_json(&line, 1).unwrap(), t);
}

#[test]
fn malformed_line_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ndnet.jsonl");
    let t = Trace::from_outcomes([(0.0, 1500, Delay::Delivered(0.02))], "x", "", 1).unwrap();
    let good = pathsim_core::io::trace_to_json(&t).unwrap();
    std::fs::write(&path, format!("{good}\n{{not json\n")).unwrap();
    let err = read_dataset(&path).unwrap_err().to_string();
    assert!(err.contains('2'), "{err}");
}
