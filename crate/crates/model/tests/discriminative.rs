use pathsim_core::groundtruth::{generate_dataset, GenerateSpec, ScenarioBounds};
use pathsim_core::io::{Dataset, SplitTag};
use pathsim_core::protocols::SenderKind;
use pathsim_core::trace::{Delay, Trace};
use pathsim_model::discriminative::{discriminative_score, DiscConfig};
use pathsim_model::Error;

fn real(n: usize) -> Dataset {
    let mut spec = GenerateSpec::desk(SenderKind::CubicLike, 4);
    spec.scenarios = vec![(3, ScenarioBounds::scenario(3).unwrap().scale_bandwidth(0.2))];
    spec.n_configs = n / 5;
    spec.n_patterns = 5;
    spec.duration = 3.0;
    generate_dataset(&spec).unwrap()
}

fn scaled(ds: &Dataset, factor: f64) -> Dataset {
    let traces = ds
        .traces
        .iter()
        .map(|t| {
            Trace::from_outcomes(
                t.packets.iter().map(|p| {
                    let d = match p.delay {
                        Delay::Delivered(y) => Delay::Delivered(y * factor),
                        Delay::Drop => Delay::Drop,
                    };
                    (p.send_time, p.size, d)
                }),
                t.protocol_tag.clone(),
                t.config_tag.clone(),
                t.seed,
            )
            .unwrap()
        })
        .collect();
    Dataset::new(traces, SplitTag::Test)
}

#[test]
fn identical_sets_are_indistinguishable() {
    let ds = real(20);
    let r = discriminative_score(&ds, &ds, &DiscConfig::default(), 1).unwrap();
    assert!(r.score <= 0.1, "{r:?}");
}

#[test]
fn scaled_delays_are_separable() {
    let ds = real(20);
    let r = discriminative_score(&ds, &scaled(&ds, 10.0), &DiscConfig::default(), 1).unwrap();
    assert!(r.score >= 0.4, "{r:?}");
}

#[test]
fn deterministic_and_validated() {
    let ds = real(20);
    let other = scaled(&ds, 2.0);
    let cfg = DiscConfig { epochs: 3, ..DiscConfig::default() };
    assert_eq!(
        discriminative_score(&ds, &other, &cfg, 7).unwrap(),
        discriminative_score(&ds, &other, &cfg, 7).unwrap()
    );
    let few = Dataset::new(ds.traces[..9].to_vec(), SplitTag::Test);
    assert!(matches!(discriminative_score(&few, &ds, &cfg, 0), Err(Error::TooFewTraces { need: 10, got: 9 })));
}
