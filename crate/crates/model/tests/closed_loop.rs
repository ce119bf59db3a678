mod oracles;

use pathsim_core::groundtruth::{generate_dataset, GenerateSpec, ScenarioBounds};
use pathsim_core::io::{Dataset, Discretizer, SplitTag};
use pathsim_core::metrics::reorder::reorder_fraction;
use pathsim_core::protocols::{SenderKind, SenderParams};
use pathsim_core::trace::{Delay, Trace};
use pathsim_model::baselines::{prepare_baseline, train_baseline, BaselineConfig, BaselineKind, BaselineTrainConfig};
use pathsim_model::checkpoint::Checkpoint;
use pathsim_model::rbu::{DropMode, RbuConfig};
use pathsim_model::simulate::{simulate, simulate_batch, RbuEnv, SimRun};
use pathsim_model::training::{train, TrainConfig};

fn small_dataset(seed: u64) -> Dataset {
    let mut spec = GenerateSpec::desk(SenderKind::CubicLike, seed);
    spec.scenarios = vec![(3, ScenarioBounds::scenario(3).unwrap().scale_bandwidth(0.2))];
    spec.n_configs = 2;
    spec.n_patterns = 3;
    spec.duration = 3.0;
    generate_dataset(&spec).unwrap()
}

fn rbu_checkpoint(multipath: bool) -> Checkpoint {
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 3,
        model: RbuConfig { hidden: 4, layers: 1, multipath, ..RbuConfig::default() },
        ..TrainConfig::default()
    };
    train(&small_dataset(1), &cfg).unwrap().checkpoint
}

fn baseline_checkpoint(kind: BaselineKind) -> Checkpoint {
    let cfg = BaselineTrainConfig {
        epochs: 1,
        batch_size: 3,
        model: BaselineConfig { hidden: 4, layers: 1, ..BaselineConfig::default() },
        ..BaselineTrainConfig::default()
    };
    train_baseline(&small_dataset(1), kind, &cfg).unwrap().checkpoint
}

fn run(sender: SenderKind, seed: u64, drop_mode: Option<DropMode>) -> SimRun {
    SimRun { duration: 3.0, sender, sender_params: SenderParams::default(), seed, drop_mode }
}

#[test]
fn same_seed_same_trace() {
    for ckpt in [rbu_checkpoint(false), baseline_checkpoint(BaselineKind::LstmPkt)] {
        let a = simulate(&ckpt, &run(SenderKind::VegasLike, 9, None)).unwrap();
        let b = simulate(&ckpt, &run(SenderKind::VegasLike, 9, None)).unwrap();
        assert_eq!(a, b);
        let c = simulate(&ckpt, &run(SenderKind::VegasLike, 10, None)).unwrap();
        assert_ne!(a, c);
    }
}

#[test]
fn single_path_hard_simulation_never_reorders() {
    let ckpt = rbu_checkpoint(false);
    let template = run(SenderKind::CubicLike, 0, Some(DropMode::Hard));
    let ds = simulate_batch(&ckpt, &template, 100, 5).unwrap();
    assert_eq!(ds.len(), 100);
    for t in &ds.traces {
        assert_eq!(reorder_fraction(t), 0.0);
        let sends: Vec<f64> = t.packets.iter().map(|p| p.send_time).collect();
        let delays: Vec<Option<f64>> = t.packets.iter().map(|p| p.delay.seconds()).collect();
        assert_eq!(oracles::order_violations(&sends, &delays), 0);
    }
}

#[test]
fn batch_plumbing() {
    let ckpt = rbu_checkpoint(false);
    let template = run(SenderKind::RenoAimd, 0, None);
    assert!(simulate_batch(&ckpt, &template, 0, 1).unwrap().is_empty());
    let ds = simulate_batch(&ckpt, &template, 12, 1).unwrap();
    for i in 0..ds.len() {
        for j in i + 1..ds.len() {
            assert_ne!(ds.traces[i], ds.traces[j]);
        }
    }
    // Worker count does not change the batch.
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let again = one.install(|| simulate_batch(&ckpt, &template, 12, 1)).unwrap();
    assert_eq!(ds, again);
}

/// Delivered bytes per arrival window stay within the implied bandwidth,
/// allowing one packet of edge effect per window.
#[test]
fn delivered_throughput_respects_transmission_delay() {
    let ckpt = rbu_checkpoint(false);
    let window = 0.1;
    for seed in 0..20 {
        let r = run(SenderKind::CubicLike, seed, None);
        let mut rng = pathsim_core::rng::stream(seed, "sim", 0);
        let x = pathsim_model::simulate::sample_features(&ckpt, &mut rng);
        let env = RbuEnv::new(&ckpt, x, r.duration, None, rng).unwrap();
        let d_trans = env.path().1[0].d_trans;
        let t = simulate(&ckpt, &r).unwrap();
        let mtu = 1500.0;
        let mut bytes = std::collections::BTreeMap::<u64, f64>::new();
        for p in &t.packets {
            if let Some(y) = p.delay.seconds() {
                let w = ((p.send_time + y) / window).floor() as u64;
                *bytes.entry(w).or_default() += f64::from(p.size);
            }
        }
        let cap = mtu * (window / d_trans).floor() + mtu;
        for (w, b) in bytes {
            assert!(b <= cap * 1.05, "seed {seed} window {w}: {b} bytes > {cap}");
        }
    }
}

#[test]
fn two_path_model_simulates() {
    let ckpt = rbu_checkpoint(true);
    assert_eq!(ckpt.model_id(), "rbu-2path");
    let t = simulate(&ckpt, &run(SenderKind::CubicLike, 2, None)).unwrap();
    assert!(!t.packets.is_empty());
}

#[test]
fn fifo_baseline_never_reorders() {
    let ckpt = baseline_checkpoint(BaselineKind::LstmPktFifo);
    for seed in 0..10 {
        let t = simulate(&ckpt, &run(SenderKind::CubicLike, seed, None)).unwrap();
        assert_eq!(reorder_fraction(&t), 0.0, "seed {seed}");
    }
}

#[test]
fn baseline_kinds_share_training() {
    let a = baseline_checkpoint(BaselineKind::LstmWin);
    let b = baseline_checkpoint(BaselineKind::LstmPkt);
    assert_eq!(a.params, b.params);
    assert_eq!(a.model_id(), "lstm-win");
}

/// Constant-delay traces: the window baseline learns the single bin.
#[test]
fn window_baseline_learns_constant_delay() {
    let mk = |seed: u64| {
        Trace::from_outcomes(
            (0..300).map(|i| {
                let t = i as f64 * 0.01;
                // First packet sets y_max = 0.2 so y / y_max sits mid-bin 62.
                let d = if i == 0 { 0.2 } else { 0.125 };
                (t, 1500, Delay::Delivered(d))
            }),
            "cubic",
            "",
            seed,
        )
        .unwrap()
    };
    let ds = Dataset::new((0..4).map(mk).collect(), SplitTag::Train);
    let cfg = BaselineTrainConfig {
        epochs: 300,
        batch_size: 4,
        lr: 0.5,
        model: BaselineConfig { hidden: 4, layers: 1, ..BaselineConfig::default() },
        seed: 0,
    };
    let out = train_baseline(&ds, BaselineKind::LstmWin, &cfg).unwrap();
    let held_out = mk(99);
    let prepared = prepare_baseline(&held_out, &cfg.model, ds.global_ranges.as_ref().unwrap()).unwrap();
    let model = pathsim_model::baselines::BaselineModel::from_store(&out.checkpoint.params, cfg.model.clone()).unwrap();
    let tape = pathsim_autodiff::Tape::new();
    let (ce, _) =
        pathsim_model::baselines::baseline_objective(&tape, &out.checkpoint.params, &model, &prepared).unwrap();
    // The first window mixes one packet from bin 99 with 9 from bin 62;
    // its target entropy bounds the achievable mean cross-entropy.
    let bins = Discretizer::new(100, 0.0, 1.0).unwrap();
    assert_eq!(bins.discretize(0.625), 62);
    let h0 = -(0.1f64 * 0.1f64.ln() + 0.9 * 0.9f64.ln());
    let floor = h0 / prepared.inputs.len() as f64;
    assert!(ce.scalar() <= floor + 0.05, "held-out CE {} vs floor {floor}", ce.scalar());
}
