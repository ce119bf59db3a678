mod oracles;

use pathsim_autodiff::gradcheck::gradcheck;
use pathsim_autodiff::{Group, ParamStore, Tape};
use pathsim_core::io::{Discretizer, GlobalRanges};
use pathsim_core::rng::stream;
use pathsim_core::trace::{Delay, StaticFeatures, Trace};
use pathsim_core::window::window_index;
use pathsim_model::rbu::{
    admit, bottleneck_step, cross_traffic_step, invert_cross_traffic, multipath_step, output_step, CellParams,
    DropMode, Input5, PathEstimate, QueueParams, QueueState, RbuConfig, RbuModel,
};
use proptest::prelude::*;
use rand::Rng;

const WINDOW: f64 = 0.1;
const MTU: u32 = 1500;

/// A random single-path scenario: path, cell weights, window levels and
/// packet schedule.
#[derive(Clone, Debug)]
struct Scenario {
    d_prop: f64,
    d_trans: f64,
    tau: f64,
    gamma: f64,
    wh: [f64; 6],
    uh: f64,
    wc: [f64; 2],
    cw: Vec<f64>,
    spacings: Vec<f64>,
    sizes: Vec<u32>,
}

fn scenario() -> impl Strategy<Value = Scenario> {
    let spacing = prop_oneof![1 => Just(0.0), 4 => 0.0..0.05f64];
    (
        0.001..0.1f64,
        1e-5..0.02f64,
        0.0..0.5f64,
        0.0..=1.0f64,
        prop::array::uniform6(-5.0..5.0f64),
        -5.0..5.0f64,
        prop::array::uniform2(-5.0..5.0f64),
        prop::collection::vec((spacing, 40u32..=MTU), 1..=500),
        prop::collection::vec(0.0..1.0f64, 300),
    )
        .prop_map(|(d_prop, d_trans, extra, gamma, wh, uh, wc, pk, cw)| Scenario {
            d_prop,
            d_trans,
            tau: d_trans + extra,
            gamma,
            wh,
            uh,
            wc,
            cw,
            spacings: pk.iter().map(|p| p.0).collect(),
            sizes: pk.iter().map(|p| p.1).collect(),
        })
}

struct Run {
    sends: Vec<f64>,
    delays: Vec<Option<f64>>,
    /// (c_t, a_t, d_t) per packet.
    steps: Vec<(f64, f64, f64)>,
}

/// Single-path hard-drop RBU over the scenario, using the library steps.
fn run_hard(sc: &Scenario, n_queues: usize) -> Run {
    let cell = CellParams { wh: sc.wh, uh: sc.uh, wc: sc.wc };
    let params = vec![QueueParams { d_trans: sc.d_trans, tau: sc.tau }; n_queues];
    let mut queues = vec![QueueState::default(); n_queues];
    let (mut h, mut d_last, mut t) = (0.0, 0.0, 0.0);
    let y_max = sc.d_prop + sc.tau;
    let mut run = Run { sends: Vec::new(), delays: Vec::new(), steps: Vec::new() };
    for (i, (&s, &size)) in sc.spacings.iter().zip(&sc.sizes).enumerate() {
        if i > 0 {
            t += s;
        }
        let s = if i > 0 { s } else { 0.0 };
        let w = window_index(t, WINDOW).min(sc.cw.len() - 1);
        let input = Input5::new(sc.cw[w], s, size, MTU, d_last, t / WINDOW - w as f64, y_max);
        let (c, h2) = cross_traffic_step(&cell, h, &input, sc.gamma);
        h = h2;
        let out = multipath_step(&mut queues, &params, s, c, 0, sc.d_prop, DropMode::Hard).unwrap();
        run.sends.push(t);
        run.steps.push((c, out.a, out.d));
        if out.p_drop >= 1.0 {
            run.delays.push(None);
        } else {
            admit(&mut queues, 0, out.d);
            d_last = out.d;
            run.delays.push(Some(out.y));
        }
    }
    run
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn single_path_hard_rbu_never_reorders(sc in scenario()) {
        let run = run_hard(&sc, 1);
        prop_assert_eq!(oracles::order_violations(&run.sends, &run.delays), 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn recurrence_stays_in_range(sc in scenario()) {
        let run = run_hard(&sc, 1);
        for (&(c, a, d), y) in run.steps.iter().zip(&run.delays) {
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!(d >= a.min(sc.tau) - 1e-15 && d <= a.max(sc.tau) + 1e-15);
            if let Some(y) = y {
                prop_assert!(*y >= sc.d_prop + sc.d_trans - 1e-15);
            }
        }
    }

    #[test]
    fn one_queue_matches_bottleneck_step_bit_for_bit(sc in scenario()) {
        let run = run_hard(&sc, 1);
        // Same schedule through bottleneck_step with spacing accumulated
        // across drops.
        let (mut d_prev, mut s_acc) = (0.0, 0.0);
        for (i, &(c, _, _)) in run.steps.iter().enumerate() {
            s_acc += if i > 0 { sc.spacings[i] } else { 0.0 };
            let (_, d) = bottleneck_step(d_prev, s_acc, c, sc.d_trans, sc.tau);
            let out = output_step(d, sc.d_prop, sc.tau, DropMode::Hard);
            let y = (out.p_drop < 1.0).then_some(out.y);
            prop_assert_eq!(y.map(f64::to_bits), run.delays[i].map(f64::to_bits));
            if y.is_some() {
                d_prev = d;
                s_acc = 0.0;
            }
        }
    }

    #[test]
    fn unused_second_queue_changes_nothing(sc in scenario()) {
        let one = run_hard(&sc, 1);
        let two = run_hard(&sc, 2);
        let bits = |r: &Run| r.delays.iter().map(|y| y.map(f64::to_bits)).collect::<Vec<_>>();
        prop_assert_eq!(bits(&one), bits(&two));
    }

    #[test]
    fn matches_reference_forward_pass(sc in scenario()) {
        // γ = 0 makes c_t the window level.
        let sc = Scenario { gamma: 0.0, ..sc };
        let run = run_hard(&sc, 1);
        let c: Vec<f64> = run.steps.iter().map(|s| s.0).collect();
        let reference = oracles::forward_hard(&run.sends, &c, sc.d_prop, sc.d_trans, sc.tau);
        for (a, b) in run.delays.iter().zip(&reference) {
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                // A decision exactly at the boundary may flip under rounding.
                _ => prop_assert!(false, "drop decisions differ"),
            }
        }
    }
}

#[test]
fn inversion_recovers_cross_traffic() {
    let bins = Discretizer::new(100, 0.0, 1.0).unwrap();
    let mut worst = 0.0f64;
    for k in 0..100 {
        let mut rng = stream(42, "inversion", k);
        let d_prop = rng.gen_range(0.005..0.1);
        let d_trans = rng.gen_range(1e-4..0.005);
        let tau = rng.gen_range(0.02..0.5);
        let n = rng.gen_range(10..400);
        let mut t = 0.0;
        let mut sends = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                // At least two transmission times apart keeps a_t below τ.
                t += rng.gen_range(2.0 * d_trans..0.05);
            }
            sends.push(t);
        }
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let ys = oracles::forward_hard(&sends, &c, d_prop, d_trans, tau);
        let trace = Trace::from_outcomes(
            sends.iter().zip(&ys).map(|(&t, y)| (t, MTU, y.map_or(Delay::Drop, Delay::Delivered))),
            "cubic",
            "",
            k,
        )
        .unwrap();
        let inv = invert_cross_traffic(&trace, &PathEstimate { d_prop, d_trans, tau }, WINDOW, &bins);
        assert_eq!(inv.n_degenerate, 0);
        for (got, want) in inv.c.iter().zip(&c) {
            worst = worst.max((got.expect("all delivered") - want).abs());
        }
    }
    assert!(worst <= 1e-9, "max |c̃ − c| = {worst:e}");
}

#[test]
fn delay_sum_gradient_matches_finite_differences() {
    let x = StaticFeatures { y_min: 0.04, y_max: 0.2, p95_throughput: 2e6 };
    let x2 = StaticFeatures { y_min: 0.03, y_max: 0.3, p95_throughput: 1e6 };
    let ranges = GlobalRanges::of([&x, &x2]).unwrap();
    let cfg = RbuConfig { hidden: 2, layers: 1, ..RbuConfig::default() };
    let mut store = ParamStore::new();
    let model = RbuModel::init(&mut store, cfg, &[x, x2], &ranges, &mut stream(3, "init", 0)).unwrap();
    let x_norm = pathsim_core::io::normalize_static(&x, &ranges);
    let coords: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.group == Group::Packet)
        .flat_map(|(id, p)| (0..p.value.len()).map(move |k| (id, k)))
        .collect();
    let report = gradcheck::<pathsim_model::Error, _>(&store, &coords, |tape: &Tape, s: &ParamStore| {
        let b = model.bind(tape, s)?;
        let pv = b.path_values(&x, x_norm)?;
        let mut h = tape.scalar(0.0);
        let mut d_prev = tape.scalar(0.0);
        let mut total = tape.scalar(0.0);
        for i in 0..50 {
            let spacing = 0.002 + 0.0137 * ((i * 7 % 11) as f64) / 10.0;
            let input = Input5::new(tape.scalar(0.35), spacing, MTU, MTU, d_prev, 0.5, x.y_max);
            let (c, h2) = cross_traffic_step(&b.cell, h, &input, 0.1);
            h = h2;
            let (_, d) = bottleneck_step(d_prev, tape.scalar(spacing), c, pv.d_trans, pv.tau);
            total = total + d + pv.d_prop;
            d_prev = d;
        }
        Ok(total)
    })
    .unwrap();
    assert_eq!(report.coords.len(), 21);
    assert!(report.max_rel_error() <= 1e-4, "{:?}", report.worst());
}
