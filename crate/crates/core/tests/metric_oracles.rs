mod oracles;

use oracles::{emd_exhaustive, mmd_triple_sum, w1_quantile};
use pathsim_core::io::Range;
use pathsim_core::metrics::{mmd_rbf, transport_uniform, wasserstein_1d, wasserstein_2d};
use pathsim_core::rng::stream;
use proptest::prelude::*;
use rand::Rng;

const UNIT: Range = Range { min: 0.0, max: 1.0 };

#[test]
fn w1_matches_quantile_oracle() {
    let mut rng = stream(1, "w1", 0);
    for _ in 0..50 {
        let na = rng.gen_range(1..40);
        let nb = rng.gen_range(1..40);
        let a: Vec<f64> = (0..na).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.gen_range(-1.0..5.0)).collect();
        let got = wasserstein_1d(&a, &b).unwrap();
        assert!((got - w1_quantile(&a, &b)).abs() <= 1e-9);
    }
}

#[test]
fn w2_matches_exhaustive_assignment() {
    let mut rng = stream(2, "w2", 0);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=6);
        let pts = |rng: &mut pathsim_core::rng::StreamRng| -> Vec<[f64; 2]> {
            (0..n).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect()
        };
        let a = pts(&mut rng);
        let b = pts(&mut rng);
        let cost: Vec<Vec<f64>> =
            a.iter().map(|p| b.iter().map(|q| (p[0] - q[0]).hypot(p[1] - q[1])).collect()).collect();
        let got = wasserstein_2d(&a, &b, [UNIT, UNIT]).unwrap();
        assert!((got - emd_exhaustive(&cost)).abs() <= 1e-9);
    }
}

#[test]
fn unequal_transport_matches_replicated_assignment() {
    let mut rng = stream(3, "ot", 0);
    for _ in 0..200 {
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=3);
        let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        // Replicate each source m times and each sink n times: n·m points a side.
        let rep: Vec<Vec<f64>> = (0..n * m).map(|i| (0..n * m).map(|j| cost[i / m][j / n]).collect()).collect();
        assert!((transport_uniform(&cost) - emd_exhaustive_or_hungarian(&rep)).abs() <= 1e-9);
    }
}

fn emd_exhaustive_or_hungarian(cost: &[Vec<f64>]) -> f64 {
    if cost.len() <= 6 {
        emd_exhaustive(cost)
    } else {
        pathsim_core::metrics::assignment(cost).0 / cost.len() as f64
    }
}

#[test]
fn mmd_matches_triple_sum() {
    let mut rng = stream(4, "mmd", 0);
    for _ in 0..50 {
        let dim = rng.gen_range(1..10);
        let mut set = |n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect()).collect()
        };
        let a = set(7);
        let b = set(11);
        assert!(mmd_rbf(&a, &a, 1.0).unwrap().abs() <= 1e-12);
        assert!((mmd_rbf(&a, &b, 0.1).unwrap() - mmd_triple_sum(&a, &b, 0.1)).abs() <= 1e-12);
    }
}

proptest! {
    #[test]
    fn w1_shift(v in prop::collection::vec(-10.0f64..10.0, 1..30), c in -5.0f64..5.0) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        prop_assert!((wasserstein_1d(&v, &shifted).unwrap() - c.abs()).abs() <= 1e-9);
    }

    #[test]
    fn w1_symmetric_nonnegative(a in prop::collection::vec(0.0f64..1.0, 1..20), b in prop::collection::vec(0.0f64..1.0, 1..20)) {
        let ab = wasserstein_1d(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - wasserstein_1d(&b, &a).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn mmd_nonnegative(a in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..8),
                       b in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..8)) {
        prop_assert!(mmd_rbf(&a, &b, 1.0).unwrap() >= -1e-12);
    }
}
