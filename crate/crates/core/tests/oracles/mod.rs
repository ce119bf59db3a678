//! Independent reference implementations used to cross-check the library.
//! Shared with the acceptance suite through a `#[path]` include.

#![allow(dead_code)]

/// One packet offered to the brute-force queue: arrival tick (µs) and size in
/// bytes. At 8 Mbit/s one byte takes exactly one tick.
#[derive(Clone, Copy, Debug)]
pub struct TickArrival {
    pub tick: u64,
    pub bytes: u64,
}

/// Time-stepped FIFO tail-drop queue at one byte per tick. Each tick first
/// releases a packet whose last byte finished, then admits arrivals (drop
/// when `capacity` packets are already in the system), then serves one byte.
/// Returns the sojourn time in ticks per arrival, `None` for drops.
pub fn tick_queue(capacity: usize, arrivals: &[TickArrival]) -> Vec<Option<u64>> {
    let mut out = vec![None; arrivals.len()];
    // (arrival index, remaining bytes)
    let mut system: std::collections::VecDeque<(usize, u64)> = Default::default();
    let mut next = 0;
    let mut tick = 0u64;
    while next < arrivals.len() || !system.is_empty() {
        if let Some(&(i, 0)) = system.front() {
            out[i] = Some(tick - arrivals[i].tick);
            system.pop_front();
        }
        while next < arrivals.len() && arrivals[next].tick == tick {
            if system.len() < capacity {
                system.push_back((next, arrivals[next].bytes));
            }
            next += 1;
        }
        if let Some(head) = system.front_mut() {
            head.1 -= 1;
        }
        tick += 1;
    }
    out
}

/// W1 as the integral of |F⁻¹ − G⁻¹| over a grid of `na·nb` equal quantile
/// cells, on which both quantile functions are constant.
pub fn w1_quantile(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let cells = na * nb;
    (0..cells).map(|k| (a[k / nb] - b[k / na]).abs()).sum::<f64>() / cells as f64
}

/// Minimum mean matching cost over all permutations (equal sizes).
pub fn emd_exhaustive(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        best = best.min(c);
    });
    best / n as f64
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

/// MMD² evaluated term by term from its three-sum definition.
pub fn mmd_triple_sum(x: &[Vec<f64>], y: &[Vec<f64>], zeta: f64) -> f64 {
    let k = |u: &Vec<f64>, v: &Vec<f64>| {
        let mut d = 0.0;
        for i in 0..u.len() {
            d += (u[i] - v[i]).powi(2);
        }
        (-zeta * d).exp()
    };
    let (m, n) = (x.len() as f64, y.len() as f64);
    let mut xx = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            xx += k(&x[i], &x[j]);
        }
    }
    let mut yy = 0.0;
    for i in 0..y.len() {
        for j in 0..y.len() {
            yy += k(&y[i], &y[j]);
        }
    }
    let mut xy = 0.0;
    for i in 0..x.len() {
        for j in 0..y.len() {
            xy += k(&x[i], &y[j]);
        }
    }
    xx / (m * m) + yy / (n * n) - 2.0 * xy / (m * n)
}
