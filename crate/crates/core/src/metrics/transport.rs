//! Exact optimal transport between uniform empirical distributions.

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials, O(n³)). Returns `(total cost, assignment)` where
/// `assignment[row] = col`.
pub fn assignment(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = cost.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    assert!(cost.iter().all(|r| r.len() == n), "cost matrix must be square");
    // 1-based arrays, column 0 is a virtual column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    let total = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    (total, assign)
}

/// Transport between `n` sources of mass `1/n` and `m` sinks of mass `1/m`.
/// Masses are scaled to integers (`m` units per source, `n` per sink) and
/// solved by successive shortest paths with Dijkstra on reduced costs.
/// Returns the optimal cost for unit total mass.
pub fn transport_uniform(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    if n == 0 {
        return 0.0;
    }
    let m = cost[0].len();
    if n == m {
        return assignment(cost).0 / n as f64;
    }
    let mut supply = vec![m as u64; n];
    let mut demand = vec![n as u64; m];
    let mut flow = vec![vec![0u64; m]; n];
    // Node potentials: sources then sinks.
    let mut pot_src = vec![0.0f64; n];
    let mut pot_snk = vec![0.0f64; m];
    let mut remaining = (n * m) as u64;
    while remaining > 0 {
        // Dijkstra from the super source over sources (with supply left) and
        // sinks; distances use reduced costs.
        let mut dist_src = vec![f64::INFINITY; n];
        let mut dist_snk = vec![f64::INFINITY; m];
        let mut prev_snk = vec![usize::MAX; m]; // source feeding each sink
        let mut prev_src = vec![usize::MAX; n]; // sink feeding each source via a back edge
        let mut done_src = vec![false; n];
        let mut done_snk = vec![false; m];
        for i in 0..n {
            if supply[i] > 0 {
                dist_src[i] = 0.0;
            }
        }
        loop {
            // Pick the closest unfinished node.
            let mut best = f64::INFINITY;
            let mut pick: Option<(bool, usize)> = None;
            for i in 0..n {
                if !done_src[i] && dist_src[i] < best {
                    best = dist_src[i];
                    pick = Some((true, i));
                }
            }
            for j in 0..m {
                if !done_snk[j] && dist_snk[j] < best {
                    best = dist_snk[j];
                    pick = Some((false, j));
                }
            }
            let Some((is_src, k)) = pick else { break };
            if is_src {
                done_src[k] = true;
                for j in 0..m {
                    if done_snk[j] {
                        continue;
                    }
                    let rc = (cost[k][j] + pot_src[k] - pot_snk[j]).max(0.0);
                    if best + rc < dist_snk[j] {
                        dist_snk[j] = best + rc;
                        prev_snk[j] = k;
                    }
                }
            } else {
                done_snk[k] = true;
                for i in 0..n {
                    if done_src[i] || flow[i][k] == 0 {
                        continue;
                    }
                    let rc = (-cost[i][k] + pot_snk[k] - pot_src[i]).max(0.0);
                    if best + rc < dist_src[i] {
                        dist_src[i] = best + rc;
                        prev_src[i] = k;
                    }
                }
            }
        }
        // Closest sink with demand left.
        let target = (0..m)
            .filter(|&j| demand[j] > 0 && dist_snk[j].is_finite())
            .min_by(|&a, &b| dist_snk[a].total_cmp(&dist_snk[b]).then(a.cmp(&b)))
            .expect("transport problem is always feasible");
        let cap = dist_snk[target];
        for i in 0..n {
            pot_src[i] += dist_src[i].min(cap);
        }
        for j in 0..m {
            pot_snk[j] += dist_snk[j].min(cap);
        }
        // Walk back to find the bottleneck.
        let mut bottleneck = demand[target];
        let mut j = target;
        loop {
            let i = prev_snk[j];
            if prev_src[i] == usize::MAX {
                bottleneck = bottleneck.min(supply[i]);
                break;
            }
            let j_prev = prev_src[i];
            bottleneck = bottleneck.min(flow[i][j_prev]);
            j = j_prev;
        }
        // Apply.
        let mut j = target;
        demand[target] -= bottleneck;
        loop {
            let i = prev_snk[j];
            flow[i][j] += bottleneck;
            if prev_src[i] == usize::MAX {
                supply[i] -= bottleneck;
                break;
            }
            let j_prev = prev_src[i];
            flow[i][j_prev] -= bottleneck;
            j = j_prev;
        }
        remaining -= bottleneck;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            if flow[i][j] > 0 {
                total += flow[i][j] as f64 * cost[i][j];
            }
        }
    }
    total / (n * m) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_small() {
        let c = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let (total, a) = assignment(&c);
        assert_eq!(total, 5.0);
        assert_eq!(a, vec![1, 0, 2]);
    }

    #[test]
    fn transport_matches_replicated_assignment() {
        // 2 sources vs 4 sinks equals the 4x4 assignment with each source
        // duplicated.
        let src = [0.0, 10.0];
        let snk = [1.0, 2.0, 8.0, 13.0];
        let cost: Vec<Vec<f64>> = src.iter().map(|a| snk.iter().map(|b| f64::abs(a - b)).collect()).collect();
        let dup: Vec<Vec<f64>> =
            [0, 0, 1, 1].iter().map(|&i| snk.iter().map(|b| f64::abs(src[i] - b)).collect()).collect();
        let expected = assignment(&dup).0 / 4.0;
        assert!((transport_uniform(&cost) - expected).abs() < 1e-12);
    }
}
