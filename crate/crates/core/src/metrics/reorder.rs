use crate::io::Dataset;
use crate::trace::Trace;

/// Fraction of delivered packets overtaken by at least one later-sent
/// delivered packet. Packets without a receive rank do not count.
pub fn reorder_fraction(trace: &Trace) -> f64 {
    let ranks: Vec<u32> = trace.packets.iter().filter_map(|p| p.recv_rank).collect();
    if ranks.is_empty() {
        return 0.0;
    }
    let mut min_later = u32::MAX;
    let mut reordered = 0usize;
    for &r in ranks.iter().rev() {
        if min_later < r {
            reordered += 1;
        }
        min_later = min_later.min(r);
    }
    reordered as f64 / ranks.len() as f64
}

/// Empirical CDF of per-trace reordering fractions: (value, P[X ≤ value]) at
/// each distinct value, ending at probability 1.
pub fn reorder_cdf(dataset: &Dataset) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = dataset.traces.iter().map(reorder_fraction).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = p,
            _ => out.push((*x, p)),
        }
    }
    out
}

/// Per-window reordering fraction among delivered packets sent in each
/// window; `None` for windows without delivered packets.
pub fn window_reorder_fractions(trace: &Trace, window_len: f64) -> Vec<Option<f64>> {
    let grid = crate::window::assign_windows(&trace.packets, window_len);
    let mut flagged = vec![false; trace.len()];
    let mut min_later = u32::MAX;
    for (i, p) in trace.packets.iter().enumerate().rev() {
        if let Some(r) = p.recv_rank {
            flagged[i] = min_later < r;
            min_later = min_later.min(r);
        }
    }
    grid.ranges()
        .into_iter()
        .map(|range| {
            let delivered: Vec<usize> = range.filter(|&i| trace.packets[i].recv_rank.is_some()).collect();
            if delivered.is_empty() {
                None
            } else {
                Some(delivered.iter().filter(|&&i| flagged[i]).count() as f64 / delivered.len() as f64)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::SplitTag;
    use crate::trace::Delay;

    fn trace(sends: &[f64], delays: &[f64]) -> Trace {
        Trace::from_outcomes(sends.iter().zip(delays).map(|(&s, &d)| (s, 1500, Delay::Delivered(d))), "t", "", 0)
            .unwrap()
    }

    #[test]
    fn fifo_is_zero() {
        assert_eq!(reorder_fraction(&trace(&[0.0, 0.1, 0.2], &[0.05, 0.05, 0.05])), 0.0);
    }

    #[test]
    fn swapped_pair_is_half() {
        assert_eq!(reorder_fraction(&trace(&[0.0, 0.01], &[0.1, 0.02])), 0.5);
    }

    #[test]
    fn cdf_ends_at_one() {
        let d = Dataset::new(
            vec![
                trace(&[0.0, 0.01], &[0.1, 0.02]),
                trace(&[0.0, 0.1], &[0.05, 0.05]),
                trace(&[0.0, 0.1], &[0.05, 0.05]),
            ],
            SplitTag::Test,
        );
        let cdf = reorder_cdf(&d);
        assert_eq!(cdf.len(), 2);
        assert_eq!(cdf[0].0, 0.0);
        assert!((cdf[0].1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(cdf.last().unwrap().1, 1.0);
        assert!(cdf.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn window_fractions() {
        let t = trace(&[0.0, 0.01, 0.15], &[0.1, 0.02, 0.01]);
        assert_eq!(window_reorder_fractions(&t, 0.1), vec![Some(0.5), Some(0.0)]);
    }
}
