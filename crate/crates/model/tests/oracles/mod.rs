//! Reference implementations of the buffering recurrences, written against
//! absolute send times rather than spacings. Shared with the acceptance
//! suite through a `#[path]` include.

#![allow(dead_code)]

/// Single-path hard-drop forward pass with γ = 0: returns the end-to-end
/// delay per packet, `None` for drops. A drop leaves the queue untouched.
pub fn forward_hard(sends: &[f64], c: &[f64], d_prop: f64, d_trans: f64, tau: f64) -> Vec<Option<f64>> {
    let mut last: Option<(f64, f64)> = None; // (send time, bottleneck delay)
    let mut out = Vec::with_capacity(sends.len());
    for (&t, &ct) in sends.iter().zip(c) {
        let backlog = match last {
            Some((t0, d0)) => (t0 + d0 - t).max(0.0),
            None => 0.0,
        };
        let a = d_trans + backlog;
        let d = a + ct * (tau - a);
        if d > tau {
            out.push(None);
        } else {
            out.push(Some(d + d_prop));
            last = Some((t, d));
        }
    }
    out
}

/// Delivered packets whose arrival is not strictly after every arrival of
/// an earlier-sent packet.
pub fn order_violations(sends: &[f64], delays: &[Option<f64>]) -> usize {
    let mut latest = f64::NEG_INFINITY;
    let mut n = 0;
    for (t, y) in sends.iter().zip(delays) {
        if let Some(y) = y {
            let arrival = t + y;
            if arrival <= latest {
                n += 1;
            }
            latest = latest.max(arrival);
        }
    }
    n
}
