//! Fixed-length, non-overlapping windows over a trace's send times.

use crate::trace::PacketRecord;

/// Default window length in seconds.
pub const DEFAULT_WINDOW_LEN: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct WindowGrid {
    pub window_len: f64,
    pub n_windows: usize,
    /// Window index of each packet.
    pub assignment: Vec<usize>,
}

impl WindowGrid {
    /// Packet index ranges per window. Packets are ordered by send time, so
    /// every window is a contiguous (possibly empty) range.
    pub fn ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = vec![0..0; self.n_windows];
        let mut start = 0;
        for w in 0..self.n_windows {
            let mut end = start;
            while end < self.assignment.len() && self.assignment[end] == w {
                end += 1;
            }
            out[w] = start..end;
            start = end;
        }
        out
    }
}

/// `t / window_len`, snapped to the nearest integer when within a relative
/// 1e-9 of it so that boundaries such as 0.3 / 0.1 land on the integer.
fn ratio(t: f64, window_len: f64) -> f64 {
    let q = t / window_len;
    let r = q.round();
    if (q - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        q
    }
}

/// Number of windows covering `duration` seconds (at least one).
pub fn window_count(duration: f64, window_len: f64) -> usize {
    (ratio(duration, window_len).ceil() as usize).max(1)
}

pub fn window_index(send_time: f64, window_len: f64) -> usize {
    ratio(send_time, window_len).floor().max(0.0) as usize
}

/// Assigns each packet to `floor(send_time / window_len)`.
pub fn assign_windows(packets: &[PacketRecord], window_len: f64) -> WindowGrid {
    assert!(window_len > 0.0, "window_len must be positive");
    let assignment: Vec<usize> = packets.iter().map(|p| window_index(p.send_time, window_len)).collect();
    let duration = packets.last().map_or(0.0, |p| p.send_time);
    let by_duration = ratio(duration, window_len).ceil() as usize;
    let by_index = assignment.last().map_or(0, |w| w + 1);
    WindowGrid { window_len, n_windows: by_duration.max(by_index).max(1), assignment }
}
