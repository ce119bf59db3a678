//! Packet-level traces and the trace-level static features that condition
//! every model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::window::{assign_windows, DEFAULT_WINDOW_LEN};

/// End-to-end delay of one packet. A dropped packet has no finite delay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Option<f64>", into = "Option<f64>")]
pub enum Delay {
    Delivered(f64),
    Drop,
}

impl Delay {
    pub fn seconds(self) -> Option<f64> {
        match self {
            Delay::Delivered(d) => Some(d),
            Delay::Drop => None,
        }
    }

    pub fn is_drop(self) -> bool {
        matches!(self, Delay::Drop)
    }
}

impl From<Option<f64>> for Delay {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Delay::Drop, Delay::Delivered)
    }
}

impl From<Delay> for Option<f64> {
    fn from(d: Delay) -> Self {
        d.seconds()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PacketRecord {
    /// Seconds since trace start.
    pub send_time: f64,
    /// Bytes.
    pub size: u32,
    /// Delta to the previous packet's send time; 0 for the first packet.
    pub spacing: f64,
    pub delay: Delay,
    /// Arrival order among delivered packets.
    pub recv_rank: Option<u32>,
}

impl PacketRecord {
    pub fn arrival_time(&self) -> Option<f64> {
        self.delay.seconds().map(|d| self.send_time + d)
    }
}

/// Trace-level features: minimum delay, maximum delay and 95th percentile
/// throughput (bits/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticFeatures {
    pub y_min: f64,
    pub y_max: f64,
    pub p95_throughput: f64,
}

impl StaticFeatures {
    pub fn as_array(&self) -> [f64; 3] {
        [self.y_min, self.y_max, self.p95_throughput]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.y_min > 0.0
            && self.y_min <= self.y_max
            && self.p95_throughput > 0.0
            && self.y_max.is_finite()
            && self.p95_throughput.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidTrace(format!("inconsistent static features {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub packets: Vec<PacketRecord>,
    pub static_features: StaticFeatures,
    pub protocol_tag: String,
    /// Ground-truth configuration id; empty when unknown.
    pub config_tag: String,
    pub seed: u64,
}

impl Trace {
    /// Builds a trace from (send_time, size, delay) triples: fills spacings,
    /// receive ranks and static features.
    pub fn from_outcomes(
        outcomes: impl IntoIterator<Item = (f64, u32, Delay)>,
        protocol_tag: impl Into<String>,
        config_tag: impl Into<String>,
        seed: u64,
    ) -> Result<Trace> {
        let mut packets = Vec::new();
        let mut prev: Option<f64> = None;
        for (send_time, size, delay) in outcomes {
            let spacing = match prev {
                Some(p) if send_time < p => return Err(Error::NonMonotoneSend { prev: p, next: send_time }),
                Some(p) => send_time - p,
                None => 0.0,
            };
            prev = Some(send_time);
            packets.push(PacketRecord { send_time, size, spacing, delay, recv_rank: None });
        }
        if packets.is_empty() {
            return Err(Error::EmptyTrace);
        }
        let ranks = receive_ranks(&packets);
        for (p, r) in packets.iter_mut().zip(ranks) {
            p.recv_rank = r;
        }
        let static_features = compute_static_features_of(&packets, DEFAULT_WINDOW_LEN)?;
        Ok(Trace { packets, static_features, protocol_tag: protocol_tag.into(), config_tag: config_tag.into(), seed })
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.packets.last().map_or(0.0, |p| p.send_time)
    }

    pub fn delivered(&self) -> impl Iterator<Item = &PacketRecord> {
        self.packets.iter().filter(|p| !p.delay.is_drop())
    }

    pub fn n_dropped(&self) -> usize {
        self.packets.iter().filter(|p| p.delay.is_drop()).count()
    }

    /// Checks the structural invariants of a trace.
    pub fn validate(&self) -> Result<()> {
        if self.packets.is_empty() {
            return Err(Error::EmptyTrace);
        }
        let mut prev: Option<f64> = None;
        for (i, p) in self.packets.iter().enumerate() {
            if !(p.send_time >= 0.0) || !p.send_time.is_finite() {
                return Err(Error::InvalidTrace(format!("packet {i}: bad send time {}", p.send_time)));
            }
            if let Some(prev) = prev {
                if p.send_time < prev {
                    return Err(Error::NonMonotoneSend { prev, next: p.send_time });
                }
                if (p.spacing - (p.send_time - prev)).abs() > 1e-9 {
                    return Err(Error::InvalidTrace(format!("packet {i}: spacing disagrees with send times")));
                }
            } else if p.spacing != 0.0 {
                return Err(Error::InvalidTrace("first packet must have zero spacing".into()));
            }
            if let Delay::Delivered(d) = p.delay {
                if !(d > 0.0) || !d.is_finite() {
                    return Err(Error::InvalidTrace(format!("packet {i}: non-positive delay {d}")));
                }
            }
            prev = Some(p.send_time);
        }
        if receive_ranks(&self.packets) != self.packets.iter().map(|p| p.recv_rank).collect::<Vec<_>>() {
            return Err(Error::InvalidTrace("recv_rank inconsistent with arrival times".into()));
        }
        self.static_features.validate()
    }
}

/// Arrival order of delivered packets, sorting by `send_time + delay` with
/// ties broken by send order. Dropped packets get `None`.
pub fn receive_ranks(packets: &[PacketRecord]) -> Vec<Option<u32>> {
    let mut order: Vec<(f64, usize)> =
        packets.iter().enumerate().filter_map(|(i, p)| p.arrival_time().map(|a| (a, i))).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut ranks = vec![None; packets.len()];
    for (rank, (_, i)) in order.into_iter().enumerate() {
        ranks[i] = Some(rank as u32);
    }
    ranks
}

/// Percentile with linear interpolation between order statistics.
/// `q` in [0, 1]; the input need not be sorted.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(percentile_sorted(&v, q))
}

pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn compute_static_features(trace: &Trace) -> Result<StaticFeatures> {
    compute_static_features_of(&trace.packets, DEFAULT_WINDOW_LEN)
}

pub fn compute_static_features_of(packets: &[PacketRecord], window_len: f64) -> Result<StaticFeatures> {
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for d in packets.iter().filter_map(|p| p.delay.seconds()) {
        y_min = y_min.min(d);
        y_max = y_max.max(d);
    }
    if !y_min.is_finite() {
        return Err(Error::NoDeliveredPackets);
    }
    let grid = assign_windows(packets, window_len);
    let mut bits = vec![0.0; grid.n_windows];
    for (p, &w) in packets.iter().zip(&grid.assignment) {
        if !p.delay.is_drop() {
            bits[w] += f64::from(p.size) * 8.0;
        }
    }
    let rates: Vec<f64> = bits.iter().map(|b| b / window_len).collect();
    let p95_throughput = percentile(&rates, 0.95).unwrap_or(0.0);
    Ok(StaticFeatures { y_min, y_max, p95_throughput })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(sends: &[f64], delays: &[Option<f64>]) -> Trace {
        Trace::from_outcomes(sends.iter().zip(delays).map(|(&s, &d)| (s, 1500, Delay::from(d))), "test", "", 0).unwrap()
    }

    #[test]
    fn min_max_over_delivered() {
        let t = trace(&[0.0, 0.01, 0.02, 0.03], &[Some(0.02), Some(0.05), None, Some(0.03)]);
        assert_eq!(t.static_features.y_min, 0.02);
        assert_eq!(t.static_features.y_max, 0.05);
    }

    #[test]
    fn single_packet_throughput() {
        let t = trace(&[0.0], &[Some(0.01)]);
        assert!((t.static_features.p95_throughput - 120_000.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_rate_percentile() {
        // 1 Mbps: 1250 bytes every 10 ms.
        let sends: Vec<f64> = (0..1000).map(|i| i as f64 * 0.01).collect();
        let outcomes = sends.iter().map(|&s| (s, 1250, Delay::Delivered(0.02)));
        let t = Trace::from_outcomes(outcomes, "cbr", "", 0).unwrap();
        assert!((t.static_features.p95_throughput - 1e6).abs() < 1e-6);
    }

    #[test]
    fn all_dropped_is_an_error() {
        let r = Trace::from_outcomes([(0.0, 1500, Delay::Drop)], "x", "", 0);
        assert!(matches!(r, Err(Error::NoDeliveredPackets)));
    }

    #[test]
    fn ranks_follow_arrival_times_with_send_order_ties() {
        // Packets 0 and 2 both arrive at 0.75; send order decides.
        let t = trace(&[0.0, 0.25, 0.5], &[Some(0.75), Some(0.25), Some(0.25)]);
        let ranks: Vec<_> = t.packets.iter().map(|p| p.recv_rank).collect();
        assert_eq!(ranks, vec![Some(1), Some(0), Some(2)]);
        t.validate().unwrap();
    }

    #[test]
    fn first_spacing_is_zero() {
        let t = trace(&[0.5, 0.7], &[Some(0.1), Some(0.1)]);
        assert_eq!(t.packets[0].spacing, 0.0);
        assert!((t.packets[1].spacing - 0.2).abs() < 1e-15);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 0.5), Some(2.5));
        assert_eq!(percentile(&[7.0], 0.95), Some(7.0));
        assert_eq!(percentile(&[], 0.5), None);
    }
}
