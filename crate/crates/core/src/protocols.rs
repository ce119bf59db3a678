//! Closed-loop congestion-control senders and the driver loop that connects
//! a sender to a path environment (ground truth or learned).
//!
//! The senders are deliberately simplified window-based controllers: no SACK,
//! no fast-recovery state machine. Loss is detected from explicit drop
//! feedback, from three later packets being acknowledged first, or from the
//! retransmission timer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Delay, Trace};

/// Environment answer for one packet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Outcome {
    Delivered(f64),
    Dropped,
}

impl From<Outcome> for Delay {
    fn from(o: Outcome) -> Delay {
        match o {
            Outcome::Delivered(d) => Delay::Delivered(d),
            Outcome::Dropped => Delay::Drop,
        }
    }
}

/// A path that answers every packet with a delay or a drop.
pub trait PathEnvironment {
    /// Packets arrive in non-decreasing send-time order.
    fn submit(&mut self, send_time: f64, size: u32) -> Result<Outcome>;

    /// Time at which the sender learns the outcome of a packet.
    fn feedback_time(&self, send_time: f64, outcome: Outcome) -> f64;
}

pub trait Sender {
    /// Earliest time at or after `now` when the sender wants to transmit,
    /// with the packet size, or `None` while it is window-limited.
    fn next_send(&mut self, now: f64) -> Option<(f64, u32)>;

    fn on_sent(&mut self, id: u64, send_time: f64, size: u32);

    fn on_feedback(&mut self, id: u64, outcome: Outcome, now: f64);

    /// Pending retransmission-timer deadline, if any.
    fn next_timer(&self) -> Option<f64> {
        None
    }

    fn on_timer(&mut self, _now: f64) {}

    fn protocol_tag(&self) -> &str;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SenderKind {
    RenoAimd,
    CubicLike,
    VegasLike,
    LedbatLike,
    ConstantRate,
}

impl SenderKind {
    pub fn tag(self) -> &'static str {
        match self {
            SenderKind::RenoAimd => "reno",
            SenderKind::CubicLike => "cubic",
            SenderKind::VegasLike => "vegas",
            SenderKind::LedbatLike => "ledbat",
            SenderKind::ConstantRate => "constant",
        }
    }

    pub fn parse(s: &str) -> Option<SenderKind> {
        Some(match s.to_ascii_lowercase().as_str() {
            "reno" | "newreno" | "reno-aimd" | "aimd" => SenderKind::RenoAimd,
            "cubic" | "cubic-like" => SenderKind::CubicLike,
            "vegas" | "vegas-like" => SenderKind::VegasLike,
            "ledbat" | "ledbat-like" => SenderKind::LedbatLike,
            "constant" | "constant-rate" | "cbr" => SenderKind::ConstantRate,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SenderParams {
    pub mtu: u32,
    /// Initial congestion window in packets.
    pub init_cwnd: f64,
    /// Receiver window: upper bound on the congestion window, packets.
    pub max_cwnd: f64,
    /// RTT assumed before the first sample, seconds.
    pub init_rtt: f64,
    /// Retransmission timeout before the first RTT sample, seconds.
    pub init_rto: f64,
    /// Lower bound of the retransmission timeout, seconds.
    pub min_rto: f64,
    /// Cubic scaling constant C.
    pub cubic_c: f64,
    /// Cubic multiplicative decrease factor.
    pub cubic_beta: f64,
    /// Vegas thresholds in packets queued.
    pub vegas_alpha: f64,
    pub vegas_beta: f64,
    pub vegas_gamma: f64,
    /// LEDBAT queueing-delay target, seconds.
    pub ledbat_target: f64,
    pub ledbat_gain: f64,
    /// Constant-rate sender, packets per second.
    pub rate_pps: f64,
}

impl Default for SenderParams {
    fn default() -> Self {
        SenderParams {
            mtu: 1500,
            init_cwnd: 2.0,
            max_cwnd: 256.0,
            init_rtt: 0.1,
            init_rto: 1.0,
            min_rto: 0.2,
            cubic_c: 0.4,
            cubic_beta: 0.7,
            vegas_alpha: 2.0,
            vegas_beta: 4.0,
            vegas_gamma: 1.0,
            ledbat_target: 0.025,
            ledbat_gain: 1.0,
            rate_pps: 100.0,
        }
    }
}

impl SenderParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.init_cwnd,
            self.max_cwnd,
            self.init_rtt,
            self.init_rto,
            self.min_rto,
            self.cubic_c,
            self.cubic_beta,
            self.vegas_alpha,
            self.vegas_beta,
            self.vegas_gamma,
            self.ledbat_target,
            self.ledbat_gain,
            self.rate_pps,
        ];
        if self.mtu == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig(format!("sender parameters must be positive: {self:?}")));
        }
        if self.cubic_beta >= 1.0 || self.vegas_alpha > self.vegas_beta || self.init_cwnd > self.max_cwnd {
            return Err(Error::InvalidConfig(
                "cubic_beta < 1, vegas_alpha <= vegas_beta and init_cwnd <= max_cwnd required".into(),
            ));
        }
        Ok(())
    }
}

/// Builds a sender. The senders themselves are deterministic; `seed` is kept
/// for interface symmetry and recorded nowhere else.
pub fn make_sender(kind: SenderKind, params: &SenderParams, _seed: u64) -> Result<Box<dyn Sender + Send>> {
    params.validate()?;
    Ok(match kind {
        SenderKind::ConstantRate => Box::new(ConstantRateSender::new(params)),
        _ => Box::new(WindowSender::new(kind, params)),
    })
}

/// EWMA round-trip estimator: gain 1/8 on the mean, 1/4 on the deviation.
#[derive(Clone, Debug)]
pub struct RttEstimator {
    pub srtt: Option<f64>,
    pub rttvar: f64,
    pub min_rtt: f64,
    min_rto: f64,
    init_rtt: f64,
    init_rto: f64,
}

impl RttEstimator {
    pub fn new(init_rtt: f64, min_rto: f64, init_rto: f64) -> Self {
        RttEstimator { srtt: None, rttvar: init_rtt / 2.0, min_rtt: f64::INFINITY, min_rto, init_rtt, init_rto }
    }

    pub fn update(&mut self, sample: f64) {
        self.min_rtt = self.min_rtt.min(sample);
        match self.srtt {
            None => {
                self.srtt = Some(sample);
                self.rttvar = sample / 2.0;
            }
            Some(s) => {
                self.rttvar = 0.75 * self.rttvar + 0.25 * (s - sample).abs();
                self.srtt = Some(0.875 * s + 0.125 * sample);
            }
        }
    }

    pub fn smoothed(&self) -> f64 {
        self.srtt.unwrap_or(self.init_rtt)
    }

    pub fn rto(&self) -> f64 {
        if self.srtt.is_none() {
            return self.init_rto.max(self.min_rto);
        }
        (self.smoothed() + 4.0 * self.rttvar).max(self.min_rto)
    }
}

#[derive(Clone, Debug)]
pub struct ConstantRateSender {
    interval: f64,
    mtu: u32,
    next: f64,
}

impl ConstantRateSender {
    pub fn new(params: &SenderParams) -> Self {
        ConstantRateSender { interval: 1.0 / params.rate_pps, mtu: params.mtu, next: 0.0 }
    }
}

impl Sender for ConstantRateSender {
    fn next_send(&mut self, now: f64) -> Option<(f64, u32)> {
        Some((self.next.max(now), self.mtu))
    }

    fn on_sent(&mut self, id: u64, _send_time: f64, _size: u32) {
        // Multiples of the interval, so spacings do not accumulate drift.
        self.next = (id + 1) as f64 * self.interval;
    }

    fn on_feedback(&mut self, _id: u64, _outcome: Outcome, _now: f64) {}

    fn protocol_tag(&self) -> &str {
        SenderKind::ConstantRate.tag()
    }
}

#[derive(Clone, Debug)]
struct Outstanding {
    send_time: f64,
    /// Later packets acknowledged before this one.
    late: u32,
}

/// Controller-specific state.
#[derive(Clone, Debug)]
enum Policy {
    Reno { acked: f64 },
    Cubic { w_max: f64, epoch_start: Option<f64>, k: f64 },
    Vegas { round_end: u64, round_min_rtt: f64 },
    Ledbat { base_owd: f64 },
}

/// Paced, window-limited sender shared by every window-based controller.
#[derive(Clone, Debug)]
pub struct WindowSender {
    kind: SenderKind,
    params: SenderParams,
    pub cwnd: f64,
    pub ssthresh: f64,
    pub rtt: RttEstimator,
    policy: Policy,
    outstanding: BTreeMap<u64, Outstanding>,
    last_send: Option<f64>,
    next_id: u64,
    /// Losses of packets at or below this id belong to the current episode.
    recovery_point: Option<u64>,
}

impl WindowSender {
    pub fn new(kind: SenderKind, params: &SenderParams) -> Self {
        let policy = match kind {
            SenderKind::RenoAimd => Policy::Reno { acked: 0.0 },
            SenderKind::CubicLike => Policy::Cubic { w_max: 0.0, epoch_start: None, k: 0.0 },
            SenderKind::VegasLike => Policy::Vegas { round_end: 0, round_min_rtt: f64::INFINITY },
            SenderKind::LedbatLike => Policy::Ledbat { base_owd: f64::INFINITY },
            SenderKind::ConstantRate => panic!("constant-rate sender is not window based"),
        };
        WindowSender {
            kind,
            params: params.clone(),
            cwnd: params.init_cwnd,
            ssthresh: f64::INFINITY,
            rtt: RttEstimator::new(params.init_rtt, params.min_rto, params.init_rto),
            policy,
            outstanding: BTreeMap::new(),
            last_send: None,
            next_id: 0,
            recovery_point: None,
        }
    }

    pub fn in_flight(&self) -> usize {
        self.outstanding.len()
    }

    fn in_slow_start(&self) -> bool {
        self.cwnd < self.ssthresh
    }

    fn pacing_interval(&self) -> f64 {
        let gain = if self.in_slow_start() { 2.0 } else { 1.25 };
        self.rtt.smoothed() / (self.cwnd.max(1.0) * gain)
    }

    /// Congestion-avoidance / slow-start growth for one acknowledged packet.
    fn on_ack(&mut self, id: u64, rtt_sample: f64, owd: f64, now: f64) {
        let srtt = self.rtt.smoothed();
        let min_rtt = self.rtt.min_rtt;
        let p = &self.params;
        match &mut self.policy {
            Policy::Reno { acked } => {
                if self.cwnd < self.ssthresh {
                    self.cwnd += 1.0;
                } else {
                    // +1 packet once a full window has been acknowledged.
                    *acked += 1.0;
                    if *acked >= self.cwnd.floor() {
                        *acked = 0.0;
                        self.cwnd += 1.0;
                    }
                }
            }
            Policy::Cubic { w_max, epoch_start, k } => {
                if self.cwnd < self.ssthresh {
                    self.cwnd += 1.0;
                } else {
                    let start = *epoch_start.get_or_insert_with(|| {
                        if *w_max < self.cwnd {
                            *w_max = self.cwnd;
                            *k = 0.0;
                        }
                        now
                    });
                    let t = now - start + srtt;
                    let target = p.cubic_c * (t - *k).powi(3) + *w_max;
                    if target > self.cwnd {
                        self.cwnd += ((target - self.cwnd) / self.cwnd).min(1.0);
                    } else {
                        self.cwnd += 0.01 / self.cwnd;
                    }
                }
            }
            Policy::Vegas { round_end, round_min_rtt } => {
                *round_min_rtt = round_min_rtt.min(rtt_sample);
                if id >= *round_end {
                    // Once per round trip.
                    let diff = self.cwnd * (1.0 - min_rtt / *round_min_rtt);
                    if self.cwnd < self.ssthresh {
                        if diff > p.vegas_gamma {
                            self.ssthresh = self.cwnd;
                        } else {
                            self.cwnd *= 2.0;
                        }
                    } else if diff < p.vegas_alpha {
                        self.cwnd += 1.0;
                    } else if diff > p.vegas_beta {
                        self.cwnd = (self.cwnd - 1.0).max(2.0);
                    }
                    *round_end = self.next_id;
                    *round_min_rtt = f64::INFINITY;
                }
            }
            Policy::Ledbat { base_owd } => {
                *base_owd = base_owd.min(owd);
                let queuing = owd - *base_owd;
                let off_target = (p.ledbat_target - queuing) / p.ledbat_target;
                self.cwnd += (p.ledbat_gain * off_target / self.cwnd).min(1.0);
                self.cwnd = self.cwnd.max(1.0);
            }
        }
        self.cwnd = self.cwnd.min(self.params.max_cwnd);
    }

    fn on_loss(&mut self, id: u64, now: f64) {
        if self.recovery_point.is_some_and(|r| id <= r) {
            return;
        }
        self.recovery_point = Some(self.next_id.saturating_sub(1));
        match &mut self.policy {
            Policy::Cubic { w_max, epoch_start, k } => {
                *w_max = self.cwnd;
                self.cwnd = (self.cwnd * self.params.cubic_beta).max(1.0);
                *k = (*w_max * (1.0 - self.params.cubic_beta) / self.params.cubic_c).cbrt();
                *epoch_start = Some(now);
            }
            Policy::Vegas { .. } => {
                self.cwnd = (self.cwnd / 2.0).max(2.0);
            }
            Policy::Reno { acked } => {
                *acked = 0.0;
                self.cwnd = (self.cwnd / 2.0).max(1.0);
            }
            Policy::Ledbat { .. } => {
                self.cwnd = (self.cwnd / 2.0).max(1.0);
            }
        }
        self.ssthresh = self.cwnd;
    }
}

impl Sender for WindowSender {
    fn next_send(&mut self, now: f64) -> Option<(f64, u32)> {
        if (self.outstanding.len() as f64) >= self.cwnd.max(1.0).floor() {
            return None;
        }
        let t = match self.last_send {
            Some(last) => now.max(last + self.pacing_interval()),
            None => now,
        };
        Some((t, self.params.mtu))
    }

    fn on_sent(&mut self, id: u64, send_time: f64, _size: u32) {
        self.outstanding.insert(id, Outstanding { send_time, late: 0 });
        self.last_send = Some(send_time);
        self.next_id = id + 1;
    }

    fn on_feedback(&mut self, id: u64, outcome: Outcome, now: f64) {
        let Some(entry) = self.outstanding.remove(&id) else {
            // Already declared lost.
            return;
        };
        match outcome {
            Outcome::Delivered(owd) => {
                let sample = now - entry.send_time;
                self.rtt.update(sample);
                self.on_ack(id, sample, owd, now);
                let mut lost = Vec::new();
                for (&older, o) in self.outstanding.range_mut(..id) {
                    o.late += 1;
                    if o.late >= 3 {
                        lost.push(older);
                    }
                }
                for older in lost {
                    self.outstanding.remove(&older);
                    self.on_loss(older, now);
                }
            }
            Outcome::Dropped => self.on_loss(id, now),
        }
    }

    fn next_timer(&self) -> Option<f64> {
        self.outstanding.values().map(|o| o.send_time).next().map(|oldest| oldest + self.rtt.rto())
    }

    fn on_timer(&mut self, now: f64) {
        let rto = self.rtt.rto();
        let expired: Vec<u64> =
            self.outstanding.iter().filter(|(_, o)| o.send_time + rto <= now).map(|(&id, _)| id).collect();
        if expired.is_empty() {
            return;
        }
        for id in &expired {
            self.outstanding.remove(id);
        }
        self.on_loss(expired[0], now);
        // Back to slow start after a timeout.
        self.cwnd = self.params.init_cwnd.min(self.cwnd);
    }

    fn protocol_tag(&self) -> &str {
        self.kind.tag()
    }
}

/// Runs the closed loop for `duration` seconds: the sender transmits, the
/// environment answers, and each answer reaches the sender at its feedback
/// time. Feedback is only ever delivered at or before the time of the next
/// transmission it could influence.
pub fn drive(
    sender: &mut dyn Sender,
    env: &mut dyn PathEnvironment,
    duration: f64,
    config_tag: &str,
    seed: u64,
) -> Result<Trace> {
    if !(duration > 0.0) {
        return Err(Error::InvalidConfig(format!("duration must be positive, got {duration}")));
    }
    // (feedback time, packet id) → outcome; ids break ties deterministically.
    let mut pending: BTreeMap<(OrdF64, u64), Outcome> = BTreeMap::new();
    let mut outcomes: Vec<(f64, u32, Delay)> = Vec::new();
    let mut now = 0.0f64;
    let mut last_send = f64::NEG_INFINITY;
    let mut last_feedback = f64::NEG_INFINITY;
    loop {
        let send = sender.next_send(now).filter(|(t, _)| *t < duration);
        let next_fb = pending.keys().next().map(|k| k.0 .0);
        let timer = sender.next_timer().filter(|t| *t < duration);
        let fb_or_timer = match (next_fb, timer) {
            (Some(f), Some(t)) => Some(f.min(t)),
            (f, t) => f.or(t),
        };
        match (send, fb_or_timer) {
            (Some((t, size)), e) if e.is_none_or(|e| t < e) => {
                if t < last_send || t < now {
                    return Err(Error::NonMonotoneSend { prev: last_send.max(now), next: t });
                }
                debug_assert!(last_feedback <= t);
                let id = outcomes.len() as u64;
                let outcome = env.submit(t, size)?;
                let fb = env.feedback_time(t, outcome);
                pending.insert((OrdF64(fb), id), outcome);
                sender.on_sent(id, t, size);
                outcomes.push((t, size, outcome.into()));
                last_send = t;
                now = t;
            }
            (_, Some(e)) if e < duration => {
                now = now.max(e);
                if next_fb == Some(e) {
                    let (key, outcome) = pending.pop_first().expect("pending feedback");
                    last_feedback = key.0 .0;
                    sender.on_feedback(key.1, outcome, now);
                } else {
                    sender.on_timer(now);
                }
            }
            _ => break,
        }
    }
    let protocol = sender.protocol_tag().to_string();
    Trace::from_outcomes(outcomes, protocol, config_tag, seed)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed delay, never drops; feedback one extra `delay` later.
    struct FixedDelay(f64);

    impl PathEnvironment for FixedDelay {
        fn submit(&mut self, _t: f64, _size: u32) -> Result<Outcome> {
            Ok(Outcome::Delivered(self.0))
        }
        fn feedback_time(&self, t: f64, outcome: Outcome) -> f64 {
            match outcome {
                Outcome::Delivered(d) => t + 2.0 * d,
                Outcome::Dropped => t + 1.0,
            }
        }
    }

    #[test]
    fn constant_rate_spacing() {
        let params = SenderParams { rate_pps: 100.0, ..Default::default() };
        let mut s = make_sender(SenderKind::ConstantRate, &params, 0).unwrap();
        let t = drive(s.as_mut(), &mut FixedDelay(0.05), 1.0, "", 0).unwrap();
        assert_eq!(t.len(), 100);
        for p in &t.packets[1..] {
            assert!((p.spacing - 0.01).abs() < 1e-12);
        }
    }

    #[test]
    fn reno_congestion_avoidance_adds_one_per_window() {
        let params = SenderParams::default();
        let mut s = WindowSender::new(SenderKind::RenoAimd, &params);
        s.cwnd = 10.0;
        s.ssthresh = 10.0;
        let mut id = 0;
        for k in 1..=5 {
            let window = s.cwnd as usize;
            for _ in 0..window {
                s.on_sent(id, 0.0, 1500);
                s.on_feedback(id, Outcome::Delivered(0.05), 0.1);
                id += 1;
            }
            assert_eq!(s.cwnd, 10.0 + k as f64);
        }
    }

    #[test]
    fn reno_halves_on_drop_with_floor() {
        let mut s = WindowSender::new(SenderKind::RenoAimd, &SenderParams::default());
        s.cwnd = 9.0;
        s.on_sent(0, 0.0, 1500);
        s.on_feedback(0, Outcome::Dropped, 1.0);
        assert_eq!(s.cwnd, 4.5);
        s.cwnd = 1.5;
        s.on_sent(1, 1.0, 1500);
        s.on_feedback(1, Outcome::Dropped, 2.0);
        assert_eq!(s.cwnd, 1.0);
    }

    #[test]
    fn one_reduction_per_loss_episode() {
        let mut s = WindowSender::new(SenderKind::RenoAimd, &SenderParams::default());
        s.cwnd = 16.0;
        for id in 0..4 {
            s.on_sent(id, 0.0, 1500);
        }
        for id in 0..4 {
            s.on_feedback(id, Outcome::Dropped, 1.0);
        }
        assert_eq!(s.cwnd, 8.0);
    }

    #[test]
    fn three_late_acks_declare_loss() {
        let mut s = WindowSender::new(SenderKind::RenoAimd, &SenderParams::default());
        s.cwnd = 20.0;
        s.ssthresh = 20.0;
        for id in 0..5 {
            s.on_sent(id, 0.0, 1500);
        }
        for id in 1..4 {
            s.on_feedback(id, Outcome::Delivered(0.05), 0.1);
        }
        assert_eq!(s.cwnd, 10.0);
        assert_eq!(s.in_flight(), 1);
    }

    #[test]
    fn cubic_reduces_by_beta() {
        let mut s = WindowSender::new(SenderKind::CubicLike, &SenderParams::default());
        s.cwnd = 100.0;
        s.on_sent(0, 0.0, 1500);
        s.on_feedback(0, Outcome::Dropped, 1.0);
        assert!((s.cwnd - 70.0).abs() < 1e-12);
    }

    #[test]
    fn drive_is_deterministic_and_causal() {
        let run = || {
            let mut s = make_sender(SenderKind::CubicLike, &SenderParams::default(), 3).unwrap();
            drive(s.as_mut(), &mut FixedDelay(0.03), 2.0, "x", 3).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.len() > 10);
        a.validate().unwrap();
    }

    #[test]
    fn window_sender_is_window_limited() {
        let mut s = WindowSender::new(SenderKind::RenoAimd, &SenderParams::default());
        assert!(s.next_send(0.0).is_some());
        s.on_sent(0, 0.0, 1500);
        s.on_sent(1, 0.0, 1500);
        assert!(s.next_send(0.0).is_none());
    }

    #[test]
    fn parse_kinds() {
        assert_eq!(SenderKind::parse("vegas"), Some(SenderKind::VegasLike));
        assert_eq!(SenderKind::parse("NewReno"), Some(SenderKind::RenoAimd));
        assert_eq!(SenderKind::parse("bbr"), None);
    }
}
