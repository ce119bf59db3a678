//! Discrete-event single-bottleneck FIFO path with on/off cross traffic.
//!
//! Packets reach the bottleneck at their send time, wait behind everything
//! already in the buffer, are serialized at the link bandwidth and then
//! travel `prop_delay` to the receiver. The buffer holds `buffer_capacity`
//! packets including the one in service; arrivals to a full buffer are
//! tail-dropped. A packet's fate depends only on earlier arrivals, so the
//! outcome of each sender packet is known the moment it is submitted.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Dataset, SplitTag};
use crate::protocols::{drive, make_sender, Outcome, PathEnvironment, SenderKind, SenderParams};
use crate::rng::{derive_seed, stream, StreamRng};
use crate::trace::Trace;

/// Slack when comparing a departure against an arrival instant: a packet
/// that departs at the arrival instant has already freed its slot.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossSegment {
    pub start: f64,
    pub end: f64,
    /// bits/s
    pub rate: f64,
}

/// On/off constant-bit-rate cross traffic.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossTrafficSchedule {
    pub segments: Vec<CrossSegment>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossTrafficParams {
    pub mean_on: f64,
    pub mean_off: f64,
    /// Upper end of the uniform rate draw, as a fraction of the bandwidth.
    pub max_rate_fraction: f64,
}

impl Default for CrossTrafficParams {
    fn default() -> Self {
        CrossTrafficParams { mean_on: 2.0, mean_off: 2.0, max_rate_fraction: 0.8 }
    }
}

impl CrossTrafficSchedule {
    pub fn none() -> Self {
        CrossTrafficSchedule::default()
    }

    /// Alternating off/on periods with exponential durations; each on period
    /// carries a uniform rate in `[0, max_rate_fraction * bandwidth]`.
    pub fn generate(params: &CrossTrafficParams, bandwidth: f64, duration: f64, rng: &mut StreamRng) -> Self {
        let on = Exp::new(1.0 / params.mean_on).expect("positive mean");
        let off = Exp::new(1.0 / params.mean_off).expect("positive mean");
        let mut segments = Vec::new();
        // Start in a random phase.
        let mut t = if rng.gen_bool(0.5) { 0.0 } else { off.sample(rng) };
        while t < duration {
            let end = (t + on.sample(rng)).min(duration);
            let rate = rng.gen_range(0.0..=params.max_rate_fraction) * bandwidth;
            if end > t && rate > 0.0 {
                segments.push(CrossSegment { start: t, end, rate });
            }
            t = end + off.sample(rng);
        }
        CrossTrafficSchedule { segments }
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev_end = f64::NEG_INFINITY;
        for s in &self.segments {
            if !(s.start >= prev_end && s.end >= s.start && s.rate >= 0.0) {
                return Err(Error::InvalidConfig(format!("bad cross-traffic segment {s:?}")));
            }
            prev_end = s.end;
        }
        Ok(())
    }
}

/// Lazily enumerates CROSS packet arrival instants.
#[derive(Clone, Debug)]
pub struct CrossArrivals {
    segments: Vec<CrossSegment>,
    seg: usize,
    k: u64,
    mtu_bits: f64,
}

impl CrossArrivals {
    pub fn new(schedule: &CrossTrafficSchedule, mtu: u32) -> Self {
        CrossArrivals { segments: schedule.segments.clone(), seg: 0, k: 0, mtu_bits: f64::from(mtu) * 8.0 }
    }

    pub fn peek(&mut self) -> Option<f64> {
        while let Some(s) = self.segments.get(self.seg) {
            if s.rate > 0.0 {
                let t = s.start + self.k as f64 * self.mtu_bits / s.rate;
                if t < s.end {
                    return Some(t);
                }
            }
            self.seg += 1;
            self.k = 0;
        }
        None
    }

    pub fn advance(&mut self) {
        self.k += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    /// bits/s
    pub bandwidth: f64,
    /// One-way propagation delay, seconds.
    pub prop_delay: f64,
    /// Packets, including the one in service.
    pub buffer_capacity: u32,
    pub mtu: u32,
    pub cross_schedule: CrossTrafficSchedule,
    pub seed: u64,
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || self.buffer_capacity < 1 || !(self.prop_delay >= 0.0) || self.mtu == 0 {
            return Err(Error::InvalidConfig(format!(
                "bandwidth > 0, buffer_capacity >= 1, prop_delay >= 0 required (got {}, {}, {})",
                self.bandwidth, self.buffer_capacity, self.prop_delay
            )));
        }
        self.cross_schedule.validate()
    }

    pub fn transmission_time(&self, size: u32) -> f64 {
        f64::from(size) * 8.0 / self.bandwidth
    }

    /// Time to drain a full buffer of MTU-sized packets.
    pub fn buffer_drain_time(&self) -> f64 {
        f64::from(self.buffer_capacity) * self.transmission_time(self.mtu)
    }

    /// Drop feedback delay: four propagation delays plus a full-buffer drain.
    pub fn drop_timeout(&self) -> f64 {
        4.0 * self.prop_delay + self.buffer_drain_time()
    }
}

/// FIFO tail-drop queue tracked by the departure times of packets in the
/// system.
#[derive(Clone, Debug)]
pub struct BottleneckQueue {
    bandwidth: f64,
    capacity: usize,
    departures: VecDeque<f64>,
}

impl BottleneckQueue {
    pub fn new(bandwidth: f64, capacity: u32) -> Self {
        BottleneckQueue { bandwidth, capacity: capacity as usize, departures: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.departures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.departures.is_empty()
    }

    /// Time the link finishes the last packet in the system.
    pub fn busy_until(&self) -> Option<f64> {
        self.departures.back().copied()
    }

    /// Offers a packet at time `t`; returns its departure time or `None` when
    /// tail-dropped.
    pub fn arrive(&mut self, t: f64, size: u32) -> Option<f64> {
        while self.departures.front().is_some_and(|&d| d <= t + TIME_EPS) {
            self.departures.pop_front();
        }
        if self.departures.len() >= self.capacity {
            return None;
        }
        let start = self.departures.back().map_or(t, |&d| d.max(t));
        let departure = start + f64::from(size) * 8.0 / self.bandwidth;
        self.departures.push_back(departure);
        Some(departure)
    }
}

/// One packet of an open-loop schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arrival {
    pub time: f64,
    pub size: u32,
    pub cross: bool,
}

/// Runs a fixed, time-ordered schedule through the bottleneck. Returns the
/// queueing-plus-transmission delay of every arrival (`None` for drops).
pub fn run_schedule(bandwidth: f64, capacity: u32, arrivals: &[Arrival]) -> Vec<Option<f64>> {
    let mut q = BottleneckQueue::new(bandwidth, capacity);
    arrivals.iter().map(|a| q.arrive(a.time, a.size).map(|d| d - a.time)).collect()
}

/// Ground-truth environment for the closed-loop driver.
#[derive(Clone, Debug)]
pub struct GroundTruthPath {
    config: PathConfig,
    queue: BottleneckQueue,
    cross: CrossArrivals,
}

impl GroundTruthPath {
    pub fn new(config: PathConfig) -> Result<Self> {
        config.validate()?;
        let queue = BottleneckQueue::new(config.bandwidth, config.buffer_capacity);
        let cross = CrossArrivals::new(&config.cross_schedule, config.mtu);
        Ok(GroundTruthPath { config, queue, cross })
    }
}

impl PathEnvironment for GroundTruthPath {
    fn submit(&mut self, send_time: f64, size: u32) -> Result<Outcome> {
        // Cross packets arriving at the same instant go first.
        while let Some(ct) = self.cross.peek() {
            if ct > send_time {
                break;
            }
            self.queue.arrive(ct, self.config.mtu);
            self.cross.advance();
        }
        Ok(match self.queue.arrive(send_time, size) {
            Some(dep) => Outcome::Delivered(dep - send_time + self.config.prop_delay),
            None => Outcome::Dropped,
        })
    }

    fn feedback_time(&self, send_time: f64, outcome: Outcome) -> f64 {
        match outcome {
            Outcome::Delivered(d) => send_time + d + self.config.prop_delay,
            Outcome::Dropped => send_time + self.config.drop_timeout(),
        }
    }
}

pub fn run_ground_truth(
    config: &PathConfig,
    kind: SenderKind,
    params: &SenderParams,
    duration: f64,
    config_tag: &str,
) -> Result<Trace> {
    let mut env = GroundTruthPath::new(config.clone())?;
    let mut sender = make_sender(kind, params, config.seed)?;
    drive(sender.as_mut(), &mut env, duration, config_tag, config.seed)
}

/// Parameter ranges of one network scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBounds {
    /// bits/s
    pub bandwidth: (f64, f64),
    /// seconds
    pub prop_delay: (f64, f64),
    /// packets
    pub buffer: (u32, u32),
}

impl ScenarioBounds {
    pub fn scenario(id: u8) -> Result<ScenarioBounds> {
        Ok(match id {
            1 => ScenarioBounds { bandwidth: (40e6, 50e6), prop_delay: (0.020, 0.050), buffer: (20, 50) },
            2 => ScenarioBounds { bandwidth: (20e6, 30e6), prop_delay: (0.090, 0.120), buffer: (100, 150) },
            3 => ScenarioBounds { bandwidth: (1e6, 10e6), prop_delay: (0.150, 0.200), buffer: (300, 500) },
            other => return Err(Error::InvalidScenario(other)),
        })
    }

    pub fn scale_bandwidth(mut self, factor: f64) -> Self {
        self.bandwidth = (self.bandwidth.0 * factor, self.bandwidth.1 * factor);
        self
    }

    pub fn sample(&self, mtu: u32, seed: u64, rng: &mut StreamRng) -> PathConfig {
        PathConfig {
            bandwidth: rng.gen_range(self.bandwidth.0..=self.bandwidth.1),
            prop_delay: rng.gen_range(self.prop_delay.0..=self.prop_delay.1),
            buffer_capacity: rng.gen_range(self.buffer.0..=self.buffer.1),
            mtu,
            cross_schedule: CrossTrafficSchedule::none(),
            seed,
        }
    }
}

/// Uniform draw inside one scenario row; the cross-traffic schedule is left
/// empty.
pub fn sample_path_config(scenario: u8, rng: &mut StreamRng) -> Result<PathConfig> {
    let bounds = ScenarioBounds::scenario(scenario)?;
    let seed = rng.gen();
    Ok(bounds.sample(1500, seed, rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSpec {
    /// (scenario id, bounds) pairs.
    pub scenarios: Vec<(u8, ScenarioBounds)>,
    pub n_configs: usize,
    pub n_patterns: usize,
    pub sender: SenderKind,
    pub sender_params: SenderParams,
    pub cross: CrossTrafficParams,
    pub duration: f64,
    pub mtu: u32,
    pub seed: u64,
}

impl GenerateSpec {
    /// Desk-scale defaults: scenarios 1–3, 4 configs × 10 patterns each.
    pub fn desk(sender: SenderKind, seed: u64) -> GenerateSpec {
        GenerateSpec {
            scenarios: (1..=3).map(|s| (s, ScenarioBounds::scenario(s).expect("valid"))).collect(),
            n_configs: 4,
            n_patterns: 10,
            sender,
            sender_params: SenderParams::default(),
            cross: CrossTrafficParams::default(),
            duration: 10.0,
            mtu: 1500,
            seed,
        }
    }

    pub fn n_traces(&self) -> usize {
        self.scenarios.len() * self.n_configs * self.n_patterns
    }

    /// The path configuration of one (scenario, config, pattern) cell.
    /// Link parameters depend only on the seed, scenario and config index,
    /// so every protocol sees the same links and cross traffic.
    pub fn path_config(&self, scenario_idx: usize, config_idx: usize, pattern_idx: usize) -> (PathConfig, String) {
        let (sid, bounds) = self.scenarios[scenario_idx];
        let link_seed = derive_seed(self.seed, "link", (scenario_idx * 1_000_000 + config_idx) as u64);
        let mut link_rng = stream(link_seed, "link", 0);
        let mut cfg = bounds.sample(self.mtu, link_seed, &mut link_rng);
        let pattern_seed = derive_seed(link_seed, "pattern", pattern_idx as u64);
        let mut prng = stream(pattern_seed, "cross", 0);
        cfg.cross_schedule = CrossTrafficSchedule::generate(&self.cross, cfg.bandwidth, self.duration, &mut prng);
        cfg.seed = pattern_seed;
        (cfg, format!("s{sid}-c{config_idx}"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() || self.n_configs == 0 || self.n_patterns == 0 {
            return Err(Error::InvalidConfig("scenario, config and pattern counts must be >= 1".into()));
        }
        if !(self.duration > 0.0) {
            return Err(Error::InvalidConfig("duration must be positive".into()));
        }
        self.sender_params.validate()
    }
}

/// Generates the Cartesian product scenarios × configs × patterns, in that
/// order. `map` lets the caller choose how to run the independent cells
/// (sequentially or on a worker pool) without changing the output.
pub fn generate_dataset_with<M>(spec: &GenerateSpec, map: M) -> Result<Dataset>
where
    M: FnOnce(
        Vec<(PathConfig, String)>,
        &(dyn Fn(&(PathConfig, String)) -> Result<Trace> + Sync),
    ) -> Vec<Result<Trace>>,
{
    spec.validate()?;
    let mut cells = Vec::with_capacity(spec.n_traces());
    for s in 0..spec.scenarios.len() {
        for c in 0..spec.n_configs {
            for p in 0..spec.n_patterns {
                cells.push(spec.path_config(s, c, p));
            }
        }
    }
    let run = |(cfg, tag): &(PathConfig, String)| {
        let params = SenderParams { mtu: spec.mtu, ..spec.sender_params.clone() };
        run_ground_truth(cfg, spec.sender, &params, spec.duration, tag)
    };
    let traces = map(cells, &run).into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(traces, SplitTag::Train))
}

pub fn generate_dataset(spec: &GenerateSpec) -> Result<Dataset> {
    generate_dataset_with(spec, |cells, run| cells.iter().map(run).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::SenderParams;

    fn quiet(bandwidth: f64, prop: f64, cap: u32) -> PathConfig {
        PathConfig {
            bandwidth,
            prop_delay: prop,
            buffer_capacity: cap,
            mtu: 1500,
            cross_schedule: CrossTrafficSchedule::none(),
            seed: 1,
        }
    }

    #[test]
    fn empty_queue_delay_is_closed_form() {
        let cfg = quiet(12e6, 0.03, 50);
        let params = SenderParams { rate_pps: 50.0, ..Default::default() };
        let t = run_ground_truth(&cfg, SenderKind::ConstantRate, &params, 1.0, "").unwrap();
        for p in &t.packets {
            let d = p.delay.seconds().unwrap();
            assert!((d - (0.03 + 0.001)).abs() < 1e-12, "{d}");
        }
    }

    #[test]
    fn capacity_one_simultaneous_arrivals_drop_one() {
        let arrivals =
            [Arrival { time: 0.0, size: 1500, cross: false }, Arrival { time: 0.0, size: 1500, cross: false }];
        let out = run_schedule(1e6, 1, &arrivals);
        assert_eq!(out.iter().filter(|o| o.is_none()).count(), 1);
    }

    #[test]
    fn scenario_bounds() {
        let mut rng = stream(3, "cfg", 0);
        for _ in 0..200 {
            let c1 = sample_path_config(1, &mut rng).unwrap();
            assert!((40e6..=50e6).contains(&c1.bandwidth));
            assert!((0.020..=0.050).contains(&c1.prop_delay));
            assert!((20..=50).contains(&c1.buffer_capacity));
            let c3 = sample_path_config(3, &mut rng).unwrap();
            assert!((300..=500).contains(&c3.buffer_capacity));
            assert!((1e6..=10e6).contains(&c3.bandwidth));
        }
        assert!(matches!(sample_path_config(4, &mut rng), Err(Error::InvalidScenario(4))));
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_path_config(2, &mut stream(9, "cfg", 0)).unwrap();
        let b = sample_path_config(2, &mut stream(9, "cfg", 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cross_arrivals_follow_segments() {
        let sched = CrossTrafficSchedule {
            segments: vec![
                CrossSegment { start: 0.0, end: 0.01, rate: 1.2e6 },
                CrossSegment { start: 1.0, end: 1.005, rate: 2.4e6 },
            ],
        };
        let mut a = CrossArrivals::new(&sched, 1500);
        let mut times = Vec::new();
        while let Some(t) = a.peek() {
            times.push(t);
            a.advance();
        }
        // One packet per segment: the second slot of each lands on `end`.
        assert_eq!(times, vec![0.0, 1.0]);
    }

    #[test]
    fn generated_schedule_is_ordered() {
        let mut rng = stream(5, "x", 0);
        let s = CrossTrafficSchedule::generate(&CrossTrafficParams::default(), 10e6, 30.0, &mut rng);
        s.validate().unwrap();
        assert!(s.segments.iter().all(|seg| seg.rate <= 8e6 && seg.end <= 30.0));
    }

    #[test]
    fn desk_spec_counts() {
        assert_eq!(GenerateSpec::desk(SenderKind::CubicLike, 0).n_traces(), 120);
        let full = GenerateSpec { n_configs: 14, n_patterns: 70, ..GenerateSpec::desk(SenderKind::CubicLike, 0) };
        assert_eq!(full.n_traces(), 2940);
    }
}
