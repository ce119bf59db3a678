//! Distributional fidelity metrics between a reference dataset and a
//! generated one.

pub mod mmd;
pub mod reorder;
pub mod transport;
pub mod wasserstein;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{Dataset, Range};
use crate::trace::{percentile, Trace};

pub use mmd::{mmd_chunk_curve, mmd_rbf, normalized_packet_features, ChunkSpec};
pub use reorder::{reorder_cdf, reorder_fraction, window_reorder_fractions};
pub use transport::{assignment, transport_uniform};
pub use wasserstein::{wasserstein_1d, wasserstein_2d};

/// Trace-level aggregates used by the Wasserstein metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceAggregates {
    /// Delivered bits per second of sending time.
    pub throughput: f64,
    pub mean_delay: f64,
    pub p95_delay: f64,
}

/// Aggregates of one trace, or `None` when nothing was delivered.
pub fn trace_aggregates(trace: &Trace) -> Option<TraceAggregates> {
    let delays: Vec<f64> = trace.delivered().filter_map(|p| p.delay.seconds()).collect();
    if delays.is_empty() {
        return None;
    }
    let bits: f64 = trace.delivered().map(|p| p.size as f64 * 8.0).sum();
    // Guard single-packet traces with one default window of sending time.
    let span = trace.duration().max(crate::window::DEFAULT_WINDOW_LEN);
    Some(TraceAggregates {
        throughput: bits / span,
        mean_delay: delays.iter().sum::<f64>() / delays.len() as f64,
        p95_delay: percentile(&delays, 0.95)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub zeta: f64,
    pub chunk: ChunkSpec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { zeta: 1.0, chunk: ChunkSpec::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub wd1_mean_delay: f64,
    pub wd1_p95_delay: f64,
    pub wd2_tput_mean_delay: f64,
    pub wd2_tput_p95_delay: f64,
    /// (chunk start packet, MMD²)
    pub mmd_curve: Vec<(usize, f64)>,
    /// CDF of per-trace reordering fractions in the evaluated dataset.
    pub reorder_cdf: Vec<(f64, f64)>,
    pub disc_score: Option<f64>,
    /// Pooled (reference ∪ evaluated) ranges used to scale the 2-D metrics.
    pub ranges: ReportRanges,
    pub n_reference: usize,
    pub n_evaluated: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRanges {
    pub throughput: Range,
    pub mean_delay: Range,
    pub p95_delay: Range,
}

fn aggregates_of(d: &Dataset) -> Result<Vec<TraceAggregates>> {
    let a: Vec<TraceAggregates> = d.traces.iter().filter_map(trace_aggregates).collect();
    if a.is_empty() {
        return Err(Error::NoDeliveredPackets);
    }
    Ok(a)
}

/// Computes every metric except the discriminative score, which the caller
/// may fill in.
pub fn evaluate(reference: &Dataset, evaluated: &Dataset, config: &EvalConfig) -> Result<MetricsReport> {
    if reference.is_empty() || evaluated.is_empty() {
        return Err(Error::EmptyInput("evaluation datasets"));
    }
    let ra = aggregates_of(reference)?;
    let ea = aggregates_of(evaluated)?;
    let pooled = |f: fn(&TraceAggregates) -> f64| Range::of(ra.iter().chain(&ea).map(f)).expect("non-empty aggregates");
    let ranges = ReportRanges {
        throughput: pooled(|a| a.throughput),
        mean_delay: pooled(|a| a.mean_delay),
        p95_delay: pooled(|a| a.p95_delay),
    };
    let col = |v: &[TraceAggregates], f: fn(&TraceAggregates) -> f64| v.iter().map(f).collect::<Vec<_>>();
    let pts = |v: &[TraceAggregates], f: fn(&TraceAggregates) -> f64| {
        v.iter().map(|a| [a.throughput, f(a)]).collect::<Vec<_>>()
    };
    Ok(MetricsReport {
        wd1_mean_delay: wasserstein_1d(&col(&ra, |a| a.mean_delay), &col(&ea, |a| a.mean_delay))?,
        wd1_p95_delay: wasserstein_1d(&col(&ra, |a| a.p95_delay), &col(&ea, |a| a.p95_delay))?,
        wd2_tput_mean_delay: wasserstein_2d(
            &pts(&ra, |a| a.mean_delay),
            &pts(&ea, |a| a.mean_delay),
            [ranges.throughput, ranges.mean_delay],
        )?,
        wd2_tput_p95_delay: wasserstein_2d(
            &pts(&ra, |a| a.p95_delay),
            &pts(&ea, |a| a.p95_delay),
            [ranges.throughput, ranges.p95_delay],
        )?,
        mmd_curve: mmd_chunk_curve(reference, evaluated, config.zeta, &config.chunk)?,
        reorder_cdf: reorder_cdf(evaluated),
        disc_score: None,
        ranges,
        n_reference: reference.len(),
        n_evaluated: evaluated.len(),
    })
}

impl MetricsReport {
    /// Long-form CSV: `metric,x,value`, one row per scalar and per curve point.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,x,value\n");
        let mut row = |m: &str, x: String, v: f64| {
            let _ = writeln!(s, "{m},{x},{v}");
        };
        row("wd1_mean_delay", String::new(), self.wd1_mean_delay);
        row("wd1_p95_delay", String::new(), self.wd1_p95_delay);
        row("wd2_tput_mean_delay", String::new(), self.wd2_tput_mean_delay);
        row("wd2_tput_p95_delay", String::new(), self.wd2_tput_p95_delay);
        if let Some(d) = self.disc_score {
            row("disc_score", String::new(), d);
        }
        for (start, v) in &self.mmd_curve {
            row("mmd", start.to_string(), *v);
        }
        for (x, p) in &self.reorder_cdf {
            row("reorder_cdf", x.to_string(), *p);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::SplitTag;
    use crate::trace::Delay;

    fn trace(delay: f64, n: usize) -> Trace {
        Trace::from_outcomes((0..n).map(|i| (i as f64 * 0.01, 1500, Delay::Delivered(delay))), "t", "c", 0).unwrap()
    }

    #[test]
    fn self_evaluation_is_zero() {
        let d = Dataset::new(vec![trace(0.05, 120), trace(0.08, 150), trace(0.03, 200)], SplitTag::Test);
        let r = evaluate(&d, &d, &EvalConfig::default()).unwrap();
        assert_eq!(r.wd1_mean_delay, 0.0);
        assert!(r.wd2_tput_mean_delay.abs() < 1e-12);
        assert!(r.mmd_curve.iter().all(|(_, v)| v.abs() < 1e-12));
        assert_eq!(r.mmd_curve.len(), 2);
        assert_eq!(r.reorder_cdf, vec![(0.0, 1.0)]);
    }

    #[test]
    fn shifted_delays_are_detected() {
        let a = Dataset::new(vec![trace(0.05, 120), trace(0.08, 120)], SplitTag::Test);
        let b = Dataset::new(vec![trace(0.15, 120), trace(0.18, 120)], SplitTag::Test);
        let r = evaluate(&a, &b, &EvalConfig::default()).unwrap();
        assert!((r.wd1_mean_delay - 0.1).abs() < 1e-12);
        assert!(r.wd2_tput_mean_delay > 0.0);
        let csv = r.to_csv();
        assert!(csv.starts_with("metric,x,value\n"));
        assert!(csv.contains("wd1_mean_delay,,"));
    }
}
