//! Kernel two-sample statistic over fixed-length packet chunks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::trace::Trace;

fn rbf(x: &[f64], y: &[f64], zeta: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-zeta * d2).exp()
}

fn mean_kernel(a: &[Vec<f64>], b: &[Vec<f64>], zeta: f64) -> f64 {
    let mut s = 0.0;
    for x in a {
        for y in b {
            s += rbf(x, y, zeta);
        }
    }
    s / (a.len() * b.len()) as f64
}

/// Biased (V-statistic) squared MMD with the kernel `exp(-ζ‖x − y‖²)`,
/// diagonal terms included.
pub fn mmd_rbf(a: &[Vec<f64>], b: &[Vec<f64>], zeta: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("mmd sample sets"));
    }
    if !(zeta > 0.0) {
        return Err(Error::InvalidConfig(format!("zeta must be positive, got {zeta}")));
    }
    let dim = a[0].len();
    for v in a.iter().chain(b) {
        if v.len() != dim {
            return Err(Error::DimensionMismatch(dim, v.len()));
        }
    }
    Ok(mean_kernel(a, a, zeta) + mean_kernel(b, b, zeta) - 2.0 * mean_kernel(a, b, zeta))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkSpec {
    /// Packets per chunk.
    pub chunk_len: usize,
    /// Distance between consecutive chunk starts.
    pub chunk_stride: usize,
    /// Packets per mini-chunk.
    pub mini_len: usize,
}

impl Default for ChunkSpec {
    fn default() -> Self {
        ChunkSpec { chunk_len: 50, chunk_stride: 100, mini_len: 15 }
    }
}

/// Per-packet (loss flag, delay, spacing), each min-max normalized within the
/// trace. Dropped packets take the trace's maximum delay.
pub fn normalized_packet_features(trace: &Trace) -> Vec<[f64; 3]> {
    let y_max = trace.delivered().filter_map(|p| p.delay.seconds()).fold(0.0, f64::max);
    let raw: Vec<[f64; 3]> = trace
        .packets
        .iter()
        .map(|p| match p.delay.seconds() {
            Some(d) => [0.0, d, p.spacing],
            None => [1.0, y_max, p.spacing],
        })
        .collect();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for r in &raw {
        for k in 0..3 {
            lo[k] = lo[k].min(r[k]);
            hi[k] = hi[k].max(r[k]);
        }
    }
    raw.iter()
        .map(|r| {
            let mut out = [0.0; 3];
            for k in 0..3 {
                let span = hi[k] - lo[k];
                out[k] = if span > 0.0 { (r[k] - lo[k]) / span } else { 0.0 };
            }
            out
        })
        .collect()
}

/// Mini-chunk vectors (length 3·mini_len) of the chunk starting at `start`,
/// or `None` when the trace is too short for that chunk.
fn chunk_vectors(features: &[[f64; 3]], start: usize, spec: &ChunkSpec) -> Option<Vec<Vec<f64>>> {
    if features.len() < start + spec.chunk_len {
        return None;
    }
    let chunk = &features[start..start + spec.chunk_len];
    Some(chunk.chunks_exact(spec.mini_len).map(|mini| mini.iter().flat_map(|f| f.iter().copied()).collect()).collect())
}

/// MMD² between real and synthetic chunks as a function of chunk start.
///
/// Synthetic traces are truncated to the longest real trace. When every
/// synthetic trace carries a configuration tag, sets are formed per tag and
/// the scores averaged over tags present on both sides; otherwise all traces
/// are pooled.
pub fn mmd_chunk_curve(real: &Dataset, synth: &Dataset, zeta: f64, spec: &ChunkSpec) -> Result<Vec<(usize, f64)>> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::EmptyInput("mmd datasets"));
    }
    let max_len = real.traces.iter().map(Trace::len).max().unwrap_or(0);
    let grouped =
        synth.traces.iter().all(|t| !t.config_tag.is_empty()) && real.traces.iter().all(|t| !t.config_tag.is_empty());
    let key = |t: &Trace| if grouped { t.config_tag.clone() } else { String::new() };
    let prep = |d: &Dataset| {
        let mut groups: BTreeMap<String, Vec<Vec<[f64; 3]>>> = BTreeMap::new();
        for t in &d.traces {
            let mut f = normalized_packet_features(t);
            f.truncate(max_len);
            groups.entry(key(t)).or_default().push(f);
        }
        groups
    };
    let real_groups = prep(real);
    let synth_groups = prep(synth);
    let mut curve = Vec::new();
    let mut start = 0;
    while start + spec.chunk_len <= max_len {
        let mut scores = Vec::new();
        for (tag, rtraces) in &real_groups {
            let Some(straces) = synth_groups.get(tag) else { continue };
            let rv: Vec<Vec<f64>> = rtraces.iter().filter_map(|f| chunk_vectors(f, start, spec)).flatten().collect();
            let sv: Vec<Vec<f64>> = straces.iter().filter_map(|f| chunk_vectors(f, start, spec)).flatten().collect();
            if rv.is_empty() || sv.is_empty() {
                continue;
            }
            scores.push(mmd_rbf(&rv, &sv, zeta)?);
        }
        if !scores.is_empty() {
            curve.push((start, scores.iter().sum::<f64>() / scores.len() as f64));
        }
        start += spec.chunk_stride;
    }
    Ok(curve)
}
