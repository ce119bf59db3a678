//! Dataset persistence (JSON-Lines), static-feature normalization and the
//! equal-width discretizer used by every binned model output.
//!
//! One trace per line:
//!
//! ```text
//! {"version":1,"static_features":{..},"protocol_tag":"cubic","config_tag":"s1-c0",
//!  "seed":42,"packets":[[send_time,size,spacing,delay_or_null,recv_rank_or_null],..]}
//! ```
//!
//! Files always hold raw physical units (seconds, bytes, bits/s).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Delay, PacketRecord, StaticFeatures, Trace};

pub const FORMAT_VERSION: u32 = 1;
pub const TRACE_EXTENSION: &str = "ndnet.jsonl";
pub const RANGES_FILE: &str = "ranges.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Range> {
        let mut r: Option<Range> = None;
        for v in values {
            r = Some(match r {
                None => Range { min: v, max: v },
                Some(r) => Range { min: r.min.min(v), max: r.max.max(v) },
            });
        }
        r
    }

    pub fn union(self, other: Range) -> Range {
        Range { min: self.min.min(other.min), max: self.max.max(other.max) }
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    /// Maps into [0, 1], clamping out-of-range values; a degenerate range maps
    /// everything to 0.5.
    pub fn normalize(&self, v: f64) -> f64 {
        let span = self.span();
        if span <= 0.0 {
            0.5
        } else {
            ((v - self.min) / span).clamp(0.0, 1.0)
        }
    }
}

/// Per-quantity (min, max) over every trace of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalRanges {
    pub y_min: Range,
    pub y_max: Range,
    pub p95_throughput: Range,
}

impl GlobalRanges {
    pub fn of<'a>(features: impl IntoIterator<Item = &'a StaticFeatures>) -> Option<GlobalRanges> {
        let mut out: Option<GlobalRanges> = None;
        for x in features {
            let point = GlobalRanges {
                y_min: Range { min: x.y_min, max: x.y_min },
                y_max: Range { min: x.y_max, max: x.y_max },
                p95_throughput: Range { min: x.p95_throughput, max: x.p95_throughput },
            };
            out = Some(match out {
                None => point,
                Some(g) => GlobalRanges {
                    y_min: g.y_min.union(point.y_min),
                    y_max: g.y_max.union(point.y_max),
                    p95_throughput: g.p95_throughput.union(point.p95_throughput),
                },
            });
        }
        out
    }
}

/// Normalizes static features into [0, 1]^3 using training-set ranges.
pub fn normalize_static(x: &StaticFeatures, ranges: &GlobalRanges) -> [f64; 3] {
    [
        ranges.y_min.normalize(x.y_min),
        ranges.y_max.normalize(x.y_max),
        ranges.p95_throughput.normalize(x.p95_throughput),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub traces: Vec<Trace>,
    pub split_tag: SplitTag,
    pub global_ranges: Option<GlobalRanges>,
}

impl Dataset {
    pub fn new(traces: Vec<Trace>, split_tag: SplitTag) -> Dataset {
        let global_ranges = GlobalRanges::of(traces.iter().map(|t| &t.static_features));
        Dataset { traces, split_tag, global_ranges }
    }

    pub fn empty(split_tag: SplitTag) -> Dataset {
        Dataset::new(Vec::new(), split_tag)
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Per-trace maximum delays, used to denormalize binned model outputs.
    pub fn y_max_values(&self) -> Vec<f64> {
        self.traces.iter().map(|t| t.static_features.y_max).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct TraceLine {
    version: u32,
    static_features: StaticFeatures,
    protocol_tag: String,
    config_tag: String,
    seed: u64,
    packets: Vec<(f64, u32, f64, Option<f64>, Option<u32>)>,
}

#[derive(Serialize, Deserialize)]
struct RangesFile {
    version: u32,
    split_tag: SplitTag,
    n_traces: usize,
    global_ranges: Option<GlobalRanges>,
}

fn trace_to_line(t: &Trace) -> TraceLine {
    TraceLine {
        version: FORMAT_VERSION,
        static_features: t.static_features,
        protocol_tag: t.protocol_tag.clone(),
        config_tag: t.config_tag.clone(),
        seed: t.seed,
        packets: t.packets.iter().map(|p| (p.send_time, p.size, p.spacing, p.delay.seconds(), p.recv_rank)).collect(),
    }
}

fn line_to_trace(l: TraceLine) -> Trace {
    Trace {
        packets: l
            .packets
            .into_iter()
            .map(|(send_time, size, spacing, delay, recv_rank)| PacketRecord {
                send_time,
                size,
                spacing,
                delay: Delay::from(delay),
                recv_rank,
            })
            .collect(),
        static_features: l.static_features,
        protocol_tag: l.protocol_tag,
        config_tag: l.config_tag,
        seed: l.seed,
    }
}

/// Serializes one trace to its JSON line (without the trailing newline).
pub fn trace_to_json(t: &Trace) -> Result<String> {
    Ok(serde_json::to_string(&trace_to_line(t))?)
}

pub fn trace_from_json(line: &str, line_no: usize) -> Result<Trace> {
    let l: TraceLine =
        serde_json::from_str(line).map_err(|e| Error::Malformed { line: line_no, msg: e.to_string() })?;
    if l.version != FORMAT_VERSION {
        return Err(Error::Version { found: l.version, expected: FORMAT_VERSION });
    }
    Ok(line_to_trace(l))
}

/// Location of the ranges sidecar for a dataset file.
pub fn ranges_path(dataset_path: &Path) -> PathBuf {
    dataset_path.parent().unwrap_or(Path::new(".")).join(RANGES_FILE)
}

/// Writes the dataset as JSON-Lines plus the `ranges.json` sidecar next to it.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in &dataset.traces {
        w.write_all(trace_to_json(t)?.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let sidecar = RangesFile {
        version: FORMAT_VERSION,
        split_tag: dataset.split_tag,
        n_traces: dataset.traces.len(),
        global_ranges: dataset.global_ranges,
    };
    let mut s = serde_json::to_string_pretty(&sidecar)?;
    s.push('\n');
    std::fs::write(ranges_path(path), s)?;
    Ok(())
}

/// Reads a JSON-Lines dataset. The split tag comes from the sidecar when it
/// is present; global ranges are always recomputed from the traces.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut traces = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        traces.push(trace_from_json(&line, i + 1)?);
    }
    let mut split_tag = SplitTag::Train;
    let sidecar = ranges_path(path);
    if sidecar.exists() {
        let r: RangesFile = serde_json::from_str(&std::fs::read_to_string(&sidecar)?)?;
        if r.version != FORMAT_VERSION {
            return Err(Error::Version { found: r.version, expected: FORMAT_VERSION });
        }
        split_tag = r.split_tag;
    }
    Ok(Dataset::new(traces, split_tag))
}

/// Equal-width binning of a value range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discretizer {
    pub n_bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Discretizer {
    pub fn new(n_bins: usize, lo: f64, hi: f64) -> Result<Discretizer> {
        if n_bins < 2 || !(lo < hi) {
            return Err(Error::InvalidConfig(format!(
                "discretizer needs n_bins >= 2 and lo < hi, got {n_bins}, [{lo}, {hi}]"
            )));
        }
        Ok(Discretizer { n_bins, lo, hi })
    }

    /// The unit interval split into 100 bins.
    pub fn unit() -> Discretizer {
        Discretizer { n_bins: 100, lo: 0.0, hi: 1.0 }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.n_bins as f64
    }

    /// Clamps to [lo, hi] and floor-bins; `hi` lands in the last bin.
    pub fn discretize(&self, v: f64) -> usize {
        let v = v.clamp(self.lo, self.hi);
        let b = ((v - self.lo) / (self.hi - self.lo) * self.n_bins as f64).floor() as usize;
        b.min(self.n_bins - 1)
    }

    pub fn bin_lo(&self, bin: usize) -> f64 {
        self.lo + bin as f64 * self.width()
    }

    pub fn bin_center(&self, bin: usize) -> f64 {
        self.lo + (bin as f64 + 0.5) * self.width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins).map(|b| self.bin_center(b)).collect()
    }

    /// Uniform draw inside the bin's sub-range.
    pub fn bin_to_value<R: Rng + ?Sized>(&self, bin: usize, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let (lo, hi) = (self.bin_lo(bin), self.bin_lo(bin + 1));
        let v = lo + u * self.width();
        // Rounding can land exactly on the next bin edge.
        if v >= hi {
            lo + (hi - lo) * (1.0 - f64::EPSILON)
        } else {
            v.max(lo)
        }
    }

    /// Normalized histogram of `values` over the bins.
    pub fn histogram(&self, values: impl IntoIterator<Item = f64>) -> Option<Vec<f64>> {
        let mut h = vec![0.0; self.n_bins];
        let mut n = 0usize;
        for v in values {
            h[self.discretize(v)] += 1.0;
            n += 1;
        }
        if n == 0 {
            return None;
        }
        h.iter_mut().for_each(|x| *x /= n as f64);
        Some(h)
    }
}
