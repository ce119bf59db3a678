//! Discriminative score: a small GRU classifier tries to tell real traces
//! from synthetic ones; the score is how far its held-out accuracy is from
//! chance.

use pathsim_autodiff::{gru_cell, Group, GruLayer, LearningRates, Linear, ParamStore, Tape, Tensor, Var};
use pathsim_core::io::Dataset;
use pathsim_core::rng::stream;
use pathsim_core::trace::Trace;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::{run_sgd, SgdSchedule, TraceGrad};

pub const MIN_TRACES_PER_SIDE: usize = 10;
const N_FEATURES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscConfig {
    /// Packets per sequence after truncation or zero padding.
    pub seq_len: usize,
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub train_frac: f64,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig { seq_len: 100, hidden: 2, layers: 2, epochs: 100, batch_size: 4, lr: 0.3, train_frac: 0.8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscReport {
    /// |held-out accuracy − 0.5|.
    pub score: f64,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Per-dimension min and max over both sides: loss flag, delay, spacing.
struct MinMax {
    lo: [f64; N_FEATURES],
    hi: [f64; N_FEATURES],
}

impl MinMax {
    fn of<'a>(traces: impl Iterator<Item = &'a Trace>) -> MinMax {
        let mut m = MinMax { lo: [f64::INFINITY; N_FEATURES], hi: [f64::NEG_INFINITY; N_FEATURES] };
        for t in traces {
            for p in &t.packets {
                for (k, v) in raw(p).into_iter().enumerate() {
                    m.lo[k] = m.lo[k].min(v);
                    m.hi[k] = m.hi[k].max(v);
                }
            }
        }
        m
    }

    fn apply(&self, v: [f64; N_FEATURES]) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        for k in 0..N_FEATURES {
            let span = self.hi[k] - self.lo[k];
            out[k] = if span > 0.0 { (v[k] - self.lo[k]) / span } else { 0.0 };
        }
        out
    }
}

/// Dropped packets carry delay 0 and loss flag 1.
fn raw(p: &pathsim_core::trace::PacketRecord) -> [f64; N_FEATURES] {
    match p.delay.seconds() {
        Some(d) => [0.0, d, p.spacing],
        None => [1.0, 0.0, p.spacing],
    }
}

fn sequence(t: &Trace, mm: &MinMax, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * N_FEATURES];
    for (i, p) in t.packets.iter().take(len).enumerate() {
        out[i * N_FEATURES..(i + 1) * N_FEATURES].copy_from_slice(&mm.apply(raw(p)));
    }
    out
}

struct Classifier {
    layers: Vec<GruLayer>,
    out: Linear,
}

impl Classifier {
    fn logit<'t>(&self, tape: &'t Tape, store: &ParamStore, seq: &[f64]) -> Result<Var<'t>> {
        let vars: Vec<_> = self.layers.iter().map(|l| l.bind(tape, store)).collect();
        let mut h: Vec<_> = self.layers.iter().map(|l| tape.constant(Tensor::zeros(1, l.hidden))).collect();
        let mut pooled: Option<Var<'t>> = None;
        for x in seq.chunks(N_FEATURES) {
            let mut input = tape.constant(Tensor::row(x.to_vec()));
            for (hl, v) in h.iter_mut().zip(&vars) {
                *hl = gru_cell(input, *hl, v)?;
                input = *hl;
            }
            pooled = Some(match pooled {
                None => input,
                Some(p) => p.add(input)?,
            });
        }
        // Mean of the top layer's states over time.
        let mean = pooled.expect("non-empty sequence").scale(N_FEATURES as f64 / seq.len() as f64);
        Ok(self.out.bind(tape, store).forward(mean)?.select(0, 0)?)
    }
}

pub fn discriminative_score(real: &Dataset, synth: &Dataset, cfg: &DiscConfig, seed: u64) -> Result<DiscReport> {
    let got = real.len().min(synth.len());
    if got < MIN_TRACES_PER_SIDE {
        return Err(Error::TooFewTraces { need: MIN_TRACES_PER_SIDE, got });
    }
    if cfg.seq_len == 0 || cfg.hidden == 0 || cfg.layers == 0 || cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidConfig(format!("invalid classifier configuration {cfg:?}")));
    }
    if !(cfg.train_frac > 0.0 && cfg.train_frac < 1.0) || !(cfg.lr > 0.0) {
        return Err(Error::InvalidConfig("train fraction must lie in (0, 1) and lr must be positive".into()));
    }
    let mm = MinMax::of(real.traces.iter().chain(&synth.traces));
    // Each side is split with its own copy of one permutation stream.
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, ds) in [(1.0, real), (0.0, synth)] {
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        idx.shuffle(&mut stream(seed, "disc-split", 0));
        let n_train = ((ds.len() as f64) * cfg.train_frac).round() as usize;
        for (j, &i) in idx.iter().enumerate() {
            let item = (sequence(&ds.traces[i], &mm, cfg.seq_len), label);
            if j < n_train {
                train.push(item);
            } else {
                test.push(item);
            }
        }
    }
    let mut store = ParamStore::new();
    let mut rng = stream(seed, "disc-init", 0);
    let layers = (0..cfg.layers)
        .map(|l| {
            let n_in = if l == 0 { N_FEATURES } else { cfg.hidden };
            GruLayer::new(&mut store, &format!("disc.gru.l{l}"), n_in, cfg.hidden, Group::Window, 0.0, &mut rng)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let out = Linear::new(&mut store, "disc.out", cfg.hidden, 1, Group::Window, 0.0, &mut rng)?;
    let clf = Classifier { layers, out };
    let per_trace = |s: &ParamStore, i: usize| -> Result<TraceGrad> {
        let tape = Tape::new();
        let (seq, y) = &train[i];
        let l = clf.logit(&tape, s, seq)?;
        let loss = (-l).softplus() * *y + l.softplus() * (1.0 - y);
        let grads = tape.backward(loss, s)?;
        Ok(TraceGrad { j_pkt: loss.scalar(), j_win: 0.0, grads })
    };
    let schedule = SgdSchedule {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: LearningRates { window: cfg.lr, packet: cfg.lr },
        seed: pathsim_core::rng::derive_seed(seed, "disc-epoch", 0),
    };
    run_sgd(train.len(), schedule, &mut store, per_trace, |_| {})?;
    let mut correct = 0usize;
    for (seq, y) in &test {
        let tape = Tape::new();
        let predicted = if clf.logit(&tape, &store, seq)?.scalar() > 0.0 { 1.0 } else { 0.0 };
        if predicted == *y {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / test.len() as f64;
    Ok(DiscReport { score: (accuracy - 0.5).abs(), accuracy, n_train: train.len(), n_test: test.len() })
}
