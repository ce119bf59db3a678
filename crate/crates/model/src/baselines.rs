//! Autoregressive window-level LSTM baselines.
//!
//! All three kinds share one model and one training procedure: per 100 ms
//! window the LSTM reads the static features, the window's sending rate and
//! the previous window's mean normalized delay, and predicts a 100-bin
//! distribution over normalized delay plus a drop fraction. They differ only
//! in how a packet's delay is drawn at inference.

use pathsim_autodiff::cells::LinearVars;
use pathsim_autodiff::{lstm_stack_step, Group, Linear, Lstm, ParamStore, Real, Tape, Tensor, Var};
use pathsim_core::io::{normalize_static, Dataset, Discretizer, GlobalRanges};
use pathsim_core::protocols::{Outcome, PathEnvironment};
use pathsim_core::rng::{stream, StreamRng};
use pathsim_core::trace::{StaticFeatures, Trace};
use pathsim_core::window::{assign_windows, window_index};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ModelSpec, CHECKPOINT_VERSION};
use crate::error::{Error, Result};
use crate::rbu::{argmax_first, sample_bin};
use crate::training::{run_sgd, window_ce, EpochLog, SgdSchedule, TraceGrad, TrainOutput};

/// Rejections before the FIFO variant clamps.
pub const FIFO_MAX_REJECTIONS: usize = 20;
/// Sending-rate input is capped at this multiple of the trace's p95 throughput.
const MAX_RATE_INPUT: f64 = 4.0;
/// Smallest delay the baselines emit, seconds.
const MIN_DELAY: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// Most likely bin for every packet of a window.
    LstmWin,
    /// Independent draw per packet.
    LstmPkt,
    /// Independent draws, rejected while they would reorder packets.
    LstmPktFifo,
}

impl BaselineKind {
    pub fn tag(self) -> &'static str {
        match self {
            BaselineKind::LstmWin => "lstm-win",
            BaselineKind::LstmPkt => "lstm-pkt",
            BaselineKind::LstmPktFifo => "lstm-pkt-fifo",
        }
    }

    pub fn parse(s: &str) -> Option<BaselineKind> {
        match s {
            "lstm-win" => Some(BaselineKind::LstmWin),
            "lstm-pkt" => Some(BaselineKind::LstmPkt),
            "lstm-pkt-fifo" => Some(BaselineKind::LstmPktFifo),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub hidden: usize,
    pub layers: usize,
    pub n_bins: usize,
    pub window_len: f64,
    /// Propagation share of y_min used for feedback timing at inference.
    pub rho: f64,
    pub weight_decay: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            hidden: 256,
            layers: 2,
            n_bins: 100,
            window_len: pathsim_core::window::DEFAULT_WINDOW_LEN,
            rho: crate::rbu::DEFAULT_RHO,
            weight_decay: 0.0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0
            || self.layers == 0
            || self.n_bins < 2
            || !(self.window_len > 0.0)
            || !(self.rho > 0.0 && self.rho < 1.0)
        {
            return Err(Error::InvalidConfig(format!("invalid baseline configuration {self:?}")));
        }
        Ok(())
    }
}

pub const N_INPUTS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineModel {
    pub lstm: Lstm,
    pub delay: Linear,
    pub drop: Linear,
    pub config: BaselineConfig,
}

struct BoundBaseline<'t> {
    layers: Vec<pathsim_autodiff::cells::LstmVars<'t>>,
    delay: LinearVars<'t>,
    drop: LinearVars<'t>,
}

impl BaselineModel {
    pub fn init(store: &mut ParamStore, config: BaselineConfig, rng: &mut impl Rng) -> Result<BaselineModel> {
        config.validate()?;
        let wd = config.weight_decay;
        let lstm = Lstm::new(store, "base.lstm", N_INPUTS, config.hidden, config.layers, Group::Window, wd, rng)?;
        let delay = Linear::new(store, "base.delay", config.hidden, config.n_bins, Group::Window, wd, rng)?;
        let drop = Linear::new(store, "base.drop", config.hidden, 1, Group::Window, wd, rng)?;
        Ok(BaselineModel { lstm, delay, drop, config })
    }

    pub fn from_store(store: &ParamStore, config: BaselineConfig) -> Result<BaselineModel> {
        Ok(BaselineModel {
            lstm: Lstm::from_ids(store, "base.lstm", config.layers)?,
            delay: Linear::from_ids(store, "base.delay")?,
            drop: Linear::from_ids(store, "base.drop")?,
            config,
        })
    }

    fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> BoundBaseline<'t> {
        BoundBaseline {
            layers: self.lstm.bind(tape, store),
            delay: self.delay.bind(tape, store),
            drop: self.drop.bind(tape, store),
        }
    }
}

/// Window inputs and targets of one training trace.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineTrace {
    pub inputs: Vec<[f64; N_INPUTS]>,
    /// Histogram of y / y_max per window; `None` without deliveries.
    pub delay_target: Vec<Option<Vec<f64>>>,
    /// Drop fraction per window; `None` without packets.
    pub drop_target: Vec<Option<f64>>,
}

fn rate_input(bytes: f64, window_len: f64, x: &StaticFeatures) -> f64 {
    (bytes * 8.0 / window_len / x.p95_throughput).min(MAX_RATE_INPUT)
}

fn window_input(x_norm: [f64; 3], rate: f64, prev_delay: f64) -> [f64; N_INPUTS] {
    [x_norm[0], x_norm[1], x_norm[2], rate, prev_delay]
}

pub fn prepare_baseline(trace: &Trace, cfg: &BaselineConfig, ranges: &GlobalRanges) -> Result<BaselineTrace> {
    let x = trace.static_features;
    let x_norm = normalize_static(&x, ranges);
    let bins = Discretizer::new(cfg.n_bins, 0.0, 1.0)?;
    let grid = assign_windows(&trace.packets, cfg.window_len);
    let mut out = BaselineTrace { inputs: Vec::new(), delay_target: Vec::new(), drop_target: Vec::new() };
    let mut prev_delay = 0.0;
    for range in grid.ranges() {
        let pk = &trace.packets[range];
        let bytes: f64 = pk.iter().map(|p| f64::from(p.size)).sum();
        out.inputs.push(window_input(x_norm, rate_input(bytes, cfg.window_len, &x), prev_delay));
        let delays: Vec<f64> = pk.iter().filter_map(|p| p.delay.seconds()).map(|d| d / x.y_max).collect();
        out.delay_target.push(bins.histogram(delays.iter().copied()));
        out.drop_target.push((!pk.is_empty()).then(|| (pk.len() - delays.len()) as f64 / pk.len() as f64));
        if !delays.is_empty() {
            prev_delay = delays.iter().sum::<f64>() / delays.len() as f64;
        }
    }
    Ok(out)
}

/// Mean delay cross-entropy plus mean drop-fraction cross-entropy.
pub fn baseline_objective<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    model: &BaselineModel,
    tr: &BaselineTrace,
) -> Result<(Var<'t>, Var<'t>)> {
    let b = model.bind(tape, store);
    let mut state = model.lstm.zero_state(tape);
    let zero = tape.scalar(0.0);
    let (mut ce, mut n_ce, mut bce, mut n_bce) = (zero, 0usize, zero, 0usize);
    for (w, input) in tr.inputs.iter().enumerate() {
        let h = lstm_stack_step(tape.constant(Tensor::row(input.to_vec())), &mut state, &b.layers)?;
        if let Some(t) = &tr.delay_target[w] {
            ce = ce + window_ce(b.delay.forward(h)?, t)?;
            n_ce += 1;
        }
        if let Some(f) = tr.drop_target[w] {
            let l = b.drop.forward(h)?.select(0, 0)?;
            bce = bce + (-l).softplus() * f + l.softplus() * (1.0 - f);
            n_bce += 1;
        }
    }
    Ok((ce * (1.0 / n_ce.max(1) as f64), bce * (1.0 / n_bce.max(1) as f64)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub model: BaselineConfig,
}

impl Default for BaselineTrainConfig {
    fn default() -> Self {
        BaselineTrainConfig { epochs: 10, batch_size: 8, lr: 0.001, seed: 0, model: BaselineConfig::default() }
    }
}

pub fn train_baseline(dataset: &Dataset, kind: BaselineKind, cfg: &BaselineTrainConfig) -> Result<TrainOutput> {
    train_baseline_observed(dataset, kind, cfg, |_| {})
}

pub fn train_baseline_observed(
    dataset: &Dataset,
    kind: BaselineKind,
    cfg: &BaselineTrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutput> {
    cfg.model.validate()?;
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidConfig("epochs, batch size and learning rate must be positive".into()));
    }
    let ranges = dataset.global_ranges.ok_or(Error::EmptyDataset)?;
    let prepared = dataset
        .traces
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.duration() < cfg.model.window_len {
                return Err(Error::ShortTrace(i));
            }
            prepare_baseline(t, &cfg.model, &ranges)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut store = ParamStore::new();
    let model = BaselineModel::init(&mut store, cfg.model.clone(), &mut stream(cfg.seed, "init", 0))?;
    let schedule = SgdSchedule {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: pathsim_autodiff::LearningRates { window: cfg.lr, packet: cfg.lr },
        seed: cfg.seed,
    };
    let per_trace = |s: &ParamStore, i: usize| -> Result<TraceGrad> {
        let tape = Tape::new();
        let (ce, bce) = baseline_objective(&tape, s, &model, &prepared[i])?;
        let grads = tape.backward(ce + bce, s)?;
        Ok(TraceGrad { j_pkt: ce.scalar(), j_win: bce.scalar(), grads })
    };
    let log = run_sgd(prepared.len(), schedule, &mut store, per_trace, on_epoch)?;
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        model: ModelSpec::Baseline { baseline: kind, config: cfg.model.clone() },
        params: store,
        bins: Discretizer::new(cfg.model.n_bins, 0.0, 1.0)?,
        ranges,
        train_features: dataset.traces.iter().map(|t| t.static_features).collect(),
        train_protocol: dataset.traces[0].protocol_tag.clone(),
    };
    Ok(TrainOutput { checkpoint, log })
}

/// Closed-loop environment answering packets from a trained baseline.
pub struct BaselineEnv {
    kind: BaselineKind,
    model: BaselineModel,
    params: ParamStore,
    bins: Discretizer,
    x: StaticFeatures,
    x_norm: [f64; 3],
    d_prop: f64,
    tau: f64,
    /// LSTM (h, c) per layer.
    state: Vec<(Tensor, Tensor)>,
    /// Index of the window whose distribution is current.
    window: Option<usize>,
    delay_dist: Vec<f64>,
    drop_p: f64,
    bytes: f64,
    delay_sum: f64,
    n_delivered: usize,
    prev_delay: f64,
    last_arrival: f64,
    rng: StreamRng,
}

impl BaselineEnv {
    /// `x` is the jointly sampled static-feature vector; its y_max scales the
    /// normalized delay bins.
    pub fn new(checkpoint: &Checkpoint, x: StaticFeatures, rng: StreamRng) -> Result<BaselineEnv> {
        let ModelSpec::Baseline { baseline, config } = &checkpoint.model else {
            return Err(Error::InvalidConfig("not a baseline checkpoint".into()));
        };
        let model = BaselineModel::from_store(&checkpoint.params, config.clone())?;
        let state =
            model.lstm.layers.iter().map(|l| (Tensor::zeros(1, l.hidden), Tensor::zeros(1, l.hidden))).collect();
        let d_prop = x.y_min * config.rho;
        Ok(BaselineEnv {
            kind: *baseline,
            params: checkpoint.params.clone(),
            bins: checkpoint.bins,
            x_norm: normalize_static(&x, &checkpoint.ranges),
            tau: (x.y_max - d_prop).max(MIN_DELAY),
            d_prop,
            x,
            model,
            state,
            window: None,
            delay_dist: Vec::new(),
            drop_p: 0.0,
            bytes: 0.0,
            delay_sum: 0.0,
            n_delivered: 0,
            prev_delay: 0.0,
            last_arrival: f64::NEG_INFINITY,
            rng,
        })
    }

    fn step(&mut self) -> Result<()> {
        let rate = rate_input(self.bytes, self.model.config.window_len, &self.x);
        if self.n_delivered > 0 {
            self.prev_delay = self.delay_sum / self.n_delivered as f64;
        }
        // The first window has no history.
        let input = if self.window.is_none() {
            window_input(self.x_norm, 0.0, 0.0)
        } else {
            window_input(self.x_norm, rate, self.prev_delay)
        };
        let tape = Tape::new();
        let b = self.model.bind(&tape, &self.params);
        let mut st: Vec<_> =
            self.state.iter().map(|(h, c)| (tape.constant(h.clone()), tape.constant(c.clone()))).collect();
        let h = lstm_stack_step(tape.constant(Tensor::row(input.to_vec())), &mut st, &b.layers)?;
        self.delay_dist = Var::value(&b.delay.forward(h)?.softmax()).data;
        self.drop_p = b.drop.forward(h)?.scalar().sigmoid();
        self.state = st.iter().map(|(h, c)| (h.value(), c.value())).collect();
        self.bytes = 0.0;
        self.delay_sum = 0.0;
        self.n_delivered = 0;
        Ok(())
    }

    fn advance_to(&mut self, w: usize) -> Result<()> {
        while self.window.is_none_or(|cur| cur < w) {
            self.step()?;
            self.window = Some(self.window.map_or(0, |c| c + 1));
        }
        Ok(())
    }

    fn draw(&mut self) -> f64 {
        let b = match self.kind {
            BaselineKind::LstmWin => return self.bins.bin_center(argmax_first(&self.delay_dist)),
            _ => sample_bin(&self.delay_dist, &mut self.rng),
        };
        self.bins.bin_to_value(b, &mut self.rng)
    }
}

impl PathEnvironment for BaselineEnv {
    fn submit(&mut self, send_time: f64, size: u32) -> pathsim_core::Result<Outcome> {
        let w = window_index(send_time, self.model.config.window_len);
        self.advance_to(w).map_err(|e| pathsim_core::Error::InvalidConfig(e.to_string()))?;
        self.bytes += f64::from(size);
        if self.rng.gen::<f64>() < self.drop_p {
            return Ok(Outcome::Dropped);
        }
        let mut v = self.draw();
        let mut y = (v * self.x.y_max).max(MIN_DELAY);
        if self.kind == BaselineKind::LstmPktFifo {
            let mut tries = 0;
            while send_time + y < self.last_arrival && tries < FIFO_MAX_REJECTIONS {
                v = self.draw();
                y = (v * self.x.y_max).max(MIN_DELAY);
                tries += 1;
            }
            if send_time + y < self.last_arrival {
                y = self.last_arrival - send_time;
                v = y / self.x.y_max;
            }
        }
        self.delay_sum += v;
        self.n_delivered += 1;
        self.last_arrival = self.last_arrival.max(send_time + y);
        Ok(Outcome::Delivered(y))
    }

    fn feedback_time(&self, send_time: f64, outcome: Outcome) -> f64 {
        match outcome {
            Outcome::Delivered(d) => send_time + d + self.d_prop,
            Outcome::Dropped => send_time + 4.0 * self.d_prop + self.tau,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pathsim_core::trace::Delay;

    #[test]
    fn kinds_round_trip_through_tags() {
        for k in [BaselineKind::LstmWin, BaselineKind::LstmPkt, BaselineKind::LstmPktFifo] {
            assert_eq!(BaselineKind::parse(k.tag()), Some(k));
        }
        assert_eq!(BaselineKind::parse("rbu"), None);
    }

    #[test]
    fn prepared_inputs_are_autoregressive() {
        let t = Trace::from_outcomes(
            [(0.0, 1500, Delay::Delivered(0.05)), (0.05, 1500, Delay::Delivered(0.1)), (0.15, 1500, Delay::Drop)],
            "cubic",
            "",
            0,
        )
        .unwrap();
        let ranges = GlobalRanges::of([&t.static_features]).unwrap();
        let p = prepare_baseline(&t, &BaselineConfig::default(), &ranges).unwrap();
        assert_eq!(p.inputs.len(), 2);
        assert_eq!(p.inputs[0][4], 0.0);
        assert!((p.inputs[1][4] - 0.75).abs() < 1e-12);
        assert_eq!(p.drop_target, vec![Some(0.0), Some(1.0)]);
        assert!(p.delay_target[1].is_none());
    }
}
