//! Joint training of the window model and the packet-level RBU.
//!
//! Each trace gets its own tape; per-trace gradients are reduced in trace-id
//! order so the result does not depend on the worker count.

use std::ops::Range;
use std::time::Instant;

use pathsim_autodiff::gradcheck::{gradcheck, GradCheckReport};
use pathsim_autodiff::{Grads, Group, LearningRates, ParamId, ParamStore, Real, Tape, Tensor, Var};
use pathsim_core::io::{normalize_static, Dataset, Discretizer, GlobalRanges};
use pathsim_core::metrics::reorder::window_reorder_fractions;
use pathsim_core::rng::stream;
use pathsim_core::trace::{StaticFeatures, Trace};
use pathsim_core::window::{assign_windows, window_index};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, ModelSpec, CHECKPOINT_VERSION};
use crate::error::{Error, Result};
use crate::rbu::{
    bottleneck_step, cross_traffic_step, drop_logit, heuristic_path_params, invert_packets, relaxed_multipath_step,
    Input5, QHead, RbuConfig, RbuModel, SoftQueue, TrainSelect,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Traces per mini-batch.
    pub batch_size: usize,
    pub lr: LearningRates,
    /// Weight of the window loss.
    pub lambda: f64,
    pub seed: u64,
    /// Cut packet-state gradients at window boundaries.
    pub tbptt: bool,
    pub select: TrainSelect,
    pub model: RbuConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            lr: LearningRates::default(),
            lambda: 1.0,
            seed: 0,
            tbptt: true,
            select: TrainSelect::Expectation,
            model: RbuConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.batch_size == 0
            || !(self.lr.window > 0.0)
            || !(self.lr.packet > 0.0)
            || !(self.lambda >= 0.0)
        {
            return Err(Error::InvalidConfig(
                "epochs, batch size and learning rates must be positive and lambda non-negative".into(),
            ));
        }
        self.model.validate()
    }
}

/// `p·CE(p̂, 1) + (1 − p)(CE(p̂, 0) + (ŷ − y)²)` for a drop probability;
/// `y = None` marks a drop.
pub fn packet_loss(y_hat: f64, p_hat: f64, y: Option<f64>) -> f64 {
    match y {
        None => -p_hat.ln(),
        Some(y) => -(1.0 - p_hat).ln() + (y_hat - y).powi(2),
    }
}

/// Same loss on the drop logit `z`, with both delays already normalized.
pub fn packet_loss_logit<T: Real>(y_hat: T, z: T, y: Option<f64>) -> T {
    match y {
        None => (-z).softplus(),
        Some(y) => {
            let e = y_hat - y;
            z.softplus() + e * e
        }
    }
}

/// Cross-entropy `−Σ target[b]·log pred[b]`.
pub fn window_loss(pred: &[f64], target: &[f64]) -> f64 {
    -pred.iter().zip(target).map(|(p, t)| if *t > 0.0 { t * p.ln() } else { 0.0 }).sum::<f64>()
}

/// Taped cross-entropy between softmax(`logits`) and `target`.
pub fn window_ce<'t>(logits: Var<'t>, target: &[f64]) -> Result<Var<'t>> {
    let t = logits.tape().constant(Tensor::row(target.to_vec()));
    Ok(logits.log_softmax().mul(t)?.sum().neg())
}

/// Packet inputs of one prepared trace.
#[derive(Clone, Debug, PartialEq)]
pub struct PacketIn {
    pub spacing: f64,
    pub size: u32,
    /// Fraction of the packet's window elapsed at send time.
    pub frac: f64,
    pub delay: Option<f64>,
}

/// Everything the objective needs from one trace, computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedTrace {
    pub index: usize,
    pub x: StaticFeatures,
    pub x_norm: [f64; 3],
    pub packets: Vec<PacketIn>,
    pub windows: Vec<Range<usize>>,
    /// c̃_w histograms from the inversion; `None` without deliveries.
    pub cw_target: Vec<Option<Vec<f64>>>,
    /// Window reordering fractions (two-path training only).
    pub q_target: Vec<Option<f64>>,
}

pub fn prepare_trace(index: usize, trace: &Trace, cfg: &RbuConfig, ranges: &GlobalRanges) -> Result<PreparedTrace> {
    if trace.duration() < cfg.window_len {
        return Err(Error::ShortTrace(index));
    }
    let x = trace.static_features;
    let est = heuristic_path_params(&x, cfg.mtu, cfg.rho)?;
    let bins = Discretizer::new(cfg.n_bins, 0.0, 1.0)?;
    let inv = invert_packets(&trace.packets, &est, cfg.window_len, &bins);
    let grid = assign_windows(&trace.packets, cfg.window_len);
    let packets = trace
        .packets
        .iter()
        .map(|p| {
            let w = window_index(p.send_time, cfg.window_len) as f64;
            PacketIn {
                spacing: p.spacing,
                size: p.size,
                frac: (p.send_time / cfg.window_len - w).clamp(0.0, 1.0),
                delay: p.delay.seconds(),
            }
        })
        .collect();
    let q_target =
        if cfg.multipath { window_reorder_fractions(trace, cfg.window_len) } else { vec![None; grid.n_windows] };
    Ok(PreparedTrace {
        index,
        x,
        x_norm: normalize_static(&x, ranges),
        packets,
        windows: grid.ranges(),
        cw_target: inv.windows,
        q_target,
    })
}

pub fn prepare(dataset: &Dataset, cfg: &RbuConfig, ranges: &GlobalRanges) -> Result<Vec<PreparedTrace>> {
    dataset.traces.iter().enumerate().map(|(i, t)| prepare_trace(i, t, cfg, ranges)).collect()
}

/// Objective terms of one trace.
#[derive(Clone, Debug)]
pub struct TraceLoss<'t> {
    pub j_pkt: Var<'t>,
    pub j_win: Var<'t>,
    /// `j_pkt + λ·j_win`.
    pub total: Var<'t>,
    /// Predicted delay (seconds) per packet, drops included.
    pub y_hat: Vec<f64>,
}

fn sum_opt<'t>(acc: Option<Var<'t>>, v: Var<'t>) -> Var<'t> {
    match acc {
        None => v,
        Some(a) => a + v,
    }
}

/// Unrolls window model and packet recurrences over one trace.
pub fn trace_objective<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    model: &RbuModel,
    tr: &PreparedTrace,
    cfg: &TrainConfig,
) -> Result<TraceLoss<'t>> {
    let mc = &model.config;
    let bound = model.bind(tape, store)?;
    let pv = bound.path_values(&tr.x, tr.x_norm)?;
    let steps = model.window.forward(tape, store, tr.x_norm, tr.windows.len())?;
    let bins = Discretizer::new(mc.n_bins, 0.0, 1.0)?;
    let centers = tape.constant(Tensor::new(mc.n_bins, 1, bins.centers())?);
    let select = |logits: Var<'t>| -> Result<Var<'t>> {
        Ok(match cfg.select {
            TrainSelect::Expectation => logits.softmax().matmul(centers)?,
            TrainSelect::Argmax => {
                let b = crate::rbu::argmax_first(&Var::value(&logits).data);
                tape.scalar(bins.bin_center(b))
            }
        })
    };
    let zero = tape.scalar(0.0);
    let inv_ymax = 1.0 / tr.x.y_max;
    let mut h = zero;
    let mut d_last = zero;
    let mut s_acc = 0.0;
    let mut queues = vec![SoftQueue { d_prev: zero, elapsed: zero }; mc.n_queues()];
    let mut pkt_sum: Option<Var<'t>> = None;
    let mut n_pkt_windows = 0usize;
    let mut win_sum: Option<Var<'t>> = None;
    let mut n_win = 0usize;
    let mut y_hat = Vec::with_capacity(tr.packets.len());
    for (w, range) in tr.windows.iter().enumerate() {
        let step = steps[w];
        if cfg.tbptt {
            h = h.detach();
            d_last = d_last.detach();
            for q in queues.iter_mut() {
                q.d_prev = q.d_prev.detach();
                q.elapsed = q.elapsed.detach();
            }
        }
        let c_w = select(step.cw_logits)?;
        // Routing weights and the q window loss for two paths.
        let mut routing = None;
        if let (true, Some(ql)) = (mc.multipath, step.q_logits) {
            let head = model.window.q_head().unwrap_or_default();
            let (pi, ln_pi, q_loss) = match head {
                QHead::Scalar => {
                    let l = ql.select(0, 0)?;
                    let q_loss = tr.q_target[w].map(|t| (-l).softplus() * t + l.softplus() * (1.0 - t));
                    ([(-l).sigmoid(), l.sigmoid()], [-l.softplus(), -(-l).softplus()], q_loss)
                }
                QHead::Binned => {
                    let q = select(ql)?.select(0, 0)?;
                    let one_minus = -q + 1.0;
                    let q_loss = match tr.q_target[w] {
                        Some(t) => Some(ql.log_softmax().select(0, bins.discretize(t))?.neg()),
                        None => None,
                    };
                    ([one_minus, q], [one_minus.ln(), q.ln()], q_loss)
                }
            };
            routing = Some((pi, ln_pi));
            if let Some(ql) = q_loss {
                win_sum = Some(sum_opt(win_sum, ql));
            }
        }
        if let Some(target) = &tr.cw_target[w] {
            win_sum = Some(sum_opt(win_sum, window_ce(step.cw_logits, target)?));
            n_win += 1;
        }
        let c_w = c_w.select(0, 0)?;
        if range.is_empty() {
            continue;
        }
        let mut acc: Option<Var<'t>> = None;
        for p in &tr.packets[range.clone()] {
            let input = Input5::new(c_w, p.spacing, p.size, mc.mtu, d_last, p.frac, tr.x.y_max);
            let (c, h_new) = cross_traffic_step(&bound.cell, h, &input, mc.gamma);
            h = h_new;
            let (d, drop_nll) = match (&routing, pv.second) {
                (Some((pi, ln_pi)), Some(second)) => {
                    let params = [(pv.d_trans, pv.tau), second];
                    let r = relaxed_multipath_step(
                        &mut queues,
                        &params,
                        pi,
                        ln_pi,
                        p.spacing,
                        c,
                        mc.kappa,
                        p.delay.is_some(),
                    );
                    (r.d, r.drop_nll)
                }
                _ => {
                    s_acc += p.spacing;
                    let q = &mut queues[0];
                    let (_, d) = bottleneck_step(q.d_prev, tape.scalar(s_acc), c, pv.d_trans, pv.tau);
                    let z = drop_logit(d, pv.tau, mc.kappa);
                    let nll = if p.delay.is_some() { z.softplus() } else { (-z).softplus() };
                    if p.delay.is_some() {
                        q.d_prev = d;
                        s_acc = 0.0;
                    }
                    (d, nll)
                }
            };
            let y = d + pv.d_prop;
            y_hat.push(y.scalar());
            let loss = match p.delay {
                Some(obs) => {
                    d_last = d;
                    let e = y * inv_ymax - obs * inv_ymax;
                    drop_nll + e * e
                }
                None => drop_nll,
            };
            acc = Some(sum_opt(acc, loss));
        }
        let mean = acc.expect("non-empty window") * (1.0 / range.len() as f64);
        pkt_sum = Some(sum_opt(pkt_sum, mean));
        n_pkt_windows += 1;
    }
    let j_pkt = pkt_sum.map_or(zero, |s| s * (1.0 / n_pkt_windows as f64));
    let j_win = win_sum.map_or(zero, |s| s * (1.0 / n_win.max(1) as f64));
    let total = j_pkt + j_win * cfg.lambda;
    Ok(TraceLoss { j_pkt, j_win, total, y_hat })
}

/// Loss values and gradient of one trace.
pub struct TraceGrad {
    pub j_pkt: f64,
    pub j_win: f64,
    pub grads: Grads,
}

pub fn trace_gradient(
    store: &ParamStore,
    model: &RbuModel,
    tr: &PreparedTrace,
    cfg: &TrainConfig,
) -> Result<TraceGrad> {
    let tape = Tape::new();
    let l = trace_objective(&tape, store, model, tr, cfg)?;
    let grads = tape.backward(l.total, store)?;
    Ok(TraceGrad { j_pkt: l.j_pkt.scalar(), j_win: l.j_win.scalar(), grads })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub j_pkt: f64,
    pub j_win: f64,
    /// Seconds; not reproducible.
    pub wall_time: f64,
}

/// Shared shape of mini-batch SGD used by the RBU and the baselines.
#[derive(Clone, Copy, Debug)]
pub struct SgdSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LearningRates,
    pub seed: u64,
}

/// Mini-batch SGD. The batch gradient is the mean of per-trace gradients,
/// summed in ascending trace order; batch order is shuffled per epoch from
/// the seed.
pub fn run_sgd<F>(
    n_traces: usize,
    schedule: SgdSchedule,
    store: &mut ParamStore,
    per_trace: F,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>>
where
    F: Fn(&ParamStore, usize) -> Result<TraceGrad> + Sync,
{
    if n_traces == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut log = Vec::with_capacity(schedule.epochs);
    for epoch in 1..=schedule.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..n_traces).collect();
        order.shuffle(&mut stream(schedule.seed, "epoch", epoch as u64));
        let (mut sum_pkt, mut sum_win) = (0.0, 0.0);
        for batch in order.chunks(schedule.batch_size) {
            let mut ids = batch.to_vec();
            ids.sort_unstable();
            let snapshot: &ParamStore = store;
            let results: Vec<Result<TraceGrad>> = ids.par_iter().map(|&i| per_trace(snapshot, i)).collect();
            let mut total = Grads::zeros(store);
            for r in results {
                let r = r?;
                sum_pkt += r.j_pkt;
                sum_win += r.j_win;
                total.add_assign(&r.grads);
            }
            total.scale(1.0 / ids.len() as f64);
            store.sgd_step(&total, &schedule.lr);
        }
        let entry = EpochLog {
            epoch,
            j_pkt: sum_pkt / n_traces as f64,
            j_win: sum_win / n_traces as f64,
            wall_time: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

fn dataset_meta(dataset: &Dataset) -> Result<(GlobalRanges, Vec<StaticFeatures>, String)> {
    let ranges = dataset.global_ranges.ok_or(Error::EmptyDataset)?;
    let feats = dataset.traces.iter().map(|t| t.static_features).collect();
    let protocol = dataset.traces.first().map(|t| t.protocol_tag.clone()).unwrap_or_default();
    Ok((ranges, feats, protocol))
}

/// Initial parameters of an RBU model for `dataset`.
pub fn init_rbu(dataset: &Dataset, cfg: &TrainConfig) -> Result<(RbuModel, ParamStore)> {
    let (ranges, feats, _) = dataset_meta(dataset)?;
    let mut store = ParamStore::new();
    let mut rng = stream(cfg.seed, "init", 0);
    let model = RbuModel::init(&mut store, cfg.model.clone(), &feats, &ranges, &mut rng)?;
    Ok((model, store))
}

pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_observed(dataset, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_observed(dataset: &Dataset, cfg: &TrainConfig, on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutput> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (ranges, feats, protocol) = dataset_meta(dataset)?;
    let prepared = prepare(dataset, &cfg.model, &ranges)?;
    let (model, mut store) = init_rbu(dataset, cfg)?;
    let schedule = SgdSchedule { epochs: cfg.epochs, batch_size: cfg.batch_size, lr: cfg.lr, seed: cfg.seed };
    let log =
        run_sgd(prepared.len(), schedule, &mut store, |s, i| trace_gradient(s, &model, &prepared[i], cfg), on_epoch)?;
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        model: ModelSpec::Rbu(cfg.model.clone()),
        params: store,
        bins: Discretizer::new(cfg.model.n_bins, 0.0, 1.0)?,
        ranges,
        train_features: feats,
        train_protocol: protocol,
    };
    Ok(TrainOutput { checkpoint, log })
}

/// Fit quality of a trained RBU on one trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitReport {
    pub j_pkt: f64,
    pub j_win: f64,
    /// Mean |ŷ − y| / y_max over delivered packets.
    pub mean_norm_delay_error: f64,
}

pub fn fit_report(checkpoint: &Checkpoint, trace: &Trace, cfg: &TrainConfig) -> Result<FitReport> {
    let ModelSpec::Rbu(mc) = &checkpoint.model else {
        return Err(Error::InvalidConfig("fit report needs an RBU checkpoint".into()));
    };
    let model = RbuModel::from_store(&checkpoint.params, mc.clone())?;
    let tr = prepare_trace(0, trace, mc, &checkpoint.ranges)?;
    let tape = Tape::new();
    let l = trace_objective(&tape, &checkpoint.params, &model, &tr, cfg)?;
    let mut err = 0.0;
    let mut n = 0usize;
    for (p, yh) in tr.packets.iter().zip(&l.y_hat) {
        if let Some(y) = p.delay {
            err += (yh - y).abs() / tr.x.y_max;
            n += 1;
        }
    }
    Ok(FitReport { j_pkt: l.j_pkt.scalar(), j_win: l.j_win.scalar(), mean_norm_delay_error: err / n.max(1) as f64 })
}

/// Every packet-level scalar plus `n_window` window-model scalars drawn
/// without replacement.
pub fn gradcheck_coords(store: &ParamStore, n_window: usize, seed: u64) -> Vec<(ParamId, usize)> {
    let mut packet = Vec::new();
    let mut window = Vec::new();
    for (id, p) in store.iter() {
        for k in 0..p.value.len() {
            match p.group {
                Group::Packet => packet.push((id, k)),
                Group::Window => window.push((id, k)),
            }
        }
    }
    let mut rng = stream(seed, "gradcheck", 0);
    let picked: Vec<_> = window.choose_multiple(&mut rng, n_window.min(window.len())).copied().collect();
    packet.extend(picked);
    packet
}

/// Finite-difference check of the mini-batch objective (mean of per-trace
/// `j_pkt + λ·j_win`) at the given coordinates.
pub fn gradcheck_objective(
    store: &ParamStore,
    model: &RbuModel,
    traces: &[PreparedTrace],
    cfg: &TrainConfig,
    coords: &[(ParamId, usize)],
) -> Result<GradCheckReport> {
    gradcheck::<Error, _>(store, coords, |tape, s| {
        let mut acc: Option<Var<'_>> = None;
        for tr in traces {
            acc = Some(sum_opt(acc, trace_objective(tape, s, model, tr, cfg)?.total));
        }
        let n = traces.len().max(1) as f64;
        Ok(acc.ok_or(Error::EmptyDataset)? * (1.0 / n))
    })
}
