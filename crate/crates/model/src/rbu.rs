//! Recurrent Buffering Unit.
//!
//! Three pieces: bounded-sigmoid heads mapping normalized static features to
//! path parameters (d_prop, d_trans, τ), a window-level LSTM producing the
//! cross-traffic level c_w (and routing probability q_w for two paths), and
//! the packet-level FIFO recurrences. The recurrences are generic over
//! [`Real`] so the same code runs on plain floats at inference and on the
//! tape during training.

use pathsim_autodiff::{lstm_stack_step, Group, Linear, Lstm, ParamId, ParamStore, Real, Tape, Tensor, Var};
use pathsim_core::io::{normalize_static, Discretizer, GlobalRanges};
use pathsim_core::trace::{PacketRecord, StaticFeatures, Trace};
use pathsim_core::window::assign_windows;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 0.1;
/// Drop-logit sharpness, 1/s.
pub const DEFAULT_KAPPA: f64 = 200.0;
/// Share of y_min attributed to propagation by the heuristic estimate.
pub const DEFAULT_RHO: f64 = 0.9;
/// Upper bound of the second-queue size scale.
pub const MAX_QUEUE_SCALE: f64 = 4.0;
/// `τ − a` below this is treated as a full buffer during inversion.
pub const DEGENERATE_GAP: f64 = 1e-12;

/// `(hi − lo)·σ(⟨w, x⟩ + bias) + lo`, with `w = [w0, w1, w2, bias]`.
pub fn g_bounded<T: Real>(w: &[T; 4], x: [f64; 3], lo: f64, hi: f64) -> Result<T> {
    if !(lo < hi) {
        return Err(Error::Bounds { lo, hi });
    }
    let z = w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + w[3];
    Ok(z.sigmoid() * (hi - lo) + lo)
}

/// Parameter heads over static features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Tau,
    DProp,
    DTrans,
    /// Second-queue size as a multiple of τ.
    Scale,
    DTrans2,
}

impl Head {
    pub fn param_name(self) -> &'static str {
        match self {
            Head::Tau => "g.tau",
            Head::DProp => "g.dprop",
            Head::DTrans => "g.dtrans",
            Head::Scale => "g.scale",
            Head::DTrans2 => "g.dtrans2",
        }
    }

    /// (a_x, b_x) for a trace with static features `x`.
    pub fn bounds(self, x: &StaticFeatures) -> (f64, f64) {
        match self {
            Head::Tau => (0.0, x.y_max),
            Head::DProp | Head::DTrans | Head::DTrans2 => (0.0, x.y_min),
            Head::Scale => (0.0, MAX_QUEUE_SCALE),
        }
    }
}

/// Physical path parameters in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    pub d_prop: f64,
    pub d_trans: f64,
    pub tau: f64,
}

/// d_prop = ρ·y_min, d_trans = mtu·8 / p95 throughput, τ = y_max − d_prop.
pub fn heuristic_path_params(x: &StaticFeatures, mtu: u32, rho: f64) -> Result<PathEstimate> {
    x.validate()?;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidConfig(format!("rho must lie in (0, 1), got {rho}")));
    }
    let d_prop = x.y_min * rho;
    let tau = x.y_max - d_prop;
    if !(tau > 0.0) {
        return Err(Error::NonPositiveBuffer { y_max: x.y_max, d_prop });
    }
    Ok(PathEstimate { d_prop, d_trans: f64::from(mtu) * 8.0 / x.p95_throughput, tau })
}

/// Least-squares fit of `[w0, w1, w2, bias]` so that `g_bounded` reproduces
/// `targets` (already divided by the upper bound, lower bound 0) in logit
/// space. A small ridge keeps the system solvable for degenerate features.
pub fn fit_head(xs: &[[f64; 3]], ratios: &[f64]) -> [f64; 4] {
    let mut ata = [[0.0; 4]; 4];
    let mut atb = [0.0; 4];
    for (x, r) in xs.iter().zip(ratios) {
        let r = r.clamp(0.02, 0.98);
        let y = (r / (1.0 - r)).ln();
        let row = [x[0], x[1], x[2], 1.0];
        for i in 0..4 {
            atb[i] += row[i] * y;
            for j in 0..4 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    for (i, row) in ata.iter_mut().enumerate() {
        row[i] += 1e-6;
    }
    solve4(ata, atb)
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> [f64; 4] {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap_or(col);
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        if p.abs() < 1e-300 {
            continue;
        }
        for r in 0..4 {
            if r != col {
                let f = a[r][col] / p;
                for c in col..4 {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = if a[i][i].abs() < 1e-300 { 0.0 } else { b[i] / a[i][i] };
    }
    out
}

/// Packet-level cell weights: `wh = [5 input weights, bias]`, `uh`,
/// `wc = [weight, bias]`.
#[derive(Clone, Copy, Debug)]
pub struct CellParams<T> {
    pub wh: [T; 6],
    pub uh: T,
    pub wc: [T; 2],
}

/// The five inputs of the packet RNN, all normalized.
#[derive(Clone, Copy, Debug)]
pub struct Input5<T> {
    pub c_w: T,
    /// Spacing / trace y_max.
    pub spacing: f64,
    /// Size / MTU.
    pub size: f64,
    /// d_{t−1} / trace y_max.
    pub d_prev: T,
    /// Fraction of the current window already elapsed.
    pub frac: f64,
}

impl<T: Real> Input5<T> {
    /// Builds the input vector from raw quantities.
    pub fn new(c_w: T, spacing: f64, size: u32, mtu: u32, d_prev: T, frac: f64, y_max: f64) -> Input5<T> {
        Input5 {
            c_w,
            spacing: spacing / y_max,
            size: f64::from(size) / f64::from(mtu),
            d_prev: d_prev * (1.0 / y_max),
            frac,
        }
    }
}

/// Returns `(c_t, h_t)`: `c_t = (1−γ)c_w + γσ(w_c·h_{t−1} + b_c)` and
/// `h_t = σ(⟨W_h, input⟩ + b_h + U_h·h_{t−1})`.
pub fn cross_traffic_step<T: Real>(p: &CellParams<T>, h_prev: T, input: &Input5<T>, gamma: f64) -> (T, T) {
    let c = input.c_w * (1.0 - gamma) + (p.wc[0] * h_prev + p.wc[1]).sigmoid() * gamma;
    let z = p.wh[0] * input.c_w
        + p.wh[1] * input.spacing
        + p.wh[2] * input.size
        + p.wh[3] * input.d_prev
        + p.wh[4] * input.frac
        + p.wh[5]
        + p.uh * h_prev;
    (c, z.sigmoid())
}

/// Returns `(a_t, d_t)`: `a = d_trans + ReLU(d_prev − s)`, `d = a + c(τ − a)`.
pub fn bottleneck_step<T: Real>(d_prev: T, s: T, c: T, d_trans: T, tau: T) -> (T, T) {
    let a = d_trans + (d_prev - s).relu();
    let d = a + c * (tau - a);
    (a, d)
}

/// Drop logit `κ(d − τ)`.
pub fn drop_logit<T: Real>(d: T, tau: T, kappa: f64) -> T {
    (d - tau) * kappa
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DropMode {
    /// Drop with probability σ(κ(d − τ)).
    Soft { kappa: f64 },
    /// Drop iff d > τ.
    Hard,
}

impl Default for DropMode {
    fn default() -> Self {
        DropMode::Soft { kappa: DEFAULT_KAPPA }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutput {
    pub y: f64,
    /// Drop probability; 0 or 1 in hard mode.
    pub p_drop: f64,
}

pub fn output_step(d: f64, d_prop: f64, tau: f64, mode: DropMode) -> StepOutput {
    let p_drop = match mode {
        DropMode::Soft { kappa } => drop_logit(d, tau, kappa).sigmoid(),
        DropMode::Hard => {
            if d > tau {
                1.0
            } else {
                0.0
            }
        }
    };
    StepOutput { y: d + d_prop, p_drop }
}

/// Per-queue parameters of the hard multi-path recurrence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueParams {
    pub d_trans: f64,
    pub tau: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QueueState {
    /// Bottleneck delay of the last packet admitted to this queue.
    pub d_prev: f64,
    /// Time since that packet was sent.
    pub elapsed: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultipathOutput {
    pub a: f64,
    pub d: f64,
    pub y: f64,
    pub p_drop: f64,
}

/// Offers a packet with spacing `s` to queue `k`. Every queue's elapsed time
/// grows by `s`; no queue state changes until [`admit`] is called for a
/// delivered packet.
pub fn multipath_step(
    queues: &mut [QueueState],
    params: &[QueueParams],
    s: f64,
    c: f64,
    k: usize,
    d_prop: f64,
    mode: DropMode,
) -> Result<MultipathOutput> {
    if k >= queues.len() || k >= params.len() {
        return Err(Error::QueueIndex(k));
    }
    for q in queues.iter_mut() {
        q.elapsed += s;
    }
    let (a, d) = bottleneck_step(queues[k].d_prev, queues[k].elapsed, c, params[k].d_trans, params[k].tau);
    let out = output_step(d, d_prop, params[k].tau, mode);
    Ok(MultipathOutput { a, d, y: out.y, p_drop: out.p_drop })
}

/// Records a delivered packet in queue `k` and resets its elapsed time.
pub fn admit(queues: &mut [QueueState], k: usize, d: f64) {
    queues[k] = QueueState { d_prev: d, elapsed: 0.0 };
}

/// Queue state of the relaxed two-path recurrence used in training.
#[derive(Clone, Copy, Debug)]
pub struct SoftQueue<T> {
    pub d_prev: T,
    pub elapsed: T,
}

/// Output of one relaxed multi-path step.
#[derive(Clone, Copy, Debug)]
pub struct RelaxedOutput<T> {
    /// Expected bottleneck delay over queues.
    pub d: T,
    /// −log P(observed drop status).
    pub drop_nll: T,
}

/// `log Σ exp(v_k)` with the maximum factored out.
pub fn log_sum_exp<T: Real>(v: &[T]) -> T {
    let m = v.iter().map(|x| x.value()).fold(f64::NEG_INFINITY, f64::max);
    let mut acc: Option<T> = None;
    for &x in v {
        let e = (x - m).exp();
        acc = Some(match acc {
            None => e,
            Some(a) => a + e,
        });
    }
    acc.expect("non-empty").ln() + m
}

/// One relaxed step over queues with routing weights `pi` (and their logs).
/// Each queue follows its recurrence with the hard indicator replaced by
/// `pi[k]`; the delay is the `pi`-weighted expectation and the drop
/// likelihood is the mixture of per-queue drop probabilities.
#[allow(clippy::too_many_arguments)]
pub fn relaxed_multipath_step<T: Real>(
    queues: &mut [SoftQueue<T>],
    params: &[(T, T)],
    pi: &[T],
    ln_pi: &[T],
    s: f64,
    c: T,
    kappa: f64,
    delivered: bool,
) -> RelaxedOutput<T> {
    let mut d_exp: Option<T> = None;
    let mut terms = Vec::with_capacity(queues.len());
    let mut cands = Vec::with_capacity(queues.len());
    for (k, q) in queues.iter().enumerate() {
        let (d_trans, tau) = params[k];
        let e = q.elapsed + s;
        let (_, d) = bottleneck_step(q.d_prev, e, c, d_trans, tau);
        let z = drop_logit(d, tau, kappa);
        // log σ(z) = −softplus(−z); log(1 − σ(z)) = −softplus(z).
        let log_p = if delivered { -z.softplus() } else { -(-z).softplus() };
        terms.push(ln_pi[k] + log_p);
        let w = pi[k] * d;
        d_exp = Some(match d_exp {
            None => w,
            Some(acc) => acc + w,
        });
        cands.push((d, e));
    }
    for (k, q) in queues.iter_mut().enumerate() {
        let (d, e) = cands[k];
        if delivered {
            q.d_prev = pi[k] * d + (-pi[k] + 1.0) * q.d_prev;
            q.elapsed = (-pi[k] + 1.0) * e;
        } else {
            q.elapsed = e;
        }
    }
    RelaxedOutput { d: d_exp.expect("at least one queue"), drop_nll: -log_sum_exp(&terms) }
}

/// Result of inverting the recurrences on an observed trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Inversion {
    /// Per packet; `None` for drops.
    pub c: Vec<Option<f64>>,
    /// Per window histogram of c̃_t; `None` for windows without deliveries.
    pub windows: Vec<Option<Vec<f64>>>,
    /// Values clamped into [0, 1].
    pub n_clamped: usize,
    /// Packets with τ ≈ a, mapped to 1.
    pub n_degenerate: usize,
}

/// Recovers per-packet cross traffic from observed delays with γ = 0:
/// `c̃ = clamp((d − a)/(τ − a), 0, 1)` where `d = y − d_prop` and `a` uses
/// the previous delivered packet's inverted delay. Drops are skipped and
/// their spacing carried to the next delivered packet.
pub fn invert_cross_traffic(trace: &Trace, est: &PathEstimate, window_len: f64, bins: &Discretizer) -> Inversion {
    invert_packets(&trace.packets, est, window_len, bins)
}

pub fn invert_packets(packets: &[PacketRecord], est: &PathEstimate, window_len: f64, bins: &Discretizer) -> Inversion {
    let mut c = Vec::with_capacity(packets.len());
    let (mut n_clamped, mut n_degenerate) = (0, 0);
    let mut d_prev = 0.0;
    let mut s_acc = 0.0;
    for p in packets {
        s_acc += p.spacing;
        let Some(y) = p.delay.seconds() else {
            c.push(None);
            continue;
        };
        let d = y - est.d_prop;
        let a = est.d_trans + (d_prev - s_acc).max(0.0);
        let gap = est.tau - a;
        let v = if gap.abs() < DEGENERATE_GAP {
            n_degenerate += 1;
            1.0
        } else {
            let raw = (d - a) / gap;
            let cl = raw.clamp(0.0, 1.0);
            if cl != raw {
                n_clamped += 1;
            }
            cl
        };
        c.push(Some(v));
        d_prev = d;
        s_acc = 0.0;
    }
    let grid = assign_windows(packets, window_len);
    let windows = grid.ranges().into_iter().map(|r| bins.histogram(r.filter_map(|i| c[i]))).collect();
    Inversion { c, windows, n_clamped, n_degenerate }
}

/// How the packet model turns a window distribution into c_w (or q_w)
/// while training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainSelect {
    /// Expectation of bin centers under the softmax; differentiable.
    #[default]
    Expectation,
    /// Center of the most likely bin (lowest index on ties); no gradient.
    Argmax,
}

/// Output head for the routing probability q_w.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QHead {
    /// One sigmoid unit trained with Bernoulli cross-entropy.
    #[default]
    Scalar,
    /// 100-bin softmax like c_w.
    Binned,
}

/// Lowest index among the maxima.
pub fn argmax_first(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Draws an index from a categorical distribution.
pub fn sample_bin<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|v| *v > 0.0).unwrap_or(p.len() - 1)
}

/// Window-level model: LSTM over windows with constant static-feature input.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowModel {
    pub lstm: Lstm,
    pub cw: Linear,
    pub q: Option<(QHead, Linear)>,
    pub n_bins: usize,
}

/// Raw outputs for one window.
#[derive(Clone, Copy, Debug)]
pub struct WindowStep<'t> {
    /// 1 × n_bins.
    pub cw_logits: Var<'t>,
    /// 1 × 1 (scalar head) or 1 × n_bins.
    pub q_logits: Option<Var<'t>>,
}

impl WindowModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        hidden: usize,
        layers: usize,
        n_bins: usize,
        q_head: Option<QHead>,
        weight_decay: f64,
        rng: &mut impl Rng,
    ) -> Result<WindowModel> {
        let lstm = Lstm::new(store, "win.lstm", 3, hidden, layers, Group::Window, weight_decay, rng)?;
        let cw = Linear::new(store, "win.cw", hidden, n_bins, Group::Window, weight_decay, rng)?;
        let q = match q_head {
            None => None,
            Some(kind) => {
                let out = if kind == QHead::Scalar { 1 } else { n_bins };
                Some((kind, Linear::new(store, "win.q", hidden, out, Group::Window, weight_decay, rng)?))
            }
        };
        Ok(WindowModel { lstm, cw, q, n_bins })
    }

    pub fn from_store(store: &ParamStore, layers: usize, n_bins: usize, q_head: Option<QHead>) -> Result<WindowModel> {
        let q = match q_head {
            None => None,
            Some(kind) => Some((kind, Linear::from_ids(store, "win.q")?)),
        };
        Ok(WindowModel {
            lstm: Lstm::from_ids(store, "win.lstm", layers)?,
            cw: Linear::from_ids(store, "win.cw")?,
            q,
            n_bins,
        })
    }

    /// Unrolls `n_windows` steps with input `x_norm`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x_norm: [f64; 3],
        n_windows: usize,
    ) -> Result<Vec<WindowStep<'t>>> {
        let layers = self.lstm.bind(tape, store);
        let cw = self.cw.bind(tape, store);
        let q = self.q.as_ref().map(|(_, l)| l.bind(tape, store));
        let mut state = self.lstm.zero_state(tape);
        let mut out = Vec::with_capacity(n_windows);
        for _ in 0..n_windows {
            let x = tape.constant(Tensor::row(x_norm.to_vec()));
            let h = lstm_stack_step(x, &mut state, &layers)?;
            out.push(WindowStep { cw_logits: cw.forward(h)?, q_logits: q.map(|l| l.forward(h)).transpose()? });
        }
        Ok(out)
    }

    /// Softmax distributions over c_w bins (and q_w: a one-element
    /// probability for the scalar head), evaluated without gradients.
    pub fn distributions(
        &self,
        store: &ParamStore,
        x_norm: [f64; 3],
        n_windows: usize,
    ) -> Result<Vec<(Vec<f64>, Option<Vec<f64>>)>> {
        let tape = Tape::new();
        let steps = self.forward(&tape, store, x_norm, n_windows)?;
        Ok(steps
            .iter()
            .map(|s| {
                let q = s.q_logits.map(|l| match self.q_head() {
                    Some(QHead::Scalar) => vec![l.scalar().sigmoid()],
                    _ => Var::value(&l.softmax()).data,
                });
                (Var::value(&s.cw_logits.softmax()).data, q)
            })
            .collect())
    }

    pub fn q_head(&self) -> Option<QHead> {
        self.q.as_ref().map(|(k, _)| *k)
    }
}

/// Static configuration of an RBU model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbuConfig {
    pub hidden: usize,
    pub layers: usize,
    pub n_bins: usize,
    pub gamma: f64,
    pub kappa: f64,
    pub rho: f64,
    pub window_len: f64,
    pub mtu: u32,
    /// Two queues when set.
    pub multipath: bool,
    pub q_head: QHead,
    pub weight_decay: f64,
}

impl Default for RbuConfig {
    fn default() -> Self {
        RbuConfig {
            hidden: 256,
            layers: 2,
            n_bins: 100,
            gamma: DEFAULT_GAMMA,
            kappa: DEFAULT_KAPPA,
            rho: DEFAULT_RHO,
            window_len: pathsim_core::window::DEFAULT_WINDOW_LEN,
            mtu: 1500,
            multipath: false,
            q_head: QHead::Scalar,
            weight_decay: 0.0,
        }
    }
}

impl RbuConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.hidden > 0
            && self.layers > 0
            && self.n_bins >= 2
            && (0.0..=1.0).contains(&self.gamma)
            && self.kappa > 0.0
            && self.rho > 0.0
            && self.rho < 1.0
            && self.window_len > 0.0
            && self.mtu > 0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid RBU configuration {self:?}")))
        }
    }

    pub fn n_queues(&self) -> usize {
        if self.multipath {
            2
        } else {
            1
        }
    }

    pub fn heads(&self) -> Vec<Head> {
        let mut h = vec![Head::Tau, Head::DProp, Head::DTrans];
        if self.multipath {
            h.extend([Head::Scale, Head::DTrans2]);
        }
        h
    }
}

/// Parameter handles of an RBU model inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct RbuModel {
    pub config: RbuConfig,
    pub window: WindowModel,
    pub heads: Vec<(Head, ParamId)>,
    pub wh: ParamId,
    pub uh: ParamId,
    pub wc: ParamId,
}

/// Scalar views of the packet-level parameters.
#[derive(Clone, Debug)]
pub struct BoundRbu<T> {
    pub heads: Vec<(Head, [T; 4])>,
    pub cell: CellParams<T>,
}

/// Path parameters of one trace.
#[derive(Clone, Copy, Debug)]
pub struct PathValues<T> {
    pub d_prop: T,
    pub d_trans: T,
    pub tau: T,
    /// (d_trans, τ) of the second queue.
    pub second: Option<(T, T)>,
}

impl<T: Real> BoundRbu<T> {
    fn head(&self, h: Head) -> Option<&[T; 4]> {
        self.heads.iter().find(|(k, _)| *k == h).map(|(_, w)| w)
    }

    pub fn path_values(&self, x: &StaticFeatures, x_norm: [f64; 3]) -> Result<PathValues<T>> {
        let eval = |h: Head| -> Result<T> {
            let w = self.head(h).ok_or_else(|| Error::InvalidConfig(format!("missing head {h:?}")))?;
            let (lo, hi) = h.bounds(x);
            g_bounded(w, x_norm, lo, hi)
        };
        let tau = eval(Head::Tau)?;
        let second = if self.head(Head::Scale).is_some() {
            Some((eval(Head::DTrans2)?, tau * eval(Head::Scale)?))
        } else {
            None
        };
        Ok(PathValues { d_prop: eval(Head::DProp)?, d_trans: eval(Head::DTrans)?, tau, second })
    }
}

fn scalars<'t, const N: usize>(tape: &'t Tape, store: &ParamStore, id: ParamId) -> Result<[Var<'t>; N]> {
    let v = tape.param(store, id);
    let mut out = [v; N];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = v.select(0, k)?;
    }
    Ok(out)
}

fn values<const N: usize>(store: &ParamStore, id: ParamId) -> [f64; N] {
    let mut out = [0.0; N];
    out.copy_from_slice(&store.value(id).data[..N]);
    out
}

impl RbuModel {
    /// Registers every parameter. Heads are fit to the heuristic estimates
    /// of the training traces; everything else is random.
    pub fn init(
        store: &mut ParamStore,
        config: RbuConfig,
        train_features: &[StaticFeatures],
        ranges: &GlobalRanges,
        rng: &mut impl Rng,
    ) -> Result<RbuModel> {
        config.validate()?;
        if train_features.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let q_head = config.multipath.then_some(config.q_head);
        let wd = config.weight_decay;
        let window = WindowModel::new(store, config.hidden, config.layers, config.n_bins, q_head, wd, rng)?;
        let xs: Vec<[f64; 3]> = train_features.iter().map(|x| normalize_static(x, ranges)).collect();
        let mut est = Vec::with_capacity(train_features.len());
        for x in train_features {
            est.push(heuristic_path_params(x, config.mtu, config.rho)?);
        }
        let mut heads = Vec::new();
        for h in config.heads() {
            let ratios: Vec<f64> = train_features
                .iter()
                .zip(&est)
                .map(|(x, e)| {
                    let v = match h {
                        Head::Tau => e.tau,
                        Head::DProp => e.d_prop,
                        Head::DTrans | Head::DTrans2 => e.d_trans,
                        Head::Scale => 2.0,
                    };
                    let (lo, hi) = h.bounds(x);
                    (v - lo) / (hi - lo)
                })
                .collect();
            let w = fit_head(&xs, &ratios);
            heads.push((h, store.add(h.param_name(), Tensor::row(w.to_vec()), Group::Packet, wd)?));
        }
        let small =
            |n: usize, rng: &mut dyn rand::RngCore| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect() };
        let wh = store.add("rbu.wh", Tensor::row(small(6, rng)), Group::Packet, wd)?;
        let uh = store.add("rbu.uh", Tensor::row(small(1, rng)), Group::Packet, wd)?;
        let wc = store.add("rbu.wc", Tensor::row(small(2, rng)), Group::Packet, wd)?;
        Ok(RbuModel { config, window, heads, wh, uh, wc })
    }

    pub fn from_store(store: &ParamStore, config: RbuConfig) -> Result<RbuModel> {
        let q_head = config.multipath.then_some(config.q_head);
        let window = WindowModel::from_store(store, config.layers, config.n_bins, q_head)?;
        let heads = config.heads().into_iter().map(|h| Ok((h, store.id(h.param_name())?))).collect::<Result<_>>()?;
        Ok(RbuModel {
            window,
            heads,
            wh: store.id("rbu.wh")?,
            uh: store.id("rbu.uh")?,
            wc: store.id("rbu.wc")?,
            config,
        })
    }

    /// Scalar count of the packet-level parameters (heads and cell).
    pub fn n_packet_params(&self, store: &ParamStore) -> usize {
        store.n_scalars(Some(Group::Packet))
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Result<BoundRbu<Var<'t>>> {
        let heads =
            self.heads.iter().map(|(h, id)| Ok((*h, scalars::<4>(tape, store, *id)?))).collect::<Result<_>>()?;
        let [uh] = scalars::<1>(tape, store, self.uh)?;
        Ok(BoundRbu {
            heads,
            cell: CellParams { wh: scalars(tape, store, self.wh)?, uh, wc: scalars(tape, store, self.wc)? },
        })
    }

    pub fn values(&self, store: &ParamStore) -> BoundRbu<f64> {
        BoundRbu {
            heads: self.heads.iter().map(|(h, id)| (*h, values::<4>(store, *id))).collect(),
            cell: CellParams {
                wh: values(store, self.wh),
                uh: values::<1>(store, self.uh)[0],
                wc: values(store, self.wc),
            },
        }
    }
}
