//! Closed-loop simulation: a trained model stands in for the path while a
//! congestion-control sender reacts to its answers.

use pathsim_core::io::{normalize_static, Dataset, SplitTag};
use pathsim_core::protocols::{drive, make_sender, Outcome, PathEnvironment, SenderKind, SenderParams};
use pathsim_core::rng::{derive_seed, stream, StreamRng};
use pathsim_core::trace::{StaticFeatures, Trace};
use pathsim_core::window::{window_count, window_index};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::BaselineEnv;
use crate::checkpoint::{Checkpoint, ModelSpec};
use crate::error::{Error, Result};
use crate::rbu::{
    admit, cross_traffic_step, multipath_step, sample_bin, CellParams, DropMode, Input5, QHead, QueueParams,
    QueueState, RbuConfig, RbuModel,
};

/// One closed-loop run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRun {
    pub duration: f64,
    pub sender: SenderKind,
    pub sender_params: SenderParams,
    pub seed: u64,
    /// RBU drop rule; `None` uses the soft rule with the model's κ.
    pub drop_mode: Option<DropMode>,
}

/// RBU as a path: window distributions are unrolled once, then each packet
/// runs the packet cell and the queue recurrence.
pub struct RbuEnv {
    config: RbuConfig,
    cell: CellParams<f64>,
    x: StaticFeatures,
    d_prop: f64,
    tau: f64,
    queue_params: Vec<QueueParams>,
    queues: Vec<QueueState>,
    /// Sampled c_w per window.
    cw: Vec<f64>,
    /// Probability of routing to the second queue per window.
    q: Vec<f64>,
    mode: DropMode,
    h: f64,
    d_last: f64,
    last_send: Option<f64>,
    rng: StreamRng,
}

impl RbuEnv {
    pub fn new(
        checkpoint: &Checkpoint,
        x: StaticFeatures,
        duration: f64,
        mode: Option<DropMode>,
        mut rng: StreamRng,
    ) -> Result<RbuEnv> {
        let ModelSpec::Rbu(config) = &checkpoint.model else {
            return Err(Error::InvalidConfig("not an RBU checkpoint".into()));
        };
        let model = RbuModel::from_store(&checkpoint.params, config.clone())?;
        let x_norm = normalize_static(&x, &checkpoint.ranges);
        let bound = model.values(&checkpoint.params);
        let pv = bound.path_values(&x, x_norm)?;
        let mut queue_params = vec![QueueParams { d_trans: pv.d_trans, tau: pv.tau }];
        if let Some((d_trans, tau)) = pv.second {
            queue_params.push(QueueParams { d_trans, tau });
        }
        let n_windows = window_count(duration, config.window_len).max(1);
        let dists = model.window.distributions(&checkpoint.params, x_norm, n_windows)?;
        let bins = checkpoint.bins;
        let mut cw = Vec::with_capacity(n_windows);
        let mut q = Vec::with_capacity(n_windows);
        for (c_dist, q_dist) in &dists {
            cw.push(bins.bin_to_value(sample_bin(c_dist, &mut rng), &mut rng));
            q.push(match (model.window.q_head(), q_dist) {
                (Some(QHead::Scalar), Some(p)) => p[0],
                (Some(QHead::Binned), Some(p)) => bins.bin_to_value(sample_bin(p, &mut rng), &mut rng),
                _ => 0.0,
            });
        }
        Ok(RbuEnv {
            cell: bound.cell,
            x,
            d_prop: pv.d_prop,
            tau: pv.tau,
            queues: vec![QueueState::default(); queue_params.len()],
            queue_params,
            cw,
            q,
            mode: mode.unwrap_or(DropMode::Soft { kappa: config.kappa }),
            h: 0.0,
            d_last: 0.0,
            last_send: None,
            rng,
            config: config.clone(),
        })
    }

    /// Path parameters in use: (d_prop, per-queue parameters).
    pub fn path(&self) -> (f64, &[QueueParams]) {
        (self.d_prop, &self.queue_params)
    }

    /// Replaces the learned queues, e.g. to pin τ of a second path. Must be
    /// called before the first packet.
    pub fn set_queues(&mut self, params: Vec<QueueParams>) -> Result<()> {
        if params.is_empty() || params.len() > 2 || self.last_send.is_some() {
            return Err(Error::InvalidConfig("one or two queues, set before the first packet".into()));
        }
        self.queues = vec![QueueState::default(); params.len()];
        self.queue_params = params;
        Ok(())
    }

    /// Routes every window to the second queue with probability `q`.
    pub fn set_routing(&mut self, q: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidConfig(format!("routing probability {q} outside [0, 1]")));
        }
        self.q.iter_mut().for_each(|v| *v = q);
        Ok(())
    }
}

impl PathEnvironment for RbuEnv {
    fn submit(&mut self, send_time: f64, size: u32) -> pathsim_core::Result<Outcome> {
        let wl = self.config.window_len;
        let w = window_index(send_time, wl).min(self.cw.len() - 1);
        let spacing = self.last_send.map_or(0.0, |p| send_time - p);
        self.last_send = Some(send_time);
        let frac = (send_time / wl - w as f64).clamp(0.0, 1.0);
        let input = Input5::new(self.cw[w], spacing, size, self.config.mtu, self.d_last, frac, self.x.y_max);
        let (c, h) = cross_traffic_step(&self.cell, self.h, &input, self.config.gamma);
        self.h = h;
        let k = usize::from(self.queues.len() > 1 && self.rng.gen::<f64>() < self.q[w]);
        let out = multipath_step(&mut self.queues, &self.queue_params, spacing, c, k, self.d_prop, self.mode)
            .map_err(|e| pathsim_core::Error::InvalidConfig(e.to_string()))?;
        let dropped = match self.mode {
            DropMode::Hard => out.p_drop >= 1.0,
            DropMode::Soft { .. } => self.rng.gen::<f64>() < out.p_drop,
        };
        if dropped {
            return Ok(Outcome::Dropped);
        }
        admit(&mut self.queues, k, out.d);
        self.d_last = out.d;
        Ok(Outcome::Delivered(out.y))
    }

    fn feedback_time(&self, send_time: f64, outcome: Outcome) -> f64 {
        match outcome {
            Outcome::Delivered(y) => send_time + y + self.d_prop,
            Outcome::Dropped => send_time + 4.0 * self.d_prop + self.tau,
        }
    }
}

/// Static features drawn from the training set.
pub fn sample_features(checkpoint: &Checkpoint, rng: &mut StreamRng) -> StaticFeatures {
    checkpoint.train_features[rng.gen_range(0..checkpoint.train_features.len())]
}

pub fn simulate(checkpoint: &Checkpoint, run: &SimRun) -> Result<Trace> {
    if !(run.duration > 0.0) {
        return Err(Error::InvalidConfig(format!("duration must be positive, got {}", run.duration)));
    }
    let mut rng = stream(run.seed, "sim", 0);
    let x = sample_features(checkpoint, &mut rng);
    let mut env: Box<dyn PathEnvironment> = match &checkpoint.model {
        ModelSpec::Rbu(_) => Box::new(RbuEnv::new(checkpoint, x, run.duration, run.drop_mode, rng)?),
        ModelSpec::Baseline { .. } => Box::new(BaselineEnv::new(checkpoint, x, rng)?),
    };
    let mut sender = make_sender(run.sender, &run.sender_params, run.seed)?;
    Ok(drive(sender.as_mut(), env.as_mut(), run.duration, "", run.seed)?)
}

/// `n` runs of `template` with seeds derived from `seed`, in index order.
pub fn simulate_batch(checkpoint: &Checkpoint, template: &SimRun, n: usize, seed: u64) -> Result<Dataset> {
    let traces = (0..n)
        .into_par_iter()
        .map(|i| simulate(checkpoint, &SimRun { seed: derive_seed(seed, "run", i as u64), ..template.clone() }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(traces, SplitTag::Test))
}
