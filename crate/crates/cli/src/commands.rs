//! The subcommands. Every argument struct doubles as the config-file schema
//! of its command; after merging, defaults are filled in and the resolved
//! struct is what the manifest records.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context as _, Result};
use clap::{Args, ValueEnum};
use pathsim_autodiff::LearningRates;
use pathsim_core::groundtruth::{generate_dataset, generate_dataset_with, GenerateSpec, ScenarioBounds};
use pathsim_core::io::{read_dataset, write_dataset, Dataset, SplitTag};
use pathsim_core::metrics::mmd::ChunkSpec;
use pathsim_core::metrics::{evaluate, EvalConfig};
use pathsim_core::protocols::{SenderKind, SenderParams};
use pathsim_core::trace::Trace;
use pathsim_core::window::window_index;
use pathsim_model::baselines::{train_baseline_observed, BaselineConfig, BaselineKind, BaselineTrainConfig};
use pathsim_model::training::{gradcheck_coords, gradcheck_objective, init_rbu, prepare, train_observed, EpochLog};
use pathsim_model::{
    discriminative_score, simulate_batch, Checkpoint, DiscConfig, DropMode, QHead, RbuConfig, SimRun, TrainConfig,
    TrainSelect,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{load_section, overlay};
use crate::manifest::{prepare_out, Manifest};
use crate::{Context, GateFailed, Invalid};

pub const TRACES_FILE: &str = "traces.jsonl";
pub const RANGES_FILE: &str = "ranges.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Maximum relative error accepted by the gradient check.
pub const GRADCHECK_GATE: f64 = 1e-4;

fn merged<T: Serialize + serde::de::DeserializeOwned>(flags: &T, ctx: &Context, command: &str) -> Result<T> {
    let file = match &ctx.config {
        Some(p) => load_section(p, command)?,
        None => None,
    };
    overlay(flags, file)
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Invalid(format!("--{flag} is required")).into())
}

fn parse_protocol(s: &str) -> Result<SenderKind> {
    SenderKind::parse(s)
        .ok_or_else(|| Invalid(format!("unknown protocol {s:?} (reno, cubic, vegas, ledbat, constant)")).into())
}

/// A dataset file, or a directory holding `traces.jsonl`.
fn dataset_file(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(TRACES_FILE)
    } else {
        p.to_path_buf()
    }
}

fn load_dataset(p: &Path) -> Result<Dataset> {
    let f = dataset_file(p);
    read_dataset(&f).with_context(|| format!("reading dataset {}", f.display()))
}

/// Writes a line to stdout; a closed pipe is not an error.
fn say(line: String) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

// ---------------------------------------------------------------- gen

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// 4 configs x 10 patterns per scenario
    Desk,
    /// 14 configs x 70 patterns per scenario
    Full,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenArgs {
    /// Scenario ids, comma separated: 1 (40-50 Mbit/s), 2 (20-30 Mbit/s), 3 (1-10 Mbit/s) [default: 1,2,3]
    #[arg(long)]
    pub scenario: Option<String>,
    /// Link configurations per scenario [default: 4 at desk scale, 14 at full scale]
    #[arg(long)]
    pub configs: Option<usize>,
    /// Cross-traffic patterns per configuration [default: 10 at desk scale, 70 at full scale]
    #[arg(long)]
    pub patterns: Option<usize>,
    /// Sender: reno, cubic, vegas, ledbat or constant [default: cubic]
    #[arg(long)]
    pub protocol: Option<String>,
    /// Seconds per trace [default: 10]
    #[arg(long)]
    pub duration: Option<f64>,
    /// Master seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Preset for --configs and --patterns [default: desk]
    #[arg(long, value_enum)]
    pub scale: Option<Scale>,
    /// Multiply every scenario's bandwidth bounds by this factor [default: 1]
    #[arg(long)]
    pub bandwidth_scale: Option<f64>,
    /// Replace the bandwidth bounds of every scenario with LO,HI in Mbit/s
    #[arg(long)]
    pub bandwidth_range: Option<String>,
    /// Output directory for traces.jsonl, ranges.json and manifest.json
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl GenArgs {
    fn resolve(mut self) -> Result<GenArgs> {
        let scale = *self.scale.get_or_insert(Scale::Desk);
        let (configs, patterns) = match scale {
            Scale::Desk => (4, 10),
            Scale::Full => (14, 70),
        };
        self.scenario.get_or_insert_with(|| "1,2,3".into());
        self.configs.get_or_insert(configs);
        self.patterns.get_or_insert(patterns);
        self.protocol.get_or_insert_with(|| "cubic".into());
        self.duration.get_or_insert(10.0);
        self.seed.get_or_insert(0);
        self.bandwidth_scale.get_or_insert(1.0);
        required(&self.out, "out")?;
        Ok(self)
    }

    pub fn spec(&self) -> Result<GenerateSpec> {
        let scale = self.bandwidth_scale.unwrap_or(1.0);
        if !(scale > 0.0) {
            return Err(Invalid("--bandwidth-scale must be positive".into()).into());
        }
        let range = match &self.bandwidth_range {
            None => None,
            Some(s) => Some(parse_range(s)?),
        };
        let mut scenarios = Vec::new();
        for part in self.scenario.as_deref().unwrap_or("1,2,3").split(',') {
            let id: u8 = part.trim().parse().map_err(|_| Invalid(format!("bad scenario id {part:?}")))?;
            let mut b = ScenarioBounds::scenario(id)?.scale_bandwidth(scale);
            if let Some((lo, hi)) = range {
                b.bandwidth = (lo * 1e6, hi * 1e6);
            }
            scenarios.push((id, b));
        }
        let sender = parse_protocol(self.protocol.as_deref().unwrap_or("cubic"))?;
        let mut spec = GenerateSpec::desk(sender, self.seed.unwrap_or(0));
        spec.scenarios = scenarios;
        spec.n_configs = self.configs.unwrap_or(4);
        spec.n_patterns = self.patterns.unwrap_or(10);
        spec.duration = self.duration.unwrap_or(10.0);
        Ok(spec)
    }
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let bad = || Invalid(format!("--bandwidth-range expects LO,HI in Mbit/s, got {s:?}"));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(bad().into());
    }
    Ok((lo, hi))
}

pub fn gen(flags: &GenArgs, ctx: &Context) -> Result<()> {
    let start = Instant::now();
    let args = merged(flags, ctx, "gen")?.resolve()?;
    let spec = args.spec()?;
    let out = args.out.clone().expect("resolved");
    let paths = prepare_out(&out, &[TRACES_FILE, RANGES_FILE], ctx.force)?;
    let ds = generate_dataset_with(&spec, |cells, run| cells.par_iter().map(run).collect())?;
    write_dataset(&ds, &paths[0])?;
    let mut m = Manifest::new("gen", &args)?;
    m.seeds.insert("seed".into(), spec.seed);
    m.outputs = paths.iter().map(|p| path_string(p)).collect();
    m.wall_time_s = start.elapsed().as_secs_f64();
    m.write(&out)?;
    eprintln!("wrote {} traces to {}", ds.len(), paths[0].display());
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Rbu,
    LstmWin,
    LstmPkt,
    LstmPktFifo,
}

impl ModelKind {
    fn baseline(self) -> Option<BaselineKind> {
        match self {
            ModelKind::Rbu => None,
            ModelKind::LstmWin => Some(BaselineKind::LstmWin),
            ModelKind::LstmPkt => Some(BaselineKind::LstmPkt),
            ModelKind::LstmPktFifo => Some(BaselineKind::LstmPktFifo),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QHeadArg {
    Scalar,
    Binned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectArg {
    Expectation,
    Argmax,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// Training dataset: a traces.jsonl file or a directory written by gen
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model to train [default: rbu]
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Passes over the dataset [default: 10]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Traces per mini-batch [default: 8]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Two-queue RBU with a routing-probability head
    #[arg(long)]
    pub multipath: bool,
    /// Seed for initialization and batch order [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for checkpoint.json, loss.csv and manifest.json
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Learning rate of the window model; the baselines' only rate [default: 0.001]
    #[arg(long)]
    pub lr_window: Option<f64>,
    /// Learning rate of the packet-level RBU parameters [default: 0.01]
    #[arg(long)]
    pub lr_packet: Option<f64>,
    /// Weight of the window loss [default: 1]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// LSTM hidden units per layer [default: 256]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// LSTM layers [default: 2]
    #[arg(long)]
    pub layers: Option<usize>,
    /// Mixing weight of the per-packet cross-traffic update, in [0, 1] [default: 0.1]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Steepness of the soft drop rule [default: 200]
    #[arg(long)]
    pub kappa: Option<f64>,
    /// L2 weight decay [default: 0]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Routing-probability head for --multipath [default: scalar]
    #[arg(long, value_enum)]
    pub q_head: Option<QHeadArg>,
    /// How c_w is read from the window distribution during training [default: expectation]
    #[arg(long, value_enum)]
    pub select: Option<SelectArg>,
    /// Backpropagate packet state across window boundaries
    #[arg(long)]
    pub no_tbptt: bool,
    /// Run the finite-difference gradient check on the data first; fails with exit code 3 above 1e-4
    #[arg(long)]
    pub gradcheck: bool,
}

impl TrainArgs {
    fn resolve(mut self) -> Result<TrainArgs> {
        let model = *self.model.get_or_insert(ModelKind::Rbu);
        let rbu = TrainConfig::default();
        let base = BaselineTrainConfig::default();
        self.epochs.get_or_insert(rbu.epochs);
        self.batch.get_or_insert(rbu.batch_size);
        self.seed.get_or_insert(0);
        if model == ModelKind::Rbu {
            self.lr_window.get_or_insert(rbu.lr.window);
            self.lr_packet.get_or_insert(rbu.lr.packet);
            self.lambda.get_or_insert(rbu.lambda);
            self.hidden.get_or_insert(rbu.model.hidden);
            self.layers.get_or_insert(rbu.model.layers);
            self.gamma.get_or_insert(rbu.model.gamma);
            self.kappa.get_or_insert(rbu.model.kappa);
            self.weight_decay.get_or_insert(rbu.model.weight_decay);
            self.q_head.get_or_insert(QHeadArg::Scalar);
            self.select.get_or_insert(SelectArg::Expectation);
        } else {
            let unused = [
                ("lr-packet", self.lr_packet.is_some()),
                ("lambda", self.lambda.is_some()),
                ("gamma", self.gamma.is_some()),
                ("kappa", self.kappa.is_some()),
                ("q-head", self.q_head.is_some()),
                ("select", self.select.is_some()),
                ("multipath", self.multipath),
                ("no-tbptt", self.no_tbptt),
                ("gradcheck", self.gradcheck),
            ];
            if let Some((flag, _)) = unused.iter().find(|u| u.1) {
                return Err(Invalid(format!("--{flag} applies to --model rbu only")).into());
            }
            self.lr_window.get_or_insert(base.lr);
            self.hidden.get_or_insert(base.model.hidden);
            self.layers.get_or_insert(base.model.layers);
            self.weight_decay.get_or_insert(base.model.weight_decay);
        }
        required(&self.data, "data")?;
        required(&self.out, "out")?;
        Ok(self)
    }

    /// RBU training configuration of resolved arguments.
    pub fn rbu_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch.unwrap_or(d.batch_size),
            lr: LearningRates {
                window: self.lr_window.unwrap_or(d.lr.window),
                packet: self.lr_packet.unwrap_or(d.lr.packet),
            },
            lambda: self.lambda.unwrap_or(d.lambda),
            seed: self.seed.unwrap_or(0),
            tbptt: !self.no_tbptt,
            select: match self.select {
                Some(SelectArg::Argmax) => TrainSelect::Argmax,
                _ => TrainSelect::Expectation,
            },
            model: RbuConfig {
                hidden: self.hidden.unwrap_or(d.model.hidden),
                layers: self.layers.unwrap_or(d.model.layers),
                gamma: self.gamma.unwrap_or(d.model.gamma),
                kappa: self.kappa.unwrap_or(d.model.kappa),
                multipath: self.multipath,
                q_head: match self.q_head {
                    Some(QHeadArg::Binned) => QHead::Binned,
                    _ => QHead::Scalar,
                },
                weight_decay: self.weight_decay.unwrap_or(d.model.weight_decay),
                ..d.model
            },
        }
    }

    /// Baseline training configuration of resolved arguments.
    pub fn baseline_config(&self) -> BaselineTrainConfig {
        let d = BaselineTrainConfig::default();
        BaselineTrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch.unwrap_or(d.batch_size),
            lr: self.lr_window.unwrap_or(d.lr),
            seed: self.seed.unwrap_or(0),
            model: BaselineConfig {
                hidden: self.hidden.unwrap_or(d.model.hidden),
                layers: self.layers.unwrap_or(d.model.layers),
                weight_decay: self.weight_decay.unwrap_or(d.model.weight_decay),
                ..d.model
            },
        }
    }
}

pub fn train(flags: &TrainArgs, ctx: &Context) -> Result<()> {
    let start = Instant::now();
    let args = merged(flags, ctx, "train")?.resolve()?;
    let data = args.data.clone().expect("resolved");
    let out = args.out.clone().expect("resolved");
    let paths = prepare_out(&out, &[CHECKPOINT_FILE, LOSS_FILE], ctx.force)?;
    let ds = load_dataset(&data)?;
    let model = args.model.expect("resolved");
    let progress = |e: &EpochLog| eprintln!("epoch {}: {:.6} {:.6} ({:.1}s)", e.epoch, e.j_pkt, e.j_win, e.wall_time);
    let (output, header) = match model.baseline() {
        None => {
            let cfg = args.rbu_config();
            cfg.validate()?;
            if args.gradcheck {
                run_gradcheck(Some(&ds), &cfg.model, cfg.seed)?;
            }
            (train_observed(&ds, &cfg, progress)?, "epoch,j_pkt,j_win")
        }
        Some(kind) => {
            (train_baseline_observed(&ds, kind, &args.baseline_config(), progress)?, "epoch,delay_ce,drop_ce")
        }
    };
    output.checkpoint.save(&paths[0])?;
    let mut csv = format!("{header}\n");
    for e in &output.log {
        csv.push_str(&format!("{},{},{}\n", e.epoch, e.j_pkt, e.j_win));
    }
    std::fs::write(&paths[1], csv)?;
    let mut m = Manifest::new("train", &args)?;
    m.seeds.insert("seed".into(), args.seed.expect("resolved"));
    m.inputs = vec![path_string(&dataset_file(&data))];
    m.outputs = paths.iter().map(|p| path_string(p)).collect();
    m.epoch_wall_times_s = Some(output.log.iter().map(|e| e.wall_time).collect());
    m.wall_time_s = start.elapsed().as_secs_f64();
    m.write(&out)?;
    eprintln!("wrote {} ({})", paths[0].display(), output.checkpoint.model_id());
    Ok(())
}

// ---------------------------------------------------------------- simulate

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropModeArg {
    /// Drop with probability sigmoid(kappa (d - tau))
    Soft,
    /// Drop exactly when d > tau
    Hard,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// Checkpoint: a checkpoint.json file or a directory written by train
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Sender driving the simulated path [default: the protocol the model was trained on]
    #[arg(long)]
    pub protocol: Option<String>,
    /// Seconds per run [default: 60]
    #[arg(long)]
    pub duration: Option<f64>,
    /// Number of independent runs [default: 1]
    #[arg(long)]
    pub runs: Option<usize>,
    /// Master seed; run i uses a stream derived from it [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// RBU drop rule [default: soft]
    #[arg(long, value_enum)]
    pub drop_mode: Option<DropModeArg>,
    /// Output directory for traces.jsonl, ranges.json and manifest.json
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn checkpoint_file(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CHECKPOINT_FILE)
    } else {
        p.to_path_buf()
    }
}

pub fn simulate(flags: &SimulateArgs, ctx: &Context) -> Result<()> {
    let start = Instant::now();
    let mut args = merged(flags, ctx, "simulate")?;
    let model = required(&args.model, "model")?.clone();
    let out = required(&args.out, "out")?.clone();
    let ckpt_path = checkpoint_file(&model);
    let ckpt = Checkpoint::load(&ckpt_path).with_context(|| format!("loading {}", ckpt_path.display()))?;
    let default_protocol = if ckpt.train_protocol.is_empty() { "cubic".into() } else { ckpt.train_protocol.clone() };
    let protocol = args.protocol.get_or_insert(default_protocol).clone();
    let duration = *args.duration.get_or_insert(60.0);
    let runs = *args.runs.get_or_insert(1);
    let seed = *args.seed.get_or_insert(0);
    let drop_mode = *args.drop_mode.get_or_insert(DropModeArg::Soft);
    if !(duration > 0.0) {
        return Err(Invalid("--duration must be positive".into()).into());
    }
    let sender = parse_protocol(&protocol)?;
    let paths = prepare_out(&out, &[TRACES_FILE, RANGES_FILE], ctx.force)?;
    let template = SimRun {
        duration,
        sender,
        sender_params: SenderParams::default(),
        seed,
        drop_mode: match drop_mode {
            DropModeArg::Soft => None,
            DropModeArg::Hard => Some(DropMode::Hard),
        },
    };
    let ds = simulate_batch(&ckpt, &template, runs, seed)?;
    write_dataset(&ds, &paths[0])?;
    let mut m = Manifest::new("simulate", &args)?;
    m.seeds.insert("seed".into(), seed);
    m.inputs = vec![path_string(&ckpt_path)];
    m.outputs = paths.iter().map(|p| path_string(p)).collect();
    m.wall_time_s = start.elapsed().as_secs_f64();
    m.write(&out)?;
    eprintln!("wrote {} runs ({} on {}) to {}", ds.len(), sender.tag(), ckpt.model_id(), paths[0].display());
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// Reference dataset (usually ground truth): a traces.jsonl file or a directory
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Dataset to score against the reference: a traces.jsonl file or a directory
    #[arg(long)]
    pub evaluated: Option<PathBuf>,
    /// Output directory for report.json, report.csv and manifest.json
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// RBF kernel bandwidth of the MMD [default: 1]
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Packets per MMD chunk [default: 50]
    #[arg(long)]
    pub chunk_len: Option<usize>,
    /// Packets between consecutive chunk starts [default: 100]
    #[arg(long)]
    pub chunk_stride: Option<usize>,
    /// Packets per MMD mini-chunk [default: 15]
    #[arg(long)]
    pub mini_len: Option<usize>,
    /// Also train the classifier for the discriminative score (needs 10 traces per side)
    #[arg(long)]
    pub disc: bool,
    /// Seed of the discriminative classifier [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn eval(flags: &EvalArgs, ctx: &Context) -> Result<()> {
    let start = Instant::now();
    let mut args = merged(flags, ctx, "eval")?;
    let reference = required(&args.reference, "reference")?.clone();
    let evaluated = required(&args.evaluated, "evaluated")?.clone();
    let out = required(&args.out, "out")?.clone();
    let d = EvalConfig::default();
    let cfg = EvalConfig {
        zeta: *args.zeta.get_or_insert(d.zeta),
        chunk: ChunkSpec {
            chunk_len: *args.chunk_len.get_or_insert(d.chunk.chunk_len),
            chunk_stride: *args.chunk_stride.get_or_insert(d.chunk.chunk_stride),
            mini_len: *args.mini_len.get_or_insert(d.chunk.mini_len),
        },
    };
    let seed = *args.seed.get_or_insert(0);
    let paths = prepare_out(&out, &[REPORT_JSON, REPORT_CSV], ctx.force)?;
    let (r, e) = rayon::join(|| load_dataset(&reference), || load_dataset(&evaluated));
    let (r, e) = (r?, e?);
    let mut report = evaluate(&r, &e, &cfg)?;
    if args.disc {
        report.disc_score = Some(discriminative_score(&r, &e, &DiscConfig::default(), seed)?.score);
    }
    std::fs::write(&paths[0], serde_json::to_string_pretty(&report)? + "\n")?;
    std::fs::write(&paths[1], report.to_csv())?;
    let mut m = Manifest::new("eval", &args)?;
    m.seeds.insert("seed".into(), seed);
    m.inputs = vec![path_string(&dataset_file(&reference)), path_string(&dataset_file(&evaluated))];
    m.outputs = paths.iter().map(|p| path_string(p)).collect();
    m.wall_time_s = start.elapsed().as_secs_f64();
    m.write(&out)?;
    say(format!("wd2 (throughput, mean delay): {}", report.wd2_tput_mean_delay));
    say(format!("wd2 (throughput, p95 delay):  {}", report.wd2_tput_p95_delay));
    say(format!("wd1 mean delay: {}", report.wd1_mean_delay));
    say(format!("wd1 p95 delay:  {}", report.wd1_p95_delay));
    if let Some(s) = report.disc_score {
        say(format!("discriminative score: {s}"));
    }
    Ok(())
}

// ---------------------------------------------------------------- gradcheck

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckArgs {
    /// Take the micro-batch from this dataset instead of generating one
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Seed for initialization and coordinate sampling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// LSTM hidden units per layer [default: 256]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// LSTM layers [default: 2]
    #[arg(long)]
    pub layers: Option<usize>,
}

/// Result of one gradient check configuration.
#[derive(Clone, Debug)]
pub struct GradcheckCase {
    pub label: &'static str,
    pub n_coords: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

const MICRO_TRACES: usize = 2;
const MICRO_WINDOWS: f64 = 3.0;
const WINDOW_COORDS: usize = 20;

fn micro_batch(data: Option<&Dataset>, window_len: f64, seed: u64) -> Result<Dataset> {
    let cut = MICRO_WINDOWS * window_len;
    let source = match data {
        Some(d) => d.clone(),
        None => {
            let mut spec = GenerateSpec::desk(SenderKind::CubicLike, seed);
            spec.scenarios = vec![(1, ScenarioBounds::scenario(1)?)];
            spec.n_configs = 1;
            spec.n_patterns = MICRO_TRACES;
            spec.duration = cut;
            generate_dataset(&spec)?
        }
    };
    let mut traces = Vec::new();
    for t in source.traces.iter().take(MICRO_TRACES) {
        // Earliest three consecutive non-empty windows, shifted to t = 0.
        let occupied: std::collections::BTreeSet<usize> =
            t.packets.iter().map(|p| window_index(p.send_time, window_len)).collect();
        let w0 = occupied.iter().copied().find(|&w| (w..w + MICRO_WINDOWS as usize).all(|v| occupied.contains(&v)));
        let shift = w0.unwrap_or(0) as f64 * window_len;
        let kept = t
            .packets
            .iter()
            .filter(|p| p.send_time >= shift && p.send_time < shift + cut)
            .map(|p| (p.send_time - shift, p.size, p.delay));
        traces.push(Trace::from_outcomes(kept, t.protocol_tag.clone(), t.config_tag.clone(), t.seed)?);
    }
    if traces.len() < MICRO_TRACES {
        return Err(Invalid(format!("gradient check needs {MICRO_TRACES} traces, got {}", traces.len())).into());
    }
    Ok(Dataset::new(traces, SplitTag::Train))
}

/// Central finite differences against backpropagation of the full training
/// objective on a 2-trace, 3-window micro-batch: every packet-level scalar
/// plus 20 sampled window-model scalars, single-path and two-path.
pub fn gradcheck_suite(data: Option<&Dataset>, model: &RbuConfig, seed: u64) -> Result<Vec<GradcheckCase>> {
    let ds = micro_batch(data, model.window_len, seed)?;
    let mut cases = Vec::new();
    for (label, multipath) in [("single-path", false), ("two-path", true)] {
        let cfg = TrainConfig {
            seed,
            tbptt: false,
            select: TrainSelect::Expectation,
            model: RbuConfig { multipath, ..model.clone() },
            ..TrainConfig::default()
        };
        let (rbu, store) = init_rbu(&ds, &cfg)?;
        let ranges = ds.global_ranges.expect("non-empty micro-batch");
        let prepared = prepare(&ds, &cfg.model, &ranges)?;
        let coords = gradcheck_coords(&store, WINDOW_COORDS, seed);
        let report = gradcheck_objective(&store, &rbu, &prepared, &cfg, &coords)?;
        cases.push(GradcheckCase {
            label,
            n_coords: report.coords.len(),
            max_rel_error: report.max_rel_error(),
            worst: report.worst().map(|w| (store.param(w.param).name.clone(), w.index)),
        });
    }
    Ok(cases)
}

fn run_gradcheck(data: Option<&Dataset>, model: &RbuConfig, seed: u64) -> Result<()> {
    let cases = gradcheck_suite(data, model, seed)?;
    let mut worst = 0.0f64;
    for c in &cases {
        let at = c.worst.as_ref().map(|(n, k)| format!(" (worst at {n}[{k}])")).unwrap_or_default();
        say(format!("{}: max relative error {:.3e} over {} coordinates{at}", c.label, c.max_rel_error, c.n_coords));
        worst = worst.max(c.max_rel_error);
    }
    if worst > GRADCHECK_GATE {
        return Err(GateFailed(format!("max relative error {worst:.3e} exceeds {GRADCHECK_GATE:e}")).into());
    }
    say(format!("gradient check passed (gate {GRADCHECK_GATE:e})"));
    Ok(())
}

pub fn gradcheck(flags: &GradcheckArgs, ctx: &Context) -> Result<()> {
    let args = merged(flags, ctx, "gradcheck")?;
    let d = RbuConfig::default();
    let model = RbuConfig { hidden: args.hidden.unwrap_or(d.hidden), layers: args.layers.unwrap_or(d.layers), ..d };
    model.validate()?;
    let ds = match &args.data {
        Some(p) => Some(load_dataset(p)?),
        None => None,
    };
    run_gradcheck(ds.as_ref(), &model, args.seed.unwrap_or(0))
}
