//! Adam, the step learning-rate schedule and the training loops for both
//! prior families, including noise-conditioned fine-tuning.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ar::{ArConfig, ArModel};
use crate::checkpoint::{Checkpoint, PriorModel};
use crate::density::ModelFamily;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowModel};
use crate::signal::{Dataset, SourceKind, Split};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub schedule_gamma: f64,
    /// number of equally spaced learning-rate decreases
    pub schedule_steps: usize,
    pub batch_size: usize,
    pub total_steps: usize,
    pub seed: u64,
    /// fine-tuning step budget
    pub finetune_steps: usize,
    /// window of the moving-average convergence test
    pub convergence_window: usize,
    /// relative improvement below which a window counts as stalled
    pub convergence_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            schedule_gamma: 0.6,
            schedule_steps: 5,
            batch_size: 4,
            total_steps: 6000,
            seed: 0,
            finetune_steps: 2000,
            convergence_window: 200,
            convergence_tol: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn paper_scale() -> Self {
        TrainConfig { batch_size: 5, total_steps: 150_000, finetune_steps: 40_000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.schedule_gamma > 0.0 && self.schedule_gamma < 1.0) {
            return Err(Error::Config(format!("schedule_gamma must be in (0, 1), got {}", self.schedule_gamma)));
        }
        if self.batch_size == 0 || self.convergence_window == 0 {
            return Err(Error::Config("batch_size and convergence_window must be >= 1".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Config("convergence_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Learning rate at `step` of a run of `total_steps`: the initial rate times
/// `gamma^k`, where `k` counts the milestones `i * total / (n + 1)`,
/// `i = 1..=n`, already reached.
pub fn lr_schedule(step: usize, total_steps: usize, config: &TrainConfig) -> f64 {
    let n = config.schedule_steps;
    let passed = (1..=n).filter(|&i| step * (n + 1) >= i * total_steps).count();
    config.learning_rate * config.schedule_gamma.powi(passed as i32)
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = |p: &[Tensor]| p.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        AdamState { m: zeros(params), v: zeros(params), t: 0 }
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.v
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} parameters, {} gradients, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::Shape(format!("adam: parameter {i} is {:?}, gradient {:?}", p.shape(), g.shape())));
        }
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
            *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Architecture of a prior to be trained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSpec {
    Flow(FlowConfig),
    Ar(ArConfig),
}

impl ModelSpec {
    pub fn family(&self) -> ModelFamily {
        match self {
            ModelSpec::Flow(_) => ModelFamily::Flow,
            ModelSpec::Ar(_) => ModelFamily::Autoregressive,
        }
    }

    pub fn build(&self, seed: u64) -> Result<PriorModel> {
        Ok(match self {
            ModelSpec::Flow(c) => PriorModel::Flow(FlowModel::new(*c, seed)?),
            ModelSpec::Ar(c) => PriorModel::Ar(ArModel::new(*c, seed)?),
        })
    }
}

/// Append-only CSV of `step,lr,loss,wall_ms`.
pub struct Telemetry {
    file: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl Telemetry {
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = !path.exists();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        let mut t = Telemetry { file: std::io::BufWriter::new(file), path: path.to_path_buf() };
        if fresh {
            writeln!(t.file, "step,lr,loss,wall_ms").map_err(|e| Error::io(path, e))?;
        }
        Ok(t)
    }

    pub fn record(&mut self, step: usize, lr: f64, loss: f64, wall_ms: u128) -> Result<()> {
        writeln!(self.file, "{step},{lr},{loss},{wall_ms}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Step-by-step optimizer loop over a fixed set of training frames.
pub struct Trainer<'a> {
    model: PriorModel,
    frames: &'a [Vec<f64>],
    config: TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    noise_sigma: f64,
    step: usize,
    total: usize,
}

impl<'a> Trainer<'a> {
    /// `noise_sigma > 0` adds fresh `N(0, sigma²)` noise to every frame of
    /// every batch. `total` is the step count the schedule spans.
    pub fn new(model: PriorModel, frames: &'a [Vec<f64>], config: &TrainConfig, noise_sigma: f64, total: usize) -> Result<Self> {
        config.validate()?;
        if frames.is_empty() {
            return Err(Error::InvalidArgument("no training frames".into()));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {noise_sigma}")));
        }
        let adam = AdamState::new(model.params().tensors());
        // separate streams for training from scratch and for each fine-tune level
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(noise_sigma.to_bits());
        Ok(Trainer { model, frames, config: config.clone(), adam, rng, noise_sigma, step: 0, total })
    }

    pub fn model(&self) -> &PriorModel {
        &self.model
    }

    pub fn into_model(self) -> PriorModel {
        self.model
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        lr_schedule(self.step, self.total, &self.config)
    }

    /// Draw the next batch: frames chosen uniformly with replacement, noised
    /// when conditioning.
    pub fn next_batch(&mut self) -> Vec<Vec<f64>> {
        (0..self.config.batch_size)
            .map(|_| {
                let mut f = self.frames[self.rng.random_range(0..self.frames.len())].clone();
                if self.noise_sigma > 0.0 {
                    for v in &mut f {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        *v += self.noise_sigma * z;
                    }
                }
                f
            })
            .collect()
    }

    /// One optimizer step on `batch`; returns the batch loss (mean negative
    /// log-density per sample) measured before the update.
    pub fn apply(&mut self, batch: &[Vec<f64>]) -> Result<f64> {
        if let PriorModel::Flow(m) = &mut self.model {
            if !m.actnorm_initialized() {
                m.initialize_actnorm(batch)?;
            }
        }
        let model = &self.model;
        let results: Vec<Result<(f64, Vec<Tensor>)>> = batch.par_iter().map(|f| model.nll_and_param_grads(f)).collect();
        let mut loss = 0.0;
        let mut total: Option<Vec<Tensor>> = None;
        for r in results {
            let (l, g) = r.map_err(|e| match e {
                Error::Diff(_) | Error::Numerical(_) => Error::NonFinite { step: self.step, detail: e.to_string() },
                other => other,
            })?;
            loss += l;
            match &mut total {
                None => total = Some(g),
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                            *x += y;
                        }
                    }
                }
            }
        }
        let n = batch.len() as f64;
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::Divergence { step: self.step, loss });
        }
        let mut grads = total.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        for g in &mut grads {
            for v in g.data_mut() {
                *v /= n;
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { step: self.step, detail: "gradient".into() });
            }
        }
        let lr = self.current_lr();
        adam_step(self.model.params_mut().tensors_mut(), &grads, &mut self.adam, lr)?;
        self.step += 1;
        Ok(loss)
    }

    pub fn step(&mut self) -> Result<f64> {
        let batch = self.next_batch();
        self.apply(&batch)
    }
}

/// Moving-average stall detector: the mean loss of each completed window is
/// compared with the previous one, and two consecutive relative
/// improvements below `tol` mean convergence.
#[derive(Debug, Clone)]
pub struct ConvergenceMonitor {
    window: usize,
    tol: f64,
    current: Vec<f64>,
    previous_mean: Option<f64>,
    stalls: usize,
}

impl ConvergenceMonitor {
    pub fn new(window: usize, tol: f64) -> Self {
        ConvergenceMonitor { window, tol, current: Vec::with_capacity(window), previous_mean: None, stalls: 0 }
    }

    /// Feed one loss; returns true once converged.
    pub fn push(&mut self, loss: f64) -> bool {
        self.current.push(loss);
        if self.current.len() < self.window {
            return false;
        }
        let mean = self.current.iter().sum::<f64>() / self.window as f64;
        self.current.clear();
        if let Some(prev) = self.previous_mean {
            let improvement = (prev - mean) / prev.abs().max(f64::MIN_POSITIVE);
            if improvement < self.tol {
                self.stalls += 1;
            } else {
                self.stalls = 0;
            }
        }
        self.previous_mean = Some(mean);
        self.stalls >= 2
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// batch loss of every step
    pub losses: Vec<f64>,
    pub converged: bool,
}

fn run_loop(
    trainer: &mut Trainer<'_>,
    steps: usize,
    mut monitor: Option<ConvergenceMonitor>,
    telemetry: Option<&Path>,
) -> Result<(Vec<f64>, bool)> {
    let mut tel = telemetry.map(Telemetry::open).transpose()?;
    let start = Instant::now();
    let mut losses = Vec::with_capacity(steps);
    let mut converged = false;
    for _ in 0..steps {
        let step = trainer.step_index();
        let lr = trainer.current_lr();
        let loss = trainer.step()?;
        losses.push(loss);
        if let Some(t) = &mut tel {
            t.record(step, lr, loss, start.elapsed().as_millis())?;
        }
        if let Some(m) = &mut monitor {
            if m.push(loss) {
                converged = true;
                break;
            }
        }
    }
    if let Some(t) = &mut tel {
        t.flush()?;
    }
    Ok((losses, converged))
}

fn train_frames(dataset: &Dataset, source: SourceKind) -> Vec<Vec<f64>> {
    dataset.split(Split::Train).iter().map(|r| r.source(source).to_vec()).collect()
}

/// Train a fresh prior on one source's training frames and tag it `σ = 0`.
pub fn train_prior(
    spec: ModelSpec,
    source: SourceKind,
    dataset: &Dataset,
    config: &TrainConfig,
    telemetry: Option<&Path>,
) -> Result<TrainOutcome> {
    let frames = train_frames(dataset, source);
    if let Some(f) = frames.first() {
        crate::density::DensityModel::check_len(&spec.build(0)?, f.len())?;
    }
    let model = spec.build(config.seed ^ (source.code() as u64) << 32)?;
    let mut trainer = Trainer::new(model, &frames, config, 0.0, config.total_steps)?;
    let (losses, _) = run_loop(&mut trainer, config.total_steps, None, telemetry)?;
    let mut checkpoint =
        Checkpoint { model: trainer.into_model(), source, sigma: 0.0, base_hash: None, steps: config.total_steps };
    checkpoint.round_params();
    Ok(TrainOutcome { checkpoint, losses, converged: false })
}

/// Continue training a noise-free checkpoint on `σ`-noised frames until the
/// moving-average loss stalls or `config.finetune_steps` is used up.
pub fn finetune_noisy(
    base: Checkpoint,
    sigma: f64,
    dataset: &Dataset,
    config: &TrainConfig,
    telemetry: Option<&Path>,
) -> Result<TrainOutcome> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "fine-tuning needs sigma > 0 (got {sigma}); use train_prior for the noise-free model"
        )));
    }
    if base.sigma != 0.0 {
        return Err(Error::InvalidArgument(format!("base checkpoint must be noise free, it has sigma {}", base.sigma)));
    }
    let base_hash = base.hash();
    let source = base.source;
    let frames = train_frames(dataset, source);
    let mut trainer = Trainer::new(base.model, &frames, config, sigma, config.finetune_steps)?;
    let monitor = ConvergenceMonitor::new(config.convergence_window, config.convergence_tol);
    let (losses, converged) = run_loop(&mut trainer, config.finetune_steps, Some(monitor), telemetry)?;
    let mut checkpoint =
        Checkpoint { model: trainer.into_model(), source, sigma, base_hash: Some(base_hash), steps: losses.len() };
    checkpoint.round_params();
    Ok(TrainOutcome { checkpoint, losses, converged })
}
