//! Coupling-layer normalizing flow over raw frames.
//!
//! The model has `blocks` blocks; each block squeezes time into channels by
//! a factor of two and then applies `flows` flow steps. A flow step is an
//! ActNorm layer followed by an affine coupling whose conditioner reads one
//! half of the channels (even or odd) and rescales the other half. The roles
//! of the two halves swap after every step. There is no learned channel
//! mixing.
//!
//! The forward direction maps data to latent:
//! `z_b = (x_b - t(x_a)) * exp(-log_s(x_a))`, with `log_s` squashed into
//! `[-LOG_SCALE_BOUND, LOG_SCALE_BOUND]`. The latent prior is a standard
//! normal, so `log p(x) = log N(f(x); 0, I) + log |det df/dx|`.

mod conditioner;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::density::{DensityModel, ModelFamily};
use crate::diffcore::{DiffError, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamId, ParamStore};
use conditioner::Conditioner;

/// Bound on the coupling log-scale, applied as `B * tanh(raw / B)`.
pub const LOG_SCALE_BOUND: f64 = 7.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub blocks: usize,
    pub flows: usize,
    /// gated layers per coupling conditioner
    pub layers: usize,
    pub kernel: usize,
    pub width: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { blocks: 3, flows: 4, layers: 6, kernel: 3, width: 16 }
    }
}

impl FlowConfig {
    /// Toy-data architecture of the reference experiments.
    pub fn paper_toy() -> Self {
        FlowConfig { blocks: 4, flows: 6, layers: 10, kernel: 3, width: 32 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.flows == 0 || self.width == 0 || self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "flow needs blocks, flows, width >= 1 and an odd kernel: {self:?}"
            )));
        }
        if self.blocks > 20 || self.layers > 20 {
            return Err(Error::Config(format!("flow configuration too deep: {self:?}")));
        }
        Ok(())
    }

    /// Frame lengths must be a multiple of this.
    pub fn length_multiple(&self) -> usize {
        1 << self.blocks
    }
}

struct ActNorm {
    log_scale: ParamId,
    bias: ParamId,
}

struct FlowStep {
    actnorm: ActNorm,
    coupling: Conditioner,
}

pub struct FlowModel {
    config: FlowConfig,
    params: ParamStore,
    blocks: Vec<Vec<FlowStep>>,
    actnorm_initialized: bool,
}

impl std::fmt::Debug for FlowModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowModel")
            .field("config", &self.config)
            .field("n_params", &self.params.n_values())
            .field("actnorm_initialized", &self.actnorm_initialized)
            .finish()
    }
}

fn bounded_log_scale(g: &mut Graph, raw: Var) -> Result<Var, DiffError> {
    let r = g.affine(raw, 1.0 / LOG_SCALE_BOUND, 0.0)?;
    let r = g.tanh(r)?;
    g.affine(r, LOG_SCALE_BOUND, 0.0)
}

impl FlowModel {
    /// A fresh model: ActNorm layers are the identity and every coupling
    /// outputs `log_s = 0, t = 0`, so the whole flow is the identity map.
    pub fn new(config: FlowConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut blocks = Vec::with_capacity(config.blocks);
        let mut channels = 1;
        for b in 0..config.blocks {
            channels *= 2;
            let half = channels / 2;
            let steps = (0..config.flows)
                .map(|f| {
                    let prefix = format!("b{b}.f{f}");
                    let actnorm = ActNorm {
                        log_scale: params.add(format!("{prefix}.actnorm.log_scale"), Tensor::zeros(channels, 1)),
                        bias: params.add(format!("{prefix}.actnorm.bias"), Tensor::zeros(channels, 1)),
                    };
                    let coupling = Conditioner::new(
                        &mut params,
                        &format!("{prefix}.coupling"),
                        half,
                        config.width,
                        config.layers,
                        config.kernel,
                        &mut rng,
                    );
                    FlowStep { actnorm, coupling }
                })
                .collect();
            blocks.push(steps);
        }
        Ok(FlowModel { config, params, blocks, actnorm_initialized: false })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn actnorm_initialized(&self) -> bool {
        self.actnorm_initialized
    }

    pub fn set_actnorm_initialized(&mut self, v: bool) {
        self.actnorm_initialized = v;
    }

    /// Add `N(0, scale²)` noise to every parameter, including the zero
    /// initialized coupling outputs. Used to probe non-trivial random flows.
    pub fn perturb<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) {
        let normal = Normal::new(0.0, scale).expect("scale must be finite and >= 0");
        for t in self.params.tensors_mut() {
            for v in t.data_mut() {
                *v += normal.sample(rng);
            }
        }
    }

    /// Overwrite the output layer of one coupling so it emits the constant
    /// raw log-scale and shift given, independent of its input.
    pub fn force_coupling_output(&mut self, block: usize, flow: usize, raw_log_scale: f64, shift: f64) {
        let (w, b) = self.blocks[block][flow].coupling.end_params();
        self.params.get_mut(w).data_mut().fill(0.0);
        let bias = self.params.get_mut(b);
        let half = bias.rows() / 2;
        for (i, v) in bias.data_mut().iter_mut().enumerate() {
            *v = if i < half { raw_log_scale } else { shift };
        }
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        let m = self.config.length_multiple();
        if len == 0 || len % m != 0 {
            return Err(Error::InvalidArgument(format!(
                "frame length {len} is not a positive multiple of {m} (2^blocks)"
            )));
        }
        Ok(())
    }

    /// Shape of the latent for a frame of `len` samples.
    pub fn latent_shape(&self, len: usize) -> (usize, usize) {
        let m = self.config.length_multiple();
        (m, len / m)
    }

    fn actnorm_forward(&self, g: &mut Graph, p: &BoundParams, an: &ActNorm, x: Var) -> Result<(Var, Var), DiffError> {
        let len = g.shape(x).1 as f64;
        let shifted = g.add(x, p[an.bias])?;
        let scale = g.exp(p[an.log_scale])?;
        let y = g.mul(shifted, scale)?;
        let ld = g.sum(p[an.log_scale])?;
        let ld = g.affine(ld, len, 0.0)?;
        Ok((y, ld))
    }

    fn actnorm_inverse(&self, g: &mut Graph, p: &BoundParams, an: &ActNorm, y: Var) -> Result<(Var, Var), DiffError> {
        let len = g.shape(y).1 as f64;
        let neg = g.neg(p[an.log_scale])?;
        let inv = g.exp(neg)?;
        let x = g.mul(y, inv)?;
        let x = g.sub(x, p[an.bias])?;
        let ld = g.sum(p[an.log_scale])?;
        let ld = g.affine(ld, -len, 0.0)?;
        Ok((x, ld))
    }

    fn coupling_forward(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        net: &Conditioner,
        x: Var,
        parity: usize,
    ) -> Result<(Var, Var), DiffError> {
        let even = g.even_rows(x)?;
        let odd = g.odd_rows(x)?;
        let (cond, other) = if parity == 0 { (even, odd) } else { (odd, even) };
        let (raw, shift) = net.forward(g, p, cond)?;
        let log_s = bounded_log_scale(g, raw)?;
        let centered = g.sub(other, shift)?;
        let neg = g.neg(log_s)?;
        let inv_s = g.exp(neg)?;
        let z = g.mul(centered, inv_s)?;
        let ld = g.sum(log_s)?;
        let ld = g.neg(ld)?;
        let out = if parity == 0 { g.interleave_rows(cond, z)? } else { g.interleave_rows(z, cond)? };
        Ok((out, ld))
    }

    fn coupling_inverse(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        net: &Conditioner,
        z: Var,
        parity: usize,
    ) -> Result<(Var, Var), DiffError> {
        let even = g.even_rows(z)?;
        let odd = g.odd_rows(z)?;
        let (cond, other) = if parity == 0 { (even, odd) } else { (odd, even) };
        let (raw, shift) = net.forward(g, p, cond)?;
        let log_s = bounded_log_scale(g, raw)?;
        let s = g.exp(log_s)?;
        let x = g.mul(other, s)?;
        let x = g.add(x, shift)?;
        let ld = g.sum(log_s)?;
        let out = if parity == 0 { g.interleave_rows(cond, x)? } else { g.interleave_rows(x, cond)? };
        Ok((out, ld))
    }

    /// Data to latent inside a graph. Returns the latent and the scalar
    /// log-determinant.
    fn graph_forward(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<(Var, Var), DiffError> {
        let mut cur = x;
        let mut log_det: Option<Var> = None;
        let mut push = |g: &mut Graph, term: Var| -> Result<(), DiffError> {
            log_det = Some(match log_det {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
            Ok(())
        };
        for block in &self.blocks {
            cur = g.squeeze(cur)?;
            for (f, step) in block.iter().enumerate() {
                let (y, ld) = self.actnorm_forward(g, p, &step.actnorm, cur)?;
                push(g, ld)?;
                let (y, ld) = self.coupling_forward(g, p, &step.coupling, y, f % 2)?;
                push(g, ld)?;
                cur = y;
            }
        }
        Ok((cur, log_det.expect("at least one flow step")))
    }

    /// Total log-density of `x` inside a graph.
    fn graph_log_density(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var, DiffError> {
        let n = g.shape(x).1 as f64;
        let (z, log_det) = self.graph_forward(g, p, x)?;
        let sq = g.mul(z, z)?;
        let sq = g.sum(sq)?;
        let log_pz = g.affine(sq, -0.5, -0.5 * n * LN_2PI)?;
        g.add(log_pz, log_det)
    }

    fn input_var(&self, g: &mut Graph, samples: &[f64], tracked: bool) -> Result<Var> {
        self.check_len(samples.len())?;
        let t = Tensor::row(samples.to_vec());
        let v = if tracked { g.input(t)? } else { g.constant(t)? };
        Ok(v)
    }

    fn finite(v: f64, what: &str) -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numerical(format!("{what} is not finite ({v})")))
        }
    }

    /// Data to latent. Returns `(z, log |det df/dx|)`.
    pub fn forward(&self, samples: &[f64]) -> Result<(Tensor, f64)> {
        let mut g = Graph::new();
        let p = self.params.bind_const(&mut g)?;
        let x = self.input_var(&mut g, samples, false)?;
        let (z, ld) = self.graph_forward(&mut g, &p, x)?;
        let zt = g.value(z).clone();
        if !zt.is_finite() {
            return Err(Error::Numerical("latent has non-finite entries".into()));
        }
        Ok((zt, Self::finite(g.value(ld).item(), "log-determinant")?))
    }

    /// Latent to data. Returns the frame and `log |det df⁻¹/dz|`, which is
    /// the negated forward log-determinant at the same point.
    pub fn inverse_with_log_det(&self, z: &Tensor) -> Result<(Vec<f64>, f64)> {
        let (c, t) = z.shape();
        if c != self.config.length_multiple() {
            return Err(Error::Shape(format!(
                "latent has {c} channels, expected {}",
                self.config.length_multiple()
            )));
        }
        self.check_len(c * t)?;
        let mut g = Graph::new();
        let p = self.params.bind_const(&mut g)?;
        let mut cur = g.constant(z.clone())?;
        let mut log_det = 0.0;
        for block in self.blocks.iter().rev() {
            for (f, step) in block.iter().enumerate().rev() {
                let (y, ld) = self.coupling_inverse(&mut g, &p, &step.coupling, cur, f % 2)?;
                log_det += g.value(ld).item();
                let (y, ld) = self.actnorm_inverse(&mut g, &p, &step.actnorm, y)?;
                log_det += g.value(ld).item();
                cur = y;
            }
            cur = g.unsqueeze(cur)?;
        }
        let x = g.value(cur).data().to_vec();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("inverse produced non-finite samples".into()));
        }
        Ok((x, Self::finite(log_det, "inverse log-determinant")?))
    }

    pub fn inverse(&self, z: &Tensor) -> Result<Vec<f64>> {
        self.inverse_with_log_det(z).map(|(x, _)| x)
    }

    /// Total log-density in nats (summed over samples).
    pub fn total_log_density(&self, samples: &[f64]) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.params.bind_const(&mut g)?;
        let x = self.input_var(&mut g, samples, false)?;
        let ll = self.graph_log_density(&mut g, &p, x)?;
        Self::finite(g.value(ll).item(), "log-density")
    }

    /// Mean log-density per sample, in nats.
    pub fn log_density(&self, samples: &[f64]) -> Result<f64> {
        Ok(self.total_log_density(samples)? / samples.len() as f64)
    }

    /// Total log-density and its gradient with respect to the input.
    pub fn grad_log_density(&self, samples: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let p = self.params.bind_const(&mut g)?;
        let x = self.input_var(&mut g, samples, true)?;
        let ll = self.graph_log_density(&mut g, &p, x)?;
        let value = Self::finite(g.value(ll).item(), "log-density")?;
        let mut grads = g.backward(ll)?;
        let grad = grads.take(x).into_data();
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("gradient has non-finite entries".into()));
        }
        Ok((value, grad))
    }

    /// Negative log-likelihood per sample and its gradient for every
    /// parameter, in store order.
    pub fn nll_and_param_grads(&self, samples: &[f64]) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g)?;
        let x = self.input_var(&mut g, samples, false)?;
        let ll = self.graph_log_density(&mut g, &p, x)?;
        let nll = g.affine(ll, -1.0 / samples.len() as f64, 0.0)?;
        let value = Self::finite(g.value(nll).item(), "loss")?;
        let mut grads = g.backward(nll)?;
        Ok((value, self.params.collect_grads(&p, &mut grads)))
    }

    /// Data-dependent ActNorm initialization: each ActNorm is set so its
    /// output over `frames` has zero mean and unit variance per channel,
    /// given the layers before it.
    pub fn initialize_actnorm(&mut self, frames: &[Vec<f64>]) -> Result<()> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("ActNorm initialization needs at least one frame".into()));
        }
        for f in frames {
            self.check_len(f.len())?;
        }
        let mut current: Vec<Tensor> = frames.iter().map(|f| Tensor::row(f.clone())).collect();
        for b in 0..self.blocks.len() {
            current = current
                .into_iter()
                .map(|t| crate::diffcore::Graph::squeeze_tensor(&t))
                .collect::<Result<_, _>>()?;
            for f in 0..self.blocks[b].len() {
                let channels = current[0].rows();
                let mut mean = vec![0.0; channels];
                let mut sq = vec![0.0; channels];
                let mut count = 0.0;
                for t in &current {
                    for c in 0..channels {
                        for &v in t.row_slice(c) {
                            mean[c] += v;
                            sq[c] += v * v;
                        }
                    }
                    count += t.cols() as f64;
                }
                let an = &self.blocks[b][f].actnorm;
                let (ls_id, bias_id) = (an.log_scale, an.bias);
                for c in 0..channels {
                    let m = mean[c] / count;
                    let var = (sq[c] / count - m * m).max(0.0);
                    self.params.get_mut(bias_id).data_mut()[c] = -m;
                    self.params.get_mut(ls_id).data_mut()[c] = -(var.sqrt().max(1e-6)).ln();
                }
                let step = &self.blocks[b][f];
                current = current
                    .iter()
                    .map(|t| -> Result<Tensor> {
                        let mut g = Graph::new();
                        let p = self.params.bind_const(&mut g)?;
                        let x = g.constant(t.clone())?;
                        let (y, _) = self.actnorm_forward(&mut g, &p, &step.actnorm, x)?;
                        let (y, _) = self.coupling_forward(&mut g, &p, &step.coupling, y, f % 2)?;
                        Ok(g.value(y).clone())
                    })
                    .collect::<Result<_>>()?;
            }
        }
        self.actnorm_initialized = true;
        Ok(())
    }

    /// Push standard-normal latents through the inverse.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n_frames: usize, frame_len: usize) -> Result<Vec<Vec<f64>>> {
        self.check_len(frame_len)?;
        let (c, t) = self.latent_shape(frame_len);
        (0..n_frames)
            .map(|_| {
                let z: Vec<f64> = (0..c * t).map(|_| StandardNormal.sample(rng)).collect();
                self.inverse(&Tensor::new(c, t, z)?)
            })
            .collect()
    }

    /// The frame whose latent is all zeros.
    pub fn mode_frame(&self, frame_len: usize) -> Result<Vec<f64>> {
        self.check_len(frame_len)?;
        let (c, t) = self.latent_shape(frame_len);
        self.inverse(&Tensor::zeros(c, t))
    }

    /// Build a model with the given parameters, e.g. from a checkpoint.
    pub fn from_params(config: FlowConfig, params: &ParamStore, actnorm_initialized: bool) -> Result<Self> {
        let mut model = FlowModel::new(config, 0)?;
        model.params.load_from(params).map_err(Error::InvalidArgument)?;
        model.actnorm_initialized = actnorm_initialized;
        Ok(model)
    }
}

impl DensityModel for FlowModel {
    fn family(&self) -> ModelFamily {
        ModelFamily::Flow
    }

    fn check_len(&self, len: usize) -> Result<()> {
        FlowModel::check_len(self, len)
    }

    fn log_density(&self, samples: &[f64]) -> Result<f64> {
        FlowModel::log_density(self, samples)
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn grad_log_density(&self, samples: &[f64]) -> Result<(f64, Vec<f64>)> {
        FlowModel::grad_log_density(self, samples)
    }

    fn sample(&self, rng: &mut dyn RngCore, n_frames: usize, frame_len: usize) -> Result<Vec<Vec<f64>>> {
        FlowModel::sample(self, rng, n_frames, frame_len)
    }
}
