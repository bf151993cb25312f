//! Autoregressive categorical prior over µ-law classes.
//!
//! The input at step `t` is the µ-law-decoded value of class `t - 1` (zero at
//! `t = 0`), fed through a stack of causal gated dilated convolutions. Each
//! gated layer adds a residual to its input and contributes a skip output;
//! the summed skips go through `relu -> 1x1 -> relu -> 1x1` to 256 logits.
//! Logits at `t` therefore depend only on classes before `t`.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::density::{DensityModel, ModelFamily};
use crate::diffcore::{log_softmax_columns, ConvMode, DiffError, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{init_weight, BoundParams, ParamId, ParamStore};
use crate::signal::{mu_law_decode_value, mu_law_encode, N_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArConfig {
    pub blocks: usize,
    /// gated layers per block, dilations 1, 2, ..., 2^(layers-1)
    pub layers: usize,
    pub kernel: usize,
    pub width: usize,
}

impl Default for ArConfig {
    fn default() -> Self {
        ArConfig { blocks: 3, layers: 10, kernel: 3, width: 64 }
    }
}

impl ArConfig {
    pub fn paper_toy() -> Self {
        ArConfig { blocks: 3, layers: 10, kernel: 3, width: 256 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.layers == 0 || self.kernel < 2 || self.width == 0 {
            return Err(Error::Config(format!(
                "ar model needs blocks, layers, width >= 1 and kernel >= 2: {self:?}"
            )));
        }
        if self.layers > 16 || self.blocks > 16 {
            return Err(Error::Config(format!("ar configuration too deep: {self:?}")));
        }
        Ok(())
    }

    /// Number of consecutive input samples that can influence one output:
    /// `1 + blocks * sum_l (kernel - 1) * 2^l`.
    pub fn receptive_field(&self) -> usize {
        1 + self.blocks * (self.kernel - 1) * ((1usize << self.layers) - 1)
    }
}

struct GatedLayer {
    dil_w: ParamId,
    dil_b: ParamId,
    rs_w: ParamId,
    rs_b: ParamId,
    dilation: usize,
}

pub struct ArModel {
    config: ArConfig,
    params: ParamStore,
    start_w: ParamId,
    start_b: ParamId,
    layers: Vec<GatedLayer>,
    head1_w: ParamId,
    head1_b: ParamId,
    head2_w: ParamId,
    head2_b: ParamId,
}

impl std::fmt::Debug for ArModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ArModel")
            .field("config", &self.config)
            .field("n_params", &self.params.n_values())
            .finish()
    }
}

impl ArModel {
    /// Random hidden layers and a zero output head, so a fresh model is
    /// uniform over the 256 classes.
    pub fn new(config: ArConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, k) = (config.width, config.kernel);
        let mut params = ParamStore::new();
        let start_w = params.add("start.w", init_weight(&mut rng, w, 1, 1));
        let start_b = params.add("start.b", Tensor::zeros(w, 1));
        let mut layers = Vec::with_capacity(config.blocks * config.layers);
        for b in 0..config.blocks {
            for l in 0..config.layers {
                let p = format!("b{b}.l{l}");
                layers.push(GatedLayer {
                    dil_w: params.add(format!("{p}.dil.w"), init_weight(&mut rng, 2 * w, w * k, w * k)),
                    dil_b: params.add(format!("{p}.dil.b"), Tensor::zeros(2 * w, 1)),
                    rs_w: params.add(format!("{p}.rs.w"), init_weight(&mut rng, 2 * w, w, w)),
                    rs_b: params.add(format!("{p}.rs.b"), Tensor::zeros(2 * w, 1)),
                    dilation: 1 << l,
                });
            }
        }
        let head1_w = params.add("head1.w", init_weight(&mut rng, w, w, w));
        let head1_b = params.add("head1.b", Tensor::zeros(w, 1));
        let head2_w = params.add("head2.w", Tensor::zeros(N_CLASSES, w));
        let head2_b = params.add("head2.b", Tensor::zeros(N_CLASSES, 1));
        Ok(ArModel { config, params, start_w, start_b, layers, head1_w, head1_b, head2_w, head2_b })
    }

    pub fn config(&self) -> &ArConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn receptive_field(&self) -> usize {
        self.config.receptive_field()
    }

    /// Add `N(0, scale²)` noise to every parameter, the head included.
    pub fn perturb<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) {
        let normal = Normal::new(0.0, scale).expect("scale must be finite and >= 0");
        for t in self.params.tensors_mut() {
            for v in t.data_mut() {
                *v += normal.sample(rng);
            }
        }
    }

    pub fn from_params(config: ArConfig, params: &ParamStore) -> Result<Self> {
        let mut model = ArModel::new(config, 0)?;
        model.params.load_from(params).map_err(Error::InvalidArgument)?;
        Ok(model)
    }

    fn check_classes(classes: &[u16]) -> Result<()> {
        if classes.is_empty() {
            return Err(Error::InvalidArgument("empty class sequence".into()));
        }
        if let Some(&c) = classes.iter().find(|&&c| c as usize >= N_CLASSES) {
            return Err(Error::InvalidArgument(format!("class {c} out of range 0..{N_CLASSES}")));
        }
        Ok(())
    }

    /// Network input: decoded previous class, zero at the first step.
    fn shifted_input(classes: &[u16]) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(classes.len());
        x.push(0.0);
        for &c in &classes[..classes.len() - 1] {
            x.push(mu_law_decode_value(c)?);
        }
        Ok(x)
    }

    fn graph_logits(&self, g: &mut Graph, p: &BoundParams, x: Var) -> Result<Var, DiffError> {
        let w = self.config.width;
        let mut h = g.conv1d(x, p[self.start_w], Some(p[self.start_b]), 1, 1, ConvMode::Causal)?;
        let mut skip: Option<Var> = None;
        for layer in &self.layers {
            let a = g.conv1d(h, p[layer.dil_w], Some(p[layer.dil_b]), self.config.kernel, layer.dilation, ConvMode::Causal)?;
            let filt = g.select_rows(a, 0, 1, w)?;
            let gate = g.select_rows(a, w, 1, w)?;
            let filt = g.tanh(filt)?;
            let gate = g.sigmoid(gate)?;
            let z = g.mul(filt, gate)?;
            let rs = g.conv1d(z, p[layer.rs_w], Some(p[layer.rs_b]), 1, 1, ConvMode::Causal)?;
            let res = g.select_rows(rs, 0, 1, w)?;
            let sk = g.select_rows(rs, w, 1, w)?;
            h = g.add(h, res)?;
            skip = Some(match skip {
                Some(s) => g.add(s, sk)?,
                None => sk,
            });
        }
        let y = g.relu(skip.unwrap_or(h))?;
        let y = g.conv1d(y, p[self.head1_w], Some(p[self.head1_b]), 1, 1, ConvMode::Causal)?;
        let y = g.relu(y)?;
        g.conv1d(y, p[self.head2_w], Some(p[self.head2_b]), 1, 1, ConvMode::Causal)
    }

    /// Per-step logits, shaped `(256, T)`; column `t` sees classes `< t` only.
    pub fn logits(&self, classes: &[u16]) -> Result<Tensor> {
        Self::check_classes(classes)?;
        let mut g = Graph::new();
        let p = self.params.bind_const(&mut g)?;
        let x = g.constant(Tensor::row(Self::shifted_input(classes)?))?;
        let out = self.graph_logits(&mut g, &p, x)?;
        Ok(g.value(out).clone())
    }

    /// Gradient of `sum_c logits[c][t]` with respect to every network
    /// input; entry `s` is the input that holds the decoded class `s - 1`.
    /// Exact zeros mark positions step `t` cannot see.
    pub fn input_sensitivity(&self, classes: &[u16], t: usize) -> Result<Vec<f64>> {
        Self::check_classes(classes)?;
        if t >= classes.len() {
            return Err(Error::InvalidArgument(format!("step {t} outside a {}-step sequence", classes.len())));
        }
        let mut g = Graph::new();
        let p = self.params.bind_const(&mut g)?;
        let x = g.input(Tensor::row(Self::shifted_input(classes)?))?;
        let out = self.graph_logits(&mut g, &p, x)?;
        let mut mask = Tensor::zeros(N_CLASSES, classes.len());
        let cols = classes.len();
        for c in 0..N_CLASSES {
            mask.data_mut()[c * cols + t] = 1.0;
        }
        let mask = g.constant(mask)?;
        let picked = g.mul(out, mask)?;
        let total = g.sum(picked)?;
        let mut grads = g.backward(total)?;
        Ok(grads.take(x).data().to_vec())
    }

    /// Log-probability of each observed class given its past.
    pub fn step_log_probs(&self, classes: &[u16]) -> Result<Vec<f64>> {
        let logp = log_softmax_columns(&self.logits(classes)?);
        Ok(classes.iter().enumerate().map(|(t, &c)| logp.get(c as usize, t)).collect())
    }

    /// Mean log-mass per sample of a frame in `[-1, 1]`, in nats.
    pub fn log_density(&self, samples: &[f64]) -> Result<f64> {
        let enc = mu_law_encode(samples);
        let lp = self.step_log_probs(&enc.classes)?;
        Ok(lp.iter().sum::<f64>() / lp.len() as f64)
    }

    /// Mean cross-entropy per time step over a batch of frames.
    pub fn train_loss(&self, frames: &[Vec<f64>]) -> Result<f64> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut total = 0.0;
        let mut steps = 0usize;
        for f in frames {
            let lp = self.step_log_probs(&mu_law_encode(f).classes)?;
            total -= lp.iter().sum::<f64>();
            steps += lp.len();
        }
        Ok(total / steps as f64)
    }

    /// Mean cross-entropy of one frame and its gradient for every parameter.
    pub fn nll_and_param_grads(&self, samples: &[f64]) -> Result<(f64, Vec<Tensor>)> {
        let classes = mu_law_encode(samples).classes;
        Self::check_classes(&classes)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g)?;
        let x = g.constant(Tensor::row(Self::shifted_input(&classes)?))?;
        let logits = self.graph_logits(&mut g, &p, x)?;
        let targets: Vec<usize> = classes.iter().map(|&c| c as usize).collect();
        let ce = g.softmax_xent(logits, &targets)?;
        let loss = g.affine(ce, 1.0 / classes.len() as f64, 0.0)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numerical(format!("non-finite cross-entropy {value}")));
        }
        let mut grads = g.backward(loss)?;
        Ok((value, self.params.collect_grads(&p, &mut grads)))
    }

    /// Sequential ancestral sampling of `n_samples` classes, decoded to
    /// amplitudes. A seed frame, if given, is µ-law encoded and used as
    /// context; only the new samples are returned.
    pub fn generate<R: Rng + ?Sized>(&self, n_samples: usize, rng: &mut R, seed_frame: Option<&[f64]>) -> Result<Vec<f64>> {
        let context = seed_frame.map(|f| mu_law_encode(f).classes).unwrap_or_default();
        let mut stepper = Stepper::new(self, context.len() + n_samples);
        let mut prev = None;
        for &c in &context {
            stepper.step(prev)?;
            prev = Some(c);
        }
        let mut out = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let logits = stepper.step(prev)?;
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
            let dist = WeightedIndex::new(&weights).map_err(|e| Error::Numerical(format!("sampling weights: {e}")))?;
            let c = dist.sample(rng) as u16;
            out.push(mu_law_decode_value(c)?);
            prev = Some(c);
        }
        Ok(out)
    }
}

/// Incremental evaluation of the network one time step at a time, caching
/// each layer's input history.
struct Stepper<'a> {
    model: &'a ArModel,
    history: Vec<Vec<f64>>,
    t: usize,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a ArModel, capacity: usize) -> Self {
        let w = model.config.width;
        let history = (0..model.layers.len()).map(|_| Vec::with_capacity(capacity * w)).collect();
        Stepper { model, history, t: 0 }
    }

    fn matvec_add(w: &Tensor, x: &[f64], out: &mut [f64]) {
        let cols = w.cols();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &w.data()[r * cols..(r + 1) * cols];
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Logits for the current step given the class of the previous one.
    fn step(&mut self, prev: Option<u16>) -> Result<Vec<f64>> {
        let m = self.model;
        let ps = &m.params;
        let (w, k) = (m.config.width, m.config.kernel);
        let x = match prev {
            Some(c) => mu_law_decode_value(c)?,
            None => 0.0,
        };
        let t = self.t;
        let sw = ps.get(m.start_w).data();
        let mut h: Vec<f64> = ps.get(m.start_b).data().iter().zip(sw).map(|(b, s)| b + s * x).collect();
        let mut skip = vec![0.0; w];
        let mut taps = vec![0.0; w * k];
        for (li, layer) in m.layers.iter().enumerate() {
            self.history[li].extend_from_slice(&h);
            let hist = &self.history[li];
            for ci in 0..w {
                for kk in 0..k {
                    let back = (k - 1 - kk) * layer.dilation;
                    taps[ci * k + kk] = if back <= t { hist[(t - back) * w + ci] } else { 0.0 };
                }
            }
            let mut a = ps.get(layer.dil_b).data().to_vec();
            Self::matvec_add(ps.get(layer.dil_w), &taps, &mut a);
            let z: Vec<f64> = (0..w).map(|c| a[c].tanh() * (1.0 / (1.0 + (-a[w + c]).exp()))).collect();
            let mut rs = ps.get(layer.rs_b).data().to_vec();
            Self::matvec_add(ps.get(layer.rs_w), &z, &mut rs);
            for c in 0..w {
                h[c] += rs[c];
                skip[c] += rs[w + c];
            }
        }
        let y: Vec<f64> = skip.iter().map(|v| v.max(0.0)).collect();
        let mut y1 = ps.get(m.head1_b).data().to_vec();
        Self::matvec_add(ps.get(m.head1_w), &y, &mut y1);
        for v in &mut y1 {
            *v = v.max(0.0);
        }
        let mut logits = ps.get(m.head2_b).data().to_vec();
        Self::matvec_add(ps.get(m.head2_w), &y1, &mut logits);
        self.t += 1;
        Ok(logits)
    }
}

impl DensityModel for ArModel {
    fn family(&self) -> ModelFamily {
        ModelFamily::Autoregressive
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::InvalidArgument("empty frame".into()));
        }
        Ok(())
    }

    fn log_density(&self, samples: &[f64]) -> Result<f64> {
        ArModel::log_density(self, samples)
    }

    fn is_differentiable(&self) -> bool {
        false
    }

    fn grad_log_density(&self, _samples: &[f64]) -> Result<(f64, Vec<f64>)> {
        Err(Error::NotDifferentiable(
            "the autoregressive prior is a discrete distribution over µ-law classes".into(),
        ))
    }

    fn sample(&self, rng: &mut dyn RngCore, n_frames: usize, frame_len: usize) -> Result<Vec<Vec<f64>>> {
        (0..n_frames).map(|_| self.generate(frame_len, rng, None)).collect()
    }
}
