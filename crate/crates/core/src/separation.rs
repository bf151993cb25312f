//! Langevin-dynamics source separation with learned priors.
//!
//! Each step has two phases. First every source takes a prior step
//! `s_k += η ∇log p_k(s_k) + sqrt(2η) ε`. Then each source is corrected
//! toward the mixture with `s_k -= (η/γ²) α_k (g(s) - m)`, where
//! `g(s) = Σ α_k s_k` is evaluated at the state from the start of the step.

use std::io::Write;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::density::{DensityModel, ModelFamily};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// SNR reported for an exact reconstruction.
pub const SNR_CAP_DB: f64 = 300.0;

/// I.i.d. Gaussian density over samples, `N(mean, var)` per sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrior {
    pub mean: f64,
    pub var: f64,
}

impl GaussianPrior {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0 && var.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidArgument(format!("Gaussian prior needs finite mean and var > 0, got ({mean}, {var})")));
        }
        Ok(GaussianPrior { mean, var })
    }

    pub fn standard() -> Self {
        GaussianPrior { mean: 0.0, var: 1.0 }
    }
}

impl DensityModel for GaussianPrior {
    fn family(&self) -> ModelFamily {
        ModelFamily::Gaussian
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::InvalidArgument("empty frame".into()));
        }
        Ok(())
    }

    fn log_density(&self, samples: &[f64]) -> Result<f64> {
        self.check_len(samples.len())?;
        let (total, _) = self.grad_log_density(samples)?;
        Ok(total / samples.len() as f64)
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn grad_log_density(&self, samples: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut total = 0.0;
        let grad = samples
            .iter()
            .map(|&x| {
                let d = x - self.mean;
                total -= 0.5 * (LN_2PI + self.var.ln() + d * d / self.var);
                -d / self.var
            })
            .collect();
        Ok((total, grad))
    }

    fn sample(&self, rng: &mut dyn RngCore, n_frames: usize, frame_len: usize) -> Result<Vec<Vec<f64>>> {
        let sd = self.var.sqrt();
        Ok((0..n_frames)
            .map(|_| {
                (0..frame_len)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        self.mean + sd * z
                    })
                    .collect()
            })
            .collect())
    }
}

/// Exact posterior of the linear-Gaussian model at one sample position.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    /// row-major `N x N`
    pub cov: Vec<f64>,
}

/// Posterior of `s` given `m = α·s + N(0, γ²)` with independent Gaussian
/// priors, computed per sample position in closed form (rank-one update of
/// the diagonal prior covariance).
pub fn gaussian_posterior_oracle(
    mix: &[f64],
    priors: &[GaussianPrior],
    weights: &[f64],
    gamma: f64,
) -> Result<Vec<GaussianPosterior>> {
    if priors.len() != weights.len() || priors.is_empty() {
        return Err(Error::InvalidArgument(format!("{} priors for {} weights", priors.len(), weights.len())));
    }
    if let Some(p) = priors.iter().find(|p| !(p.var > 0.0)) {
        return Err(Error::Numerical(format!("singular prior covariance: var = {}", p.var)));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be > 0, got {gamma}")));
    }
    let n = priors.len();
    let d_alpha: Vec<f64> = priors.iter().zip(weights).map(|(p, a)| p.var * a).collect();
    let denom = gamma * gamma + weights.iter().zip(&d_alpha).map(|(a, da)| a * da).sum::<f64>();
    let prior_mix: f64 = priors.iter().zip(weights).map(|(p, a)| p.mean * a).sum();
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let diag = if i == j { priors[i].var } else { 0.0 };
            cov[i * n + j] = diag - d_alpha[i] * d_alpha[j] / denom;
        }
    }
    Ok(mix
        .iter()
        .map(|&m| GaussianPosterior {
            mean: priors.iter().zip(&d_alpha).map(|(p, da)| p.mean + da * (m - prior_mix) / denom).collect(),
            cov: cov.clone(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicy {
    /// every source starts at the mixture plus `N(0, init_std²)` noise
    FromMix,
    /// every source starts at `N(0, init_std²)`
    FromNoise,
    Provided(Vec<Vec<f64>>),
}

/// One annealing stage: priors conditioned on `sigma`, run for `steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealLevel {
    pub sigma: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgldConfig {
    pub step_size: f64,
    pub steps: usize,
    /// mixture noise std γ
    pub gamma: f64,
    /// mixing weights α, `1/N` each when absent
    pub weights: Option<Vec<f64>>,
    pub init: InitPolicy,
    pub init_std: f64,
    /// optional σ schedule, strictly decreasing
    pub schedule: Vec<AnnealLevel>,
    pub seed: u64,
    /// record diagnostics every this many steps
    pub diag_stride: usize,
}

impl Default for SgldConfig {
    fn default() -> Self {
        SgldConfig {
            step_size: 1e-4,
            steps: 1000,
            gamma: 0.1,
            weights: None,
            init: InitPolicy::FromMix,
            init_std: 0.1,
            schedule: Vec::new(),
            seed: 0,
            diag_stride: 1,
        }
    }
}

impl SgldConfig {
    pub fn validate(&self, n_sources: usize) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be > 0, got {}", self.step_size)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.diag_stride == 0 || !(self.init_std >= 0.0) {
            return Err(Error::InvalidArgument("diag_stride must be >= 1 and init_std >= 0".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != n_sources {
                return Err(Error::InvalidArgument(format!("{} weights for {n_sources} sources", w.len())));
            }
        }
        if self.schedule.is_empty() {
            if self.steps == 0 {
                return Err(Error::InvalidArgument("steps must be >= 1".into()));
            }
        } else {
            if self.schedule.windows(2).any(|w| w[1].sigma >= w[0].sigma) {
                return Err(Error::InvalidArgument("sigma schedule must be strictly decreasing".into()));
            }
            if self.schedule.iter().any(|l| l.steps == 0 || !(l.sigma >= 0.0)) {
                return Err(Error::InvalidArgument("every stage needs steps >= 1 and sigma >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn weights_for(&self, n: usize) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0 / n as f64; n])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub stage: usize,
    /// conditioning level of an annealing stage
    pub sigma: Option<f64>,
    pub gamma: f64,
    /// `‖m - g(s)‖²` after the step
    pub residual: f64,
    /// mean log-density per sample of each source at the start of the step
    pub log_density: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    /// state after the last step
    pub sources: Vec<Vec<f64>>,
    /// running average of the state over the second half of all steps
    pub posterior_mean: Vec<Vec<f64>>,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// `g(s) - m` per sample.
fn mix_residual(s: &[Vec<f64>], mix: &[f64], alpha: &[f64]) -> Vec<f64> {
    (0..mix.len()).map(|i| s.iter().zip(alpha).map(|(f, a)| a * f[i]).sum::<f64>() - mix[i]).collect()
}

/// `s_k -= (η/γ²) α_k r` with `corr = η/γ²`.
fn likelihood_correction(s: &mut [Vec<f64>], resid: &[f64], alpha: &[f64], corr: f64) {
    for (f, a) in s.iter_mut().zip(alpha) {
        for (x, r) in f.iter_mut().zip(resid) {
            *x -= corr * a * r;
        }
    }
}

fn check_priors(priors: &[&dyn DensityModel], len: usize) -> Result<()> {
    for p in priors {
        if !p.is_differentiable() {
            return Err(Error::NotDifferentiable(format!(
                "{} priors cannot drive Langevin separation: a categorical density over µ-law classes has no gradient \
                 with respect to the continuous signal",
                p.family()
            )));
        }
        p.check_len(len)?;
    }
    Ok(())
}

/// Separate `mix` into `priors.len()` sources with a single set of priors.
pub fn sgld_separate(mix: &[f64], priors: &[&dyn DensityModel], config: &SgldConfig) -> Result<SeparationResult> {
    if !config.schedule.is_empty() {
        return Err(Error::InvalidArgument("config has a sigma schedule; use sgld_separate_annealed".into()));
    }
    run(mix, &[priors.to_vec()], &[(None, config.steps, config.gamma)], config)
}

/// Annealed separation: stage `i` runs `config.schedule[i].steps` steps with
/// `stage_priors[i]` and `γ = σ_i` (the configured γ for a σ = 0 stage).
pub fn sgld_separate_annealed(
    mix: &[f64],
    stage_priors: &[Vec<&dyn DensityModel>],
    config: &SgldConfig,
) -> Result<SeparationResult> {
    if config.schedule.is_empty() || config.schedule.len() != stage_priors.len() {
        return Err(Error::InvalidArgument(format!(
            "{} prior sets for a {}-stage schedule",
            stage_priors.len(),
            config.schedule.len()
        )));
    }
    let stages: Vec<(Option<f64>, usize, f64)> = config
        .schedule
        .iter()
        .map(|l| (Some(l.sigma), l.steps, if l.sigma > 0.0 { l.sigma } else { config.gamma }))
        .collect();
    run(mix, stage_priors, &stages, config)
}

fn run(
    mix: &[f64],
    stage_priors: &[Vec<&dyn DensityModel>],
    stages: &[(Option<f64>, usize, f64)],
    config: &SgldConfig,
) -> Result<SeparationResult> {
    let n = stage_priors[0].len();
    if n == 0 || stage_priors.iter().any(|p| p.len() != n) {
        return Err(Error::InvalidArgument("every stage needs the same non-zero number of priors".into()));
    }
    if mix.is_empty() || mix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("mixture must be non-empty and finite".into()));
    }
    config.validate(n)?;
    for p in stage_priors {
        check_priors(p, mix.len())?;
    }
    let alpha = config.weights_for(n);
    let len = mix.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut s: Vec<Vec<f64>> = match &config.init {
        InitPolicy::FromMix => (0..n).map(|_| mix.iter().map(|&m| m + config.init_std * noise(&mut rng)).collect()).collect(),
        InitPolicy::FromNoise => (0..n).map(|_| (0..len).map(|_| config.init_std * noise(&mut rng)).collect()).collect(),
        InitPolicy::Provided(v) => {
            if v.len() != n || v.iter().any(|f| f.len() != len) {
                return Err(Error::InvalidArgument("provided initial state has the wrong shape".into()));
            }
            v.clone()
        }
    };

    let total: usize = stages.iter().map(|s| s.1).sum();
    let avg_from = total / 2;
    let mut avg = vec![vec![0.0; len]; n];
    let mut n_avg = 0usize;
    let mut diagnostics = Vec::new();
    let eta = config.step_size;
    let noise_scale = (2.0 * eta).sqrt();
    let mut step = 0usize;
    for (stage, ((sigma, steps, gamma), priors)) in stages.iter().zip(stage_priors).enumerate() {
        let corr = eta / (gamma * gamma);
        for _ in 0..*steps {
            let resid = mix_residual(&s, mix, &alpha);
            let mut lds = Vec::with_capacity(n);
            for k in 0..n {
                let (ld, grad) = priors[k].grad_log_density(&s[k])?;
                lds.push(ld / len as f64);
                for (x, g) in s[k].iter_mut().zip(&grad) {
                    *x += eta * g + noise_scale * noise(&mut rng);
                }
            }
            likelihood_correction(&mut s, &resid, &alpha, corr);
            let residual: f64 = mix_residual(&s, mix, &alpha).iter().map(|d| d * d).sum();
            if !residual.is_finite() || s.iter().any(|f| f.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite {
                    step,
                    detail: format!("state diverged (stage {stage}, residual {residual}, log-densities {lds:?})"),
                });
            }
            if step >= avg_from {
                for (a, f) in avg.iter_mut().zip(&s) {
                    for (x, v) in a.iter_mut().zip(f) {
                        *x += v;
                    }
                }
                n_avg += 1;
            }
            if step % config.diag_stride == 0 || step + 1 == total {
                diagnostics.push(StepDiagnostics {
                    step,
                    stage,
                    sigma: *sigma,
                    gamma: *gamma,
                    residual,
                    log_density: lds,
                });
            }
            step += 1;
        }
    }
    for a in &mut avg {
        for x in a.iter_mut() {
            *x /= n_avg as f64;
        }
    }
    Ok(SeparationResult { sources: s, posterior_mean: avg, diagnostics })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceScore {
    pub snr_db: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationQuality {
    /// estimate `k` scored against truth `k`
    pub identity: Vec<SourceScore>,
    /// `permutation[k]` is the estimate assigned to truth `k`
    pub permutation: Vec<usize>,
    pub best: Vec<SourceScore>,
}

fn score(est: &[f64], truth: &[f64]) -> SourceScore {
    let power: f64 = truth.iter().map(|v| v * v).sum();
    let err: f64 = truth.iter().zip(est).map(|(t, e)| (t - e) * (t - e)).sum();
    let snr_db = if err == 0.0 { SNR_CAP_DB } else { (10.0 * (power / err).log10()).min(SNR_CAP_DB) };
    SourceScore { snr_db, mse: err / truth.len() as f64 }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Per-source SNR (dB) and MSE under the identity assignment and under the
/// permutation with the highest mean SNR.
pub fn separation_quality(estimated: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<SeparationQuality> {
    if estimated.len() != truth.len() || truth.is_empty() {
        return Err(Error::InvalidArgument(format!("{} estimates for {} sources", estimated.len(), truth.len())));
    }
    if truth.len() > 8 {
        return Err(Error::InvalidArgument("permutation search supports at most 8 sources".into()));
    }
    for (e, t) in estimated.iter().zip(truth) {
        if e.len() != t.len() || t.is_empty() {
            return Err(Error::InvalidArgument("estimate and truth lengths differ".into()));
        }
        if t.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument("ground-truth source has zero power".into()));
        }
    }
    let identity: Vec<SourceScore> = estimated.iter().zip(truth).map(|(e, t)| score(e, t)).collect();
    let mut best: Option<(f64, Vec<usize>, Vec<SourceScore>)> = None;
    for perm in permutations(truth.len()) {
        let scores: Vec<SourceScore> = perm.iter().zip(truth).map(|(&k, t)| score(&estimated[k], t)).collect();
        let mean = scores.iter().map(|s| s.snr_db).sum::<f64>() / scores.len() as f64;
        if best.as_ref().is_none_or(|b| mean > b.0) {
            best = Some((mean, perm, scores));
        }
    }
    let (_, permutation, best) = best.expect("at least one permutation");
    Ok(SeparationQuality { identity, permutation, best })
}

/// Write the diagnostics CSV: `step,stage,sigma,gamma,residual,ll_0,...`.
pub fn write_diagnostics(path: &Path, diagnostics: &[StepDiagnostics]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let n = diagnostics.first().map(|d| d.log_density.len()).unwrap_or(0);
    let lls: String = (0..n).map(|k| format!(",ll_{k}")).collect();
    writeln!(f, "step,stage,sigma,gamma,residual{lls}").map_err(io)?;
    for d in diagnostics {
        let sigma = d.sigma.map(|v| v.to_string()).unwrap_or_default();
        let lls: String = d.log_density.iter().map(|v| format!(",{v}")).collect();
        writeln!(f, "{},{},{},{},{}{}", d.step, d.stage, sigma, d.gamma, d.residual, lls).map_err(io)?;
    }
    f.flush().map_err(io)
}
