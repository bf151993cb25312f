//! The interface shared by every prior the evaluation and separation code
//! can consume.

use rand::RngCore;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelFamily {
    Flow,
    Autoregressive,
    Gaussian,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Flow => "flow",
            ModelFamily::Autoregressive => "ar",
            ModelFamily::Gaussian => "gaussian",
        }
    }

    /// Unit label used in reports.
    pub fn units(self) -> &'static str {
        match self {
            ModelFamily::Autoregressive => "nats/sample (discrete mass)",
            _ => "nats/sample (continuous density)",
        }
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flow" => Ok(ModelFamily::Flow),
            "ar" | "wavenet" | "autoregressive" => Ok(ModelFamily::Autoregressive),
            "gaussian" => Ok(ModelFamily::Gaussian),
            other => Err(crate::Error::InvalidArgument(format!("unknown model family '{other}'"))),
        }
    }
}

/// A density over fixed-length frames of real samples.
pub trait DensityModel: Send + Sync {
    fn family(&self) -> ModelFamily;

    /// Reject frame lengths the model cannot evaluate.
    fn check_len(&self, len: usize) -> Result<()>;

    /// Mean log-density per sample, in nats.
    fn log_density(&self, samples: &[f64]) -> Result<f64>;

    /// Whether [`DensityModel::grad_log_density`] is available.
    fn is_differentiable(&self) -> bool;

    /// Total (not per-sample) log-density and its gradient with respect to
    /// every input sample.
    fn grad_log_density(&self, samples: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn sample(&self, rng: &mut dyn RngCore, n_frames: usize, frame_len: usize) -> Result<Vec<Vec<f64>>>;
}
