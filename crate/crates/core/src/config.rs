//! Run configuration: TOML with one section per stage. A profile supplies
//! every default and a config file overrides individual keys.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ar::ArConfig;
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::separation::SgldConfig;
use crate::signal::DatasetConfig;
use crate::training::TrainConfig;

/// Settings of the evaluation commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// seed of the data-noise and noise-input draws
    pub seed: u64,
    /// σ_d added to the test frames
    pub data_noise: f64,
    /// σ_c tag of the priors under evaluation
    pub cond: f64,
    /// cap on test frames per source, all when absent
    pub max_test_frames: Option<usize>,
    /// noisy tag compared with σ = 0 in the degenerate-input table
    pub degenerate_sigma: f64,
    /// allow comparisons across families or σ tags
    pub force: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { seed: 0, data_noise: 0.0, cond: 0.0, max_test_frames: None, degenerate_sigma: 0.359, force: false }
    }
}

/// Settings of `separate` that are not part of the sampler itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparateConfig {
    /// σ tag of the priors used without annealing
    pub prior_sigma: f64,
    /// steps per level of the default annealing schedule
    pub anneal_steps: usize,
    /// test record separated when no mix file is given
    pub mix_index: usize,
}

impl Default for SeparateConfig {
    fn default() -> Self {
        SeparateConfig { prior_sigma: 0.0, anneal_steps: 200, mix_index: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DatasetConfig,
    pub flow: FlowConfig,
    pub ar: ArConfig,
    pub train: TrainConfig,
    pub sgld: SgldConfig,
    pub eval: EvalConfig,
    pub separate: SeparateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// CPU-sized defaults: 4 kHz, 2048-sample frames, small models and a
    /// shortened, faster training run.
    pub fn desk() -> Self {
        RunConfig {
            data: DatasetConfig::default(),
            flow: FlowConfig::default(),
            ar: ArConfig::default(),
            train: TrainConfig { learning_rate: 1e-3, total_steps: 4000, ..TrainConfig::default() },
            sgld: SgldConfig::default(),
            eval: EvalConfig::default(),
            separate: SeparateConfig::default(),
        }
    }

    /// Full-size data, model and training settings.
    pub fn paper_scale() -> Self {
        RunConfig {
            data: DatasetConfig::paper_scale(),
            flow: FlowConfig::paper_toy(),
            ar: ArConfig::paper_toy(),
            train: TrainConfig::paper_scale(),
            ..Self::desk()
        }
    }

    /// Profile defaults overlaid with the keys of `text`.
    pub fn from_toml(text: &str, paper_scale: bool) -> Result<Self> {
        let base = if paper_scale { Self::paper_scale() } else { Self::desk() };
        let mut merged = toml::Value::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        let overlay: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, overlay);
        let cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, paper_scale: bool) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", p.display())),
                    _ => Error::io(p, e),
                })?;
                Self::from_toml(&text, paper_scale).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
            None => {
                let cfg = if paper_scale { Self::paper_scale() } else { Self::desk() };
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.flow.validate().map_err(cfg)?;
        self.ar.validate().map_err(cfg)?;
        self.train.validate().map_err(cfg)?;
        if self.data.n_train == 0 || self.data.n_test == 0 || self.data.frame_len == 0 || self.data.sample_rate == 0 {
            return Err(Error::Config("data counts, frame_len and sample_rate must be positive".into()));
        }
        if self.data.frame_len % self.flow.length_multiple() != 0 {
            return Err(Error::Config(format!(
                "frame_len {} is not a multiple of {} required by the flow",
                self.data.frame_len,
                self.flow.length_multiple()
            )));
        }
        if !(self.eval.data_noise >= 0.0 && self.eval.cond >= 0.0 && self.eval.degenerate_sigma > 0.0) {
            return Err(Error::Config("eval sigmas must be >= 0 (degenerate_sigma > 0)".into()));
        }
        if self.separate.anneal_steps == 0 {
            return Err(Error::Config("separate.anneal_steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn write_resolved(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_config_roundtrips() {
        for cfg in [RunConfig::desk(), RunConfig::paper_scale()] {
            let text = cfg.to_toml();
            assert_eq!(RunConfig::from_toml(&text, false).unwrap(), cfg);
        }
    }

    #[test]
    fn empty_file_is_the_profile() {
        assert_eq!(RunConfig::from_toml("", false).unwrap(), RunConfig::desk());
        assert_eq!(RunConfig::from_toml("", true).unwrap(), RunConfig::paper_scale());
    }

    #[test]
    fn keys_overlay_the_profile() {
        let cfg = RunConfig::from_toml("[train]\ntotal_steps = 100\n[data]\nn_train = 8\n", true).unwrap();
        assert_eq!(cfg.train.total_steps, 100);
        assert_eq!(cfg.train.batch_size, TrainConfig::paper_scale().batch_size);
        assert_eq!(cfg.data.n_train, 8);
        assert_eq!(cfg.data.sample_rate, 16000);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["[train]\nlearnig_rate = 1.0\n", "[model]\nwidth = 3\n", "seed = 1\n", "[sgld]\nstep = 1\n"] {
            assert!(matches!(RunConfig::from_toml(text, false), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[data]\nframe_len = 100\n", false).is_err());
        assert!(RunConfig::from_toml("[train]\nlearning_rate = -1.0\n", false).is_err());
        assert!(RunConfig::from_toml("[flow]\nblocks = 0\n", false).is_err());
        assert!(RunConfig::from_toml("[train]\ntotal_steps = \"x\"\n", false).is_err());
    }

    #[test]
    fn schedule_and_weights_parse() {
        let text = "[sgld]\nweights = [0.5, 0.5]\ninit = \"from-noise\"\n[[sgld.schedule]]\nsigma = 0.359\nsteps = 3\n";
        let cfg = RunConfig::from_toml(text, false).unwrap();
        assert_eq!(cfg.sgld.weights, Some(vec![0.5, 0.5]));
        assert_eq!(cfg.sgld.schedule.len(), 1);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml(), false).unwrap(), cfg);
    }
}
