//! Run configuration: a TOML file merged with command-line overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::{AdamConfig, Architecture, TrainConfig};
use crate::diffusion::{ElboMode, ScheduleSpec};
use crate::dsp::MelConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::SimulationConfig;
use crate::surprisal::ElboSettings;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelSection {
    pub sample_rate: Option<u32>,
    pub window_len: Option<usize>,
    pub hop_len: Option<usize>,
    pub n_mels: Option<usize>,
    pub f_min: Option<f64>,
    pub f_max: Option<f64>,
    pub top_db: Option<f64>,
    /// Frames per block fed to the model.
    pub block_frames: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    SmallConv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Hidden widths for `mlp`.
    pub hidden: Vec<usize>,
    /// Feature maps for `small_conv`.
    pub channels: usize,
    pub time_embed_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::SmallConv,
            hidden: vec![128, 128],
            channels: 8,
            time_embed_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            batch_size: d.batch_size,
            steps: d.steps,
            learning_rate: d.adam.learning_rate,
            beta1: d.adam.beta1,
            beta2: d.adam.beta2,
            eps: d.adam.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElboSection {
    pub mode: ElboMode,
    pub mc_samples: usize,
}

impl Default for ElboSection {
    fn default() -> Self {
        let d = ElboSettings::default();
        Self {
            mode: d.mode,
            mc_samples: d.mc_samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CovariateColumn {
    Normalized,
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub alpha: f64,
    pub covariate: CovariateColumn,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            covariate: CovariateColumn::Normalized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub coeffs: [f64; 3],
    pub sigma_b: f64,
    pub sigma_e: f64,
    pub n_subjects: usize,
    pub n_clips: usize,
    pub s_min: f64,
    pub s_max: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let d = SimulationConfig::default();
        Self {
            coeffs: d.coeffs,
            sigma_b: d.sigma_b,
            sigma_e: d.sigma_e,
            n_subjects: d.n_subjects,
            n_clips: d.n_clips,
            s_min: d.s_range.0,
            s_max: d.s_range.1,
        }
    }
}

/// Everything a run can be configured with. `schedule` and `model` stay
/// `None` unless given, so a checkpoint's own values can be used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mel: MelSection,
    pub schedule: Option<ScheduleSpec>,
    pub model: Option<ModelSection>,
    pub train: TrainSection,
    pub elbo: ElboSection,
    pub analysis: AnalysisSection,
    pub simulate: SimulateSection,
}

pub const DEFAULT_BLOCK_FRAMES: usize = 256;

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn mel_config(&self) -> MelConfig {
        let m = &self.mel;
        let mut cfg = MelConfig::with_rate(m.sample_rate.unwrap_or(22050));
        cfg.window_len = m.window_len.unwrap_or(cfg.window_len);
        cfg.hop_len = m.hop_len.unwrap_or(cfg.hop_len);
        cfg.n_mels = m.n_mels.unwrap_or(cfg.n_mels);
        cfg.f_min = m.f_min.unwrap_or(cfg.f_min);
        cfg.f_max = m.f_max.unwrap_or(cfg.f_max);
        cfg.top_db = m.top_db.unwrap_or(cfg.top_db);
        cfg
    }

    pub fn block_frames(&self) -> usize {
        self.mel.block_frames.unwrap_or(DEFAULT_BLOCK_FRAMES)
    }

    pub fn schedule_spec(&self) -> ScheduleSpec {
        self.schedule.unwrap_or_default()
    }

    /// Model whose input is one `n_mels × block_frames` block.
    pub fn architecture(&self) -> Architecture {
        let m = self.model.clone().unwrap_or_default();
        let (h, w) = (self.mel_config().n_mels, self.block_frames());
        match m.kind {
            ModelKind::Mlp => Architecture::mlp(&[h, w], &m.hidden, m.time_embed_dim),
            ModelKind::SmallConv => Architecture::small_conv(h, w, m.channels, m.time_embed_dim),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            steps: t.steps,
            adam: AdamConfig {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            seed: rng::named_seed(self.seed, "train"),
            schedule: self.schedule_spec(),
        }
    }

    pub fn init_seed(&self) -> u64 {
        rng::named_seed(self.seed, "init")
    }

    pub fn elbo_settings(&self) -> ElboSettings {
        ElboSettings {
            mode: self.elbo.mode,
            mc_samples: self.elbo.mc_samples,
            seed: rng::named_seed(self.seed, "surprisal"),
        }
    }

    pub fn simulation(&self) -> SimulationConfig {
        let s = &self.simulate;
        SimulationConfig {
            coeffs: s.coeffs,
            sigma_b: s.sigma_b,
            sigma_e: s.sigma_e,
            n_subjects: s.n_subjects,
            n_clips: s.n_clips,
            s_range: (s.s_min, s.s_max),
            seed: rng::named_seed(self.seed, "simulate"),
        }
    }

    /// Checks every section against its module's preconditions.
    pub fn validate(&self) -> Result<()> {
        self.mel_config().validate()?;
        if self.block_frames() == 0 {
            return Err(Error::Config("block_frames must be at least 1".into()));
        }
        self.schedule_spec().build()?;
        self.architecture().validate()?;
        self.train_config().validate()?;
        if self.elbo.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be at least 1".into()));
        }
        let a = self.analysis.alpha;
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {a}")));
        }
        let s = &self.simulate;
        if s.n_subjects < 2 || s.n_clips < 2 {
            return Err(Error::Config("simulation needs at least two subjects and two clips".into()));
        }
        if !(s.s_min < s.s_max) || !(s.sigma_b >= 0.0) || !(s.sigma_e >= 0.0) {
            return Err(Error::Config("simulation needs s_min < s_max and non-negative sigmas".into()));
        }
        if s.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("simulation coefficients must be finite".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
        assert_eq!(c.mel_config(), MelConfig::default());
        assert_eq!(c.architecture().input_shape(), vec![256, 256]);
    }

    #[test]
    fn sections_parse() {
        let c = RunConfig::from_toml(
            r#"
            seed = 7
            [mel]
            sample_rate = 8000
            n_mels = 16
            block_frames = 16
            [schedule]
            kind = "linear"
            T = 50
            beta_min = 1e-4
            beta_max = 0.05
            [model]
            kind = "mlp"
            hidden = [32]
            [elbo]
            mode = "exact_sum"
            mc_samples = 2
            "#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.mel_config().f_max, 4000.0);
        assert_eq!(c.schedule_spec().steps, 50);
        assert_eq!(c.architecture(), Architecture::mlp(&[16, 16], &[32], 16));
        assert_eq!(c.elbo_settings().mode, ElboMode::ExactSum);
    }

    #[test]
    fn bad_values_rejected() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        let c = RunConfig::from_toml("[elbo]\nmc_samples = 0").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::from_toml("[mel]\nf_max = 1e9").unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::from_toml("[analysis]\nalpha = 1.5").unwrap();
        assert!(c.validate().is_err());
    }
}
