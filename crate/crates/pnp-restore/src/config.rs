//! Experiment configuration: a sectioned key-value file (TOML syntax) where
//! every key has a default and unknown keys are hard errors. The fully
//! resolved config is written next to a run's outputs so any result can be
//! reproduced from the sidecar alone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::EpisodeConfig;
use crate::error::{Error, Result};
use crate::forward::{gaussian_kernel, CgConfig, Degradation};
use crate::nn::NetConfig;
use crate::ppo::PPOConfig;

fn default_seed() -> u64 {
    0
}
fn default_output_dir() -> String {
    "out".into()
}
fn default_jobs() -> usize {
    0 // 0 = use available cores
}

/// Run-level settings: seeding, artifact location, parallelism.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub output_dir: String,
    pub jobs: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: default_seed(),
            output_dir: default_output_dir(),
            jobs: default_jobs(),
        }
    }
}

/// Dataset locations. All are plain directories of .pgm/.png images.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub train_dir: String,
    /// Optional held-out set for per-epoch PSNR; falls back to train_dir.
    pub holdout_dir: Option<String>,
    pub eval_dir: String,
}

/// Policy/value network architecture.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub channels: usize,
    pub encoder_layers: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        let c = NetConfig::default();
        NetSection {
            channels: c.channels,
            encoder_layers: c.encoder_layers,
        }
    }
}

/// Episode shape for the denoising MDP.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSection {
    pub steps: usize,
    pub gamma: f64,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        let c = EpisodeConfig::default();
        EpisodeSection {
            steps: c.steps,
            gamma: c.gamma,
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoSection {
    pub clip_epsilon: f64,
    pub entropy_coeff: f64,
    pub epochs_per_batch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub total_epochs: usize,
    pub sigma_train: f64,
    pub value_loss_weight: f64,
    pub patch_size: usize,
}

impl Default for PpoSection {
    fn default() -> Self {
        let c = PPOConfig::default();
        PpoSection {
            clip_epsilon: c.clip_epsilon,
            entropy_coeff: c.entropy_coeff,
            epochs_per_batch: c.epochs_per_batch,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            total_epochs: c.total_epochs,
            sigma_train: c.sigma_train,
            value_loss_weight: c.value_loss_weight,
            patch_size: 70,
        }
    }
}

/// True degradation parameters, plus the solver's kernel-width estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationSection {
    /// "deblur" or "sisr"
    pub kind: String,
    pub kernel_size: usize,
    pub sigma_blur: f64,
    /// Subsampling factor; used only by sisr.
    pub factor: usize,
    pub noise_sigma: f64,
    /// Kernel width the solver assumes; defaults to sigma_blur (exact model).
    pub sigma_est: Option<f64>,
}

impl Default for DegradationSection {
    fn default() -> Self {
        DegradationSection {
            kind: "deblur".into(),
            kernel_size: 25,
            sigma_blur: 2.0,
            factor: 3,
            noise_sigma: 7.65,
            sigma_est: None,
        }
    }
}

/// Splitting-loop settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PnpSection {
    pub iterations: usize,
    pub sigma_start: f64,
    /// Regularization weight; defaults to 0.23 * max(noise_sigma, 1)^2.
    pub lambda: Option<f64>,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for PnpSection {
    fn default() -> Self {
        let cg = CgConfig::default();
        PnpSection {
            iterations: 30,
            sigma_start: 50.0,
            lambda: None,
            cg_tol: cg.tol,
            cg_max_iter: cg.max_iter,
        }
    }
}

/// Kernel-mismatch sweep settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub est_sigmas: Vec<f64>,
    /// Subsampling factors to sweep (sisr only; one CSV per factor).
    pub factors: Vec<usize>,
    /// When true, a non-decreasing PSNR trend is a run failure.
    pub assert_trend: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            est_sigmas: vec![2.2, 2.3, 2.4, 2.5, 2.6, 2.7, 2.8],
            factors: vec![2, 3, 4],
            assert_trend: false,
        }
    }
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub dataset: DatasetSection,
    pub net: NetSection,
    pub episode: EpisodeSection,
    pub ppo: PpoSection,
    pub degradation: DegradationSection,
    pub pnp: PnpSection,
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    /// Fill in every derived default so the serialized form is self-contained.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.degradation.sigma_est = Some(
            out.degradation
                .sigma_est
                .unwrap_or(out.degradation.sigma_blur),
        );
        out.pnp.lambda = Some(out.pnp.lambda.unwrap_or_else(|| {
            let sigma_end = out.degradation.noise_sigma.max(crate::pnp::SIGMA_END_FLOOR);
            0.23 * sigma_end * sigma_end
        }));
        out
    }

    /// Write the resolved config next to a run's outputs.
    pub fn write_resolved(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(&self.resolved())
            .map_err(|e| Error::Config(format!("serialize config: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            channels: self.net.channels,
            encoder_layers: self.net.encoder_layers,
        }
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            steps: self.episode.steps,
            gamma: self.episode.gamma,
        }
    }

    pub fn ppo_config(&self) -> PPOConfig {
        PPOConfig {
            clip_epsilon: self.ppo.clip_epsilon,
            entropy_coeff: self.ppo.entropy_coeff,
            gamma: self.episode.gamma,
            epochs_per_batch: self.ppo.epochs_per_batch,
            batch_size: self.ppo.batch_size,
            learning_rate: self.ppo.learning_rate,
            total_epochs: self.ppo.total_epochs,
            sigma_train: self.ppo.sigma_train,
            value_loss_weight: self.ppo.value_loss_weight,
        }
    }

    pub fn cg_config(&self) -> CgConfig {
        CgConfig {
            tol: self.pnp.cg_tol,
            max_iter: self.pnp.cg_max_iter,
        }
    }

    /// True degradation described by the [degradation] section.
    pub fn true_degradation(&self) -> Result<Degradation> {
        let kernel = gaussian_kernel(self.degradation.kernel_size, self.degradation.sigma_blur)?;
        match self.degradation.kind.as_str() {
            "deblur" => Degradation::deblur(kernel, self.degradation.noise_sigma),
            "sisr" => Degradation::sisr(kernel, self.degradation.factor, self.degradation.noise_sigma),
            other => Err(Error::Config(format!(
                "degradation.kind must be 'deblur' or 'sisr', got '{other}'"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_documented_defaults() {
        let cfg = ExperimentConfig::from_str("").unwrap();
        assert_eq!(cfg.run.seed, 0);
        assert_eq!(cfg.episode.steps, 5);
        assert_eq!(cfg.episode.gamma, 0.95);
        assert_eq!(cfg.ppo.batch_size, 32);
        assert_eq!(cfg.ppo.learning_rate, 1e-4);
        assert_eq!(cfg.degradation.kernel_size, 25);
        assert_eq!(cfg.degradation.sigma_blur, 2.0);
        assert_eq!(cfg.pnp.iterations, 30);
        assert_eq!(cfg.pnp.sigma_start, 50.0);
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let err = ExperimentConfig::from_str("[run]\nsede = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = ExperimentConfig::from_str("[typo_section]\nx = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn partial_config_overrides_only_named_keys() {
        let cfg = ExperimentConfig::from_str("[ppo]\ntotal_epochs = 10\n[run]\nseed = 7\n").unwrap();
        assert_eq!(cfg.ppo.total_epochs, 10);
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.ppo.batch_size, 32);
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::from_str("[degradation]\nnoise_sigma = 7.65\n").unwrap();
        let resolved = cfg.resolved();
        assert_eq!(resolved.degradation.sigma_est, Some(2.0));
        let lambda = resolved.pnp.lambda.unwrap();
        assert!((lambda - 0.23 * 7.65 * 7.65).abs() < 1e-12);
        let text = toml::to_string_pretty(&resolved).unwrap();
        let back = ExperimentConfig::from_str(&text).unwrap();
        assert_eq!(back.pnp.lambda, resolved.pnp.lambda);
        assert_eq!(back.degradation.sigma_est, resolved.degradation.sigma_est);
    }

    #[test]
    fn bad_degradation_kind_is_config_error() {
        let cfg = ExperimentConfig::from_str("[degradation]\nkind = \"blur\"\n").unwrap();
        assert!(matches!(cfg.true_degradation(), Err(Error::Config(_))));
    }
}
