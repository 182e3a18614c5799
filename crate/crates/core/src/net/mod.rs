//! Multi-task sequence-to-sequence disaggregation network.
//!
//! The model maps a window of main-line (power, voltage, current) readings to
//! per-appliance power and ON-probability sequences. Attention runs along two
//! axes: per-track temporal self-attention captures each appliance's dynamics
//! and a per-time-step pass across the appliance axis captures co-usage
//! structure. Training uses the built-in reverse-mode tape in [`tape`] and
//! plain stochastic gradient descent.

pub mod model;
pub mod persist;
pub mod tape;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Window recombination / jitter settings for training-time augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub enabled: bool,
    /// Probability that a window is rebuilt from recombined channels.
    pub recombination_prob: f64,
    /// Maximum circular time shift applied to a recombined channel, samples.
    pub time_shift_max: usize,
    /// Sigma of the multiplicative amplitude jitter.
    pub amplitude_jitter_sigma: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            enabled: true,
            recombination_prob: 0.5,
            time_shift_max: 32,
            amplitude_jitter_sigma: 0.05,
        }
    }
}

impl AugmentationConfig {
    pub fn disabled() -> Self {
        AugmentationConfig {
            enabled: false,
            ..AugmentationConfig::default()
        }
    }
}

/// All training hyperparameters. Defaults are the bench configuration:
/// 3 input features, batch 32, learning rate 1e-3, hidden 64, dropout 0.1,
/// sequence length 864, 5 epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub input_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden_size: usize,
    pub dropout: f64,
    pub seq_len: usize,
    pub epochs: usize,
    pub n_appliances: usize,
    pub n_heads: usize,
    /// Weight of the classification term in the joint loss.
    pub lambda_cls: f64,
    /// Watts above which an appliance counts as ON.
    pub on_threshold: f64,
    pub seed: u64,
    pub augmentation: AugmentationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            input_size: 3,
            batch_size: 32,
            learning_rate: 0.001,
            hidden_size: 64,
            dropout: 0.1,
            seq_len: 864,
            epochs: 5,
            n_appliances: 4,
            n_heads: 4,
            lambda_cls: 1.0,
            on_threshold: 5.0,
            seed: 0,
            augmentation: AugmentationConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Encoder depth; two blocks exercise the stacked-attention structure.
    pub const ENCODER_BLOCKS: usize = 2;
    /// Feed-forward expansion factor inside encoder blocks.
    pub const FFN_EXPANSION: usize = 4;

    pub fn validate(&self) -> Result<()> {
        if self.input_size != 3 {
            return Err(Error::Config(format!(
                "input_size is fixed at 3 (main power, voltage, current); got {}",
                self.input_size
            )));
        }
        if self.seq_len == 0 {
            return Err(Error::Config("seq_len must be > 0".to_string()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".to_string()));
        }
        if self.n_heads == 0 || self.hidden_size % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_size {} must be divisible by n_heads {}",
                self.hidden_size, self.n_heads
            )));
        }
        if self.n_appliances == 0 {
            return Err(Error::Config("n_appliances must be >= 1".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".to_string()));
        }
        if self.augmentation.enabled {
            if self.augmentation.recombination_prob < 0.0
                || self.augmentation.recombination_prob > 1.0
            {
                return Err(Error::Config(
                    "recombination_prob must be in [0, 1]".to_string(),
                ));
            }
            if self.augmentation.time_shift_max >= self.seq_len {
                return Err(Error::Config(format!(
                    "time_shift_max {} must be smaller than seq_len {}",
                    self.augmentation.time_shift_max, self.seq_len
                )));
            }
            if self.augmentation.amplitude_jitter_sigma < 0.0 {
                return Err(Error::Config(
                    "amplitude_jitter_sigma must be >= 0".to_string(),
                ));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.n_heads
    }
}

pub use model::{
    batch_infer, forward, init_model, predict_series, predict_series_with_prob, ModelParams,
    NormStats, Tensor,
};
pub use persist::{load_model, save_model};
pub use train::{
    augment, backward_and_step, compute_norm_stats, gradient_check, loss, slice_windows, train,
    EpochStats, GradCheckReport, TrainHistory, TrainWindow,
};
