//! Training configuration: JSON file format and defaults.

use crate::model::RelTargetSpace;
use crate::numerics::Precision;
use crate::params::ModelDims;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Per-augmentation on/off switches.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct AugmentToggles {
    pub rotate: bool,
    pub permute: bool,
    pub reverse: bool,
}

impl Default for AugmentToggles {
    fn default() -> Self {
        AugmentToggles { rotate: true, permute: true, reverse: true }
    }
}

impl AugmentToggles {
    pub fn none() -> Self {
        AugmentToggles { rotate: false, permute: false, reverse: false }
    }
}

/// Training configuration. Joint count is not part of the config; the
/// model takes it from the dataset's skeleton.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Fusion layer count.
    pub l: usize,
    /// Feature width.
    pub d: usize,
    /// Attention heads.
    pub d_h: usize,
    /// Query/key/value width.
    pub d_k: usize,
    /// Quadratic relation-score width per head.
    pub d_prime: usize,
    /// Feed-forward hidden width.
    pub d_ff: usize,
    /// Person-embedding capacity.
    pub n_max: usize,
    pub t_h: usize,
    pub t_f: usize,
    pub lambda_j: f64,
    pub lambda_r: f64,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// "f32" or "f64".
    pub precision: String,
    /// "exp" or "raw".
    pub rel_target_space: String,
    pub unit_scale: f64,
    pub augment: AugmentToggles,
    pub checkpoint_every_epochs: usize,
    /// VIM report timestamps in milliseconds.
    pub vim_report_ms: Vec<f64>,
    /// MPJPE report horizons in seconds.
    pub mpjpe_horizons_s: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l: 4,
            d: 128,
            d_h: 8,
            d_k: 128,
            d_prime: 128,
            d_ff: 256,
            n_max: 8,
            t_h: 16,
            t_f: 14,
            lambda_j: 10.0,
            lambda_r: 10.0,
            lr0: 1e-3,
            decay_factor: 0.8,
            decay_every_epochs: 10,
            batch_size: 128,
            epochs: 100,
            seed: 0,
            precision: "f32".to_string(),
            rel_target_space: "exp".to_string(),
            unit_scale: 1.0,
            augment: AugmentToggles::default(),
            checkpoint_every_epochs: 10,
            vim_report_ms: vec![100.0, 240.0, 500.0, 640.0, 900.0],
            mpjpe_horizons_s: vec![1.0, 2.0, 3.0],
        }
    }
}

impl TrainConfig {
    /// Small setup for smoke tests and gradient checking.
    pub fn tiny() -> Self {
        let dims = ModelDims::tiny();
        TrainConfig {
            l: dims.layers,
            d: dims.d,
            d_h: dims.d_h,
            d_k: dims.d_k,
            d_prime: dims.d_prime,
            d_ff: dims.d_ff,
            n_max: dims.n_max,
            t_h: dims.t_h,
            t_f: dims.t_f,
            batch_size: 1,
            epochs: 10,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("l", self.l),
            ("d", self.d),
            ("d_h", self.d_h),
            ("d_k", self.d_k),
            ("d_prime", self.d_prime),
            ("d_ff", self.d_ff),
            ("n_max", self.n_max),
            ("t_f", self.t_f),
            ("batch_size", self.batch_size),
            ("decay_every_epochs", self.decay_every_epochs),
            ("checkpoint_every_epochs", self.checkpoint_every_epochs),
        ] {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if self.t_h < 2 {
            return Err(ConfigError::Invalid("t_h must be at least 2".into()));
        }
        if !self.d_k.is_multiple_of(self.d_h) {
            return Err(ConfigError::Invalid(format!(
                "d_k {} must be divisible by d_h {}",
                self.d_k, self.d_h
            )));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(ConfigError::Invalid("lr0 must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(ConfigError::Invalid("decay_factor must be in (0, 1]".into()));
        }
        if self.lambda_j < 0.0 || self.lambda_r < 0.0 {
            return Err(ConfigError::Invalid("loss weights must be nonnegative".into()));
        }
        if !(self.unit_scale > 0.0 && self.unit_scale.is_finite()) {
            return Err(ConfigError::Invalid("unit_scale must be positive".into()));
        }
        if self.parsed_precision().is_none() {
            return Err(ConfigError::Invalid(format!(
                "precision must be \"f32\" or \"f64\", got {:?}",
                self.precision
            )));
        }
        if self.parsed_rel_target_space().is_none() {
            return Err(ConfigError::Invalid(format!(
                "rel_target_space must be \"exp\" or \"raw\", got {:?}",
                self.rel_target_space
            )));
        }
        Ok(())
    }

    pub fn parsed_precision(&self) -> Option<Precision> {
        Precision::parse(&self.precision)
    }

    pub fn parsed_rel_target_space(&self) -> Option<RelTargetSpace> {
        RelTargetSpace::parse(&self.rel_target_space)
    }

    /// Architecture dimensions once the dataset's joint count is known.
    pub fn dims_with_joints(&self, joints: usize) -> ModelDims {
        ModelDims {
            layers: self.l,
            d: self.d,
            d_h: self.d_h,
            d_k: self.d_k,
            d_prime: self.d_prime,
            d_ff: self.d_ff,
            n_max: self.n_max,
            joints,
            t_h: self.t_h,
            t_f: self.t_f,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}
