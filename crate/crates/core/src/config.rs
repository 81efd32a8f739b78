//! Run configuration: everything that determines a training run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::AdamWConfig;
use crate::model::EncoderConfig;
use crate::objectives::LossWeights;
use crate::world::vocab::hex_digest;
use crate::world::WorldConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_epochs: f64,
    pub total_epochs: usize,
    pub cosine_decay: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
            warmup_epochs: 2.0,
            total_epochs: 30,
            cosine_decay: true,
        }
    }
}

impl OptimizerConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub gumbel: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 0,
            init: 1,
            gumbel: 2,
        }
    }
}

impl Seeds {
    /// All three streams derived from one user seed.
    pub fn from_base(seed: u64) -> Self {
        use crate::autodiff::random::derive_seed;
        Self {
            data: derive_seed(seed, 0),
            init: derive_seed(seed, 1),
            gumbel: derive_seed(seed, 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            n_train: 5000,
            n_val: 500,
            n_test: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub disable_contrastive: bool,
    pub disable_reconstruction: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub world: WorldConfig,
    /// Weight of the reconstruction loss.
    pub lambda: f64,
    /// InfoNCE temperature.
    pub temperature: f64,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub seeds: Seeds,
    pub data: DataConfig,
    pub ablation: Ablation,
}

impl Default for RunConfig {
    /// Defaults sized for a single-machine run.
    fn default() -> Self {
        Self {
            encoder: EncoderConfig {
                model_dim: 64,
                ..EncoderConfig::default()
            },
            world: WorldConfig::default(),
            lambda: 1.0,
            temperature: 0.07,
            optimizer: OptimizerConfig::default(),
            batch_size: 64,
            seeds: Seeds::default(),
            data: DataConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid run config: {0}")]
pub struct RunConfigError(pub String);

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunConfigError> {
        let fail = |m: String| Err(RunConfigError(m));
        self.encoder.validate().map_err(|e| RunConfigError(e.0))?;
        self.world.validate().map_err(RunConfigError)?;
        if self.ablation.disable_contrastive && self.ablation.disable_reconstruction {
            return fail("both objectives disabled; nothing to train".into());
        }
        if self.encoder.image_dim != self.world.image_dim {
            return fail(format!(
                "encoder.image_dim ({}) differs from world.image_dim ({})",
                self.encoder.image_dim, self.world.image_dim
            ));
        }
        let vocab = crate::world::Vocab::synthetic().len();
        if self.encoder.vocab_size < vocab {
            return fail(format!("encoder.vocab_size ({}) below vocabulary size {vocab}", self.encoder.vocab_size));
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2".into());
        }
        if !(self.temperature > 0.0) {
            return fail("temperature must be positive".into());
        }
        if !(self.lambda >= 0.0) {
            return fail("lambda must be non-negative".into());
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(o.warmup_epochs >= 0.0) || o.total_epochs == 0 {
            return fail("optimizer needs lr > 0, warmup_epochs >= 0 and total_epochs >= 1".into());
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return fail("optimizer betas must lie in [0, 1) and eps must be positive".into());
        }
        if self.data.n_train < self.batch_size {
            return fail(format!(
                "n_train ({}) smaller than one batch ({})",
                self.data.n_train, self.batch_size
            ));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            temperature: self.temperature,
            contrastive: !self.ablation.disable_contrastive,
            reconstruction: !self.ablation.disable_reconstruction,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, RunConfigError> {
        serde_json::from_str(s).map_err(|e| RunConfigError(e.to_string()))
    }

    /// Run identity: SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(self).expect("config serializes").as_bytes());
        hex_digest(h)
    }

    /// Steps per epoch; a trailing partial batch is kept when it has at
    /// least two examples.
    pub fn steps_per_epoch(&self) -> usize {
        let full = self.data.n_train / self.batch_size;
        full + usize::from(self.data.n_train % self.batch_size >= 2)
    }
}
