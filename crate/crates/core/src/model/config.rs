use serde::{Deserialize, Serialize};

/// Shape and hyperparameters of the text group transformer and its heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub n_pre_layers: usize,
    pub n_post_layers: usize,
    pub n_groups: usize,
    pub max_tokens: usize,
    pub gumbel_temperature: f64,
    pub projection_dim: usize,
    /// Width of the frozen image-group vectors fed to the image projector.
    pub image_dim: usize,
    /// Added to each group's assignment mass before normalizing.
    pub assignment_eps: f64,
    pub mlp_ratio: usize,
    pub init_std: f64,
    /// Init std of the grouping query/key projections; `None` means
    /// `1/√d`, which puts raw assignment scores at the Gumbel noise scale.
    pub grouping_qk_std: Option<f64>,
    /// When set, encoder positions start as sinusoids of this amplitude
    /// instead of small random vectors.
    pub sinusoidal_positions: Option<f64>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            model_dim: 128,
            n_heads: 4,
            n_pre_layers: 6,
            n_post_layers: 3,
            n_groups: 4,
            max_tokens: 77,
            gumbel_temperature: 1.0,
            projection_dim: 256,
            image_dim: 256,
            assignment_eps: 1.0,
            mlp_ratio: 4,
            init_std: 0.02,
            grouping_qk_std: None,
            sinusoidal_positions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid encoder config: {0}")]
pub struct ConfigError(pub String);

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError(m.to_string()));
        if self.model_dim == 0 || self.n_heads == 0 || self.model_dim % self.n_heads != 0 {
            return fail("model_dim must be a positive multiple of n_heads");
        }
        if self.n_groups == 0 {
            return fail("n_groups must be at least 1");
        }
        if self.max_tokens < 2 {
            return fail("max_tokens must be at least 2");
        }
        if self.vocab_size < 5 {
            return fail("vocab_size too small for the special tokens");
        }
        if !(self.gumbel_temperature > 0.0) {
            return fail("gumbel_temperature must be positive");
        }
        if !(self.assignment_eps > 0.0) {
            return fail("assignment_eps must be positive");
        }
        if self.projection_dim == 0 || self.image_dim == 0 || self.mlp_ratio == 0 {
            return fail("projection_dim, image_dim and mlp_ratio must be positive");
        }
        if self.grouping_qk_std.is_some_and(|s| !(s > 0.0)) {
            return fail("grouping_qk_std must be positive");
        }
        Ok(())
    }

    pub fn grouping_qk_std(&self) -> f64 {
        self.grouping_qk_std
            .unwrap_or(1.0 / (self.model_dim as f64).sqrt())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }
}
