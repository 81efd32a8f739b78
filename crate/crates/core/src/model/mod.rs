//! The text group transformer, its reconstruction decoder and the two
//! projection heads.
//!
//! Token embeddings plus learned positions are concatenated with `K` shared
//! learned group vectors and run through the pre-group encoder stack (pads
//! are never attended to). The [`GroupingBlock`] then binds tokens to
//! groups, and the post-group stack refines the `K` group vectors, which
//! are the text representation.

mod config;
mod grouping;
pub(crate) mod layers;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::random::rng_from_seed;
use crate::autodiff::{BoundParams, ParamId, ParamStore, Result, Tensor, TensorError};
use crate::batch::TextBatch;

pub use config::{ConfigError, EncoderConfig};
pub use grouping::{AssignmentRoute, GroupingBlock, GroupingOutput, Mode};
pub use layers::{Attention, EncoderLayer, EncoderStack, LayerNorm, Linear, Mlp};

use layers::{causal_mask, key_padding_mask, Init};

/// `[m, d]` table: `sin(p ω_i)` in even and `cos(p ω_i)` in odd columns,
/// `ω_i = 10000^(-2i/d)`.
fn sinusoids(m: usize, d: usize, amp: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(m * d);
    for pos in 0..m {
        for c in 0..d {
            let w = 10000f64.powf(-((c / 2 * 2) as f64) / d as f64);
            let a = pos as f64 * w;
            out.push(amp * if c % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    out
}

/// One-layer transformer decoder: causal self-attention, cross-attention
/// over the group vectors, MLP. Output logits reuse the token embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub position_embedding: ParamId,
    pub norm_self: LayerNorm,
    pub self_attn: Attention,
    pub norm_cross: LayerNorm,
    pub cross_attn: Attention,
    pub norm_mlp: LayerNorm,
    pub mlp: Mlp,
    pub final_norm: LayerNorm,
}

/// Parameter handles of every sub-module.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub group_tokens: ParamId,
    pub pre: EncoderStack,
    pub grouping: GroupingBlock,
    pub post: EncoderStack,
    pub text_projector: Linear,
    pub image_projector: Linear,
    pub decoder: Decoder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextGroupModel {
    pub config: EncoderConfig,
    pub params: ParamStore,
    pub layout: Layout,
}

impl TextGroupModel {
    /// Freshly initialized model; parameters are a pure function of
    /// `(config, seed)`.
    pub fn new(config: EncoderConfig, seed: u64) -> std::result::Result<Self, ConfigError> {
        config.validate()?;
        let mut rng: ChaCha8Rng = rng_from_seed(seed);
        let mut params = ParamStore::new();
        let c = &config;
        let d = c.model_dim;
        let mut init = Init {
            store: &mut params,
            rng: &mut rng,
            std: c.init_std,
        };
        let token_embedding = init.normal("token_embedding", &[c.vocab_size, d], true);
        let position_embedding = init.normal("encoder.position_embedding", &[c.max_tokens, d], false);
        let group_tokens = init.normal("encoder.group_tokens", &[c.n_groups, d], false);
        let pre = EncoderStack::new(&mut init, "encoder.pre", c.n_pre_layers, d, c.n_heads, c.mlp_ratio);
        let grouping = GroupingBlock::new(&mut init, "encoder.grouping", d, c.gumbel_temperature, c.assignment_eps, c.grouping_qk_std());
        let post = EncoderStack::new(&mut init, "encoder.post", c.n_post_layers, d, c.n_heads, c.mlp_ratio);
        let text_projector = init.linear("text_projector", d, c.projection_dim);
        let image_projector = init.linear("image_projector", c.image_dim, c.projection_dim);
        let decoder = Decoder {
            position_embedding: init.normal("decoder.position_embedding", &[c.max_tokens, d], false),
            norm_self: init.layer_norm("decoder.norm_self", d),
            self_attn: Attention::new(&mut init, "decoder.self_attn", d, 1),
            norm_cross: init.layer_norm("decoder.norm_cross", d),
            cross_attn: Attention::new(&mut init, "decoder.cross_attn", d, 1),
            norm_mlp: init.layer_norm("decoder.norm_mlp", d),
            mlp: Mlp::new(&mut init, "decoder.mlp", d, c.mlp_ratio),
            final_norm: init.layer_norm("decoder.final_norm", d),
        };
        let layout = Layout {
            token_embedding,
            position_embedding,
            group_tokens,
            pre,
            grouping,
            post,
            text_projector,
            image_projector,
            decoder,
        };
        if let Some(amp) = c.sinusoidal_positions {
            params
                .set_data(layout.position_embedding, sinusoids(c.max_tokens, d, amp))
                .expect("shape matches");
        }
        Ok(Self { config, params, layout })
    }

    /// Parameters that only the decoder reads (the tied embedding excluded).
    pub fn decoder_only_params(&self) -> Vec<ParamId> {
        self.params
            .ids()
            .filter(|&id| self.params.name(id).starts_with("decoder."))
            .collect()
    }

    /// Parameters of the projection heads.
    pub fn projector_params(&self) -> Vec<ParamId> {
        let l = &self.layout;
        vec![
            l.text_projector.weight,
            l.text_projector.bias,
            l.image_projector.weight,
            l.image_projector.bias,
        ]
    }

    fn check_batch(&self, op: &'static str, batch: &TextBatch) -> Result<()> {
        if batch.seq_len() > self.config.max_tokens {
            return Err(TensorError::Invalid {
                op,
                msg: format!(
                    "sequence length {} exceeds max_tokens {}",
                    batch.seq_len(),
                    self.config.max_tokens
                ),
            });
        }
        if let Some(&bad) = batch.token_ids().iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(TensorError::Invalid {
                op,
                msg: format!("token id {bad} outside vocabulary of {}", self.config.vocab_size),
            });
        }
        Ok(())
    }

    /// Embeds tokens, appends the group vectors and runs the pre-group
    /// stack. Returns `(tokens [B, M, d], groups [B, K, d])`.
    pub fn embed_and_encode<'t>(
        &self,
        p: &BoundParams<'t>,
        batch: &TextBatch,
    ) -> Result<(Tensor<'t>, Tensor<'t>)> {
        self.check_batch("embed_and_encode", batch)?;
        let (b, m) = (batch.batch_size(), batch.seq_len());
        let (k, d) = (self.config.n_groups, self.config.model_dim);
        let l = &self.layout;
        let tokens = p
            .get(l.token_embedding)
            .gather_rows(batch.token_ids())?
            .reshape(&[b, m, d])?
            .add(&p.get(l.position_embedding).slice(0, 0, m)?)?;
        let groups = p.get(l.group_tokens).broadcast_to(&[b, k, d])?;
        let seq = Tensor::concat(&[tokens, groups], 1)?;
        let mut visible = Vec::with_capacity(b * (m + k));
        for bi in 0..b {
            visible.extend_from_slice(&batch.pad_mask()[bi * m..(bi + 1) * m]);
            visible.extend(std::iter::repeat_n(true, k));
        }
        let mask = key_padding_mask(tokens.tape(), &visible, b, m + k)?;
        let out = l.pre.forward(p, &seq, Some(&mask))?;
        Ok((out.slice(1, 0, m)?, out.slice(1, m, k)?))
    }

    /// Full text encoder: returns the refined groups `[B, K, d]` and the
    /// grouping diagnostics.
    pub fn encode_text<'t>(
        &self,
        p: &BoundParams<'t>,
        batch: &TextBatch,
        mode: Mode,
    ) -> Result<(Tensor<'t>, GroupingOutput<'t>)> {
        self.encode_text_with(p, batch, mode, AssignmentRoute::default())
    }

    pub fn encode_text_with<'t>(
        &self,
        p: &BoundParams<'t>,
        batch: &TextBatch,
        mode: Mode,
        route: AssignmentRoute,
    ) -> Result<(Tensor<'t>, GroupingOutput<'t>)> {
        let (tokens, groups) = self.embed_and_encode(p, batch)?;
        let out = self
            .layout
            .grouping
            .forward(p, &tokens, &groups, batch.pad_mask(), mode, route)?;
        let refined = self.layout.post.forward(p, &out.groups, None)?;
        Ok((refined, out))
    }

    /// Teacher-forced reconstruction logits `[B, M-1, V]`: position `i`
    /// sees tokens `0..=i` and predicts token `i + 1`.
    pub fn decode<'t>(
        &self,
        p: &BoundParams<'t>,
        batch: &TextBatch,
        groups: &Tensor<'t>,
    ) -> Result<Tensor<'t>> {
        self.check_batch("decode", batch)?;
        let (b, m) = (batch.batch_size(), batch.seq_len());
        if m < 2 {
            return Err(TensorError::Invalid {
                op: "decode",
                msg: "sequences need at least two tokens".into(),
            });
        }
        let l = m - 1;
        let d = self.config.model_dim;
        let mut inputs = Vec::with_capacity(b * l);
        let mut visible = Vec::with_capacity(b * l);
        for bi in 0..b {
            inputs.extend_from_slice(&batch.row(bi)[..l]);
            visible.extend_from_slice(&batch.pad_mask()[bi * m..bi * m + l]);
        }
        let dec = &self.layout.decoder;
        let embedding = p.get(self.layout.token_embedding);
        let x = embedding
            .gather_rows(&inputs)?
            .reshape(&[b, l, d])?
            .add(&p.get(dec.position_embedding).slice(0, 0, l)?)?;
        let mask = causal_mask(x.tape(), &visible, b, l)?;
        let h = dec.norm_self.forward(p, &x)?;
        let x = x.add(&dec.self_attn.forward(p, &h, &h, Some(&mask))?)?;
        let h = dec.norm_cross.forward(p, &x)?;
        let x = x.add(&dec.cross_attn.forward(p, &h, groups, None)?)?;
        let h = dec.norm_mlp.forward(p, &x)?;
        let x = x.add(&dec.mlp.forward(p, &h)?)?;
        let h = dec.final_norm.forward(p, &x)?;
        h.reshape(&[b * l, d])?
            .matmul_t(&embedding)?
            .reshape(&[b, l, self.config.vocab_size])
    }
}
