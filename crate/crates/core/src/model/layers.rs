//! Transformer building blocks over a [`BoundParams`] view.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{normal_init, BoundParams, ParamId, ParamStore, Result, Tape, Tensor};

/// Additive logit used for masked attention entries.
pub(crate) const MASKED: f64 = -1e9;

/// Registers freshly initialized parameters.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    pub std: f64,
}

impl Init<'_> {
    pub fn normal(&mut self, name: &str, shape: &[usize], decay: bool) -> ParamId {
        let n = shape.iter().product();
        let data = normal_init(self.rng, n, self.std);
        self.store.add(name, shape, data, decay)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        let n = shape.iter().product();
        self.store.add(name, shape, vec![value; n], false)
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> Linear {
        Linear {
            weight: self.normal(&format!("{name}.weight"), &[d_in, d_out], true),
            bias: self.constant(&format!("{name}.bias"), &[d_out], 0.0),
        }
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) -> LayerNorm {
        LayerNorm {
            gain: self.constant(&format!("{name}.gain"), &[d], 1.0),
            bias: self.constant(&format!("{name}.bias"), &[d], 0.0),
        }
    }
}

/// `y = x W + b`, applied to the last dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn forward<'t>(&self, p: &BoundParams<'t>, x: &Tensor<'t>) -> Result<Tensor<'t>> {
        x.matmul(&p.get(self.weight))?.add(&p.get(self.bias))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn forward<'t>(&self, p: &BoundParams<'t>, x: &Tensor<'t>) -> Result<Tensor<'t>> {
        x.layer_norm(&p.get(self.gain), &p.get(self.bias))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mlp {
    pub up: Linear,
    pub down: Linear,
}

impl Mlp {
    pub(crate) fn new(init: &mut Init<'_>, name: &str, d: usize, ratio: usize) -> Self {
        Self {
            up: init.linear(&format!("{name}.up"), d, d * ratio),
            down: init.linear(&format!("{name}.down"), d * ratio, d),
        }
    }

    pub fn forward<'t>(&self, p: &BoundParams<'t>, x: &Tensor<'t>) -> Result<Tensor<'t>> {
        self.down.forward(p, &self.up.forward(p, x)?.gelu())
    }
}

/// Multi-head scaled dot-product attention with separate query and
/// key/value inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
}

impl Attention {
    pub(crate) fn new(init: &mut Init<'_>, name: &str, d: usize, n_heads: usize) -> Self {
        Self {
            query: init.linear(&format!("{name}.query"), d, d),
            key: init.linear(&format!("{name}.key"), d, d),
            value: init.linear(&format!("{name}.value"), d, d),
            output: init.linear(&format!("{name}.output"), d, d),
            n_heads,
        }
    }

    /// `queries [B, Lq, d]` attend over `memory [B, Lk, d]`. `mask` is an
    /// additive `[B, 1, Lq | 1, Lk]` constant.
    pub fn forward<'t>(
        &self,
        p: &BoundParams<'t>,
        queries: &Tensor<'t>,
        memory: &Tensor<'t>,
        mask: Option<&Tensor<'t>>,
    ) -> Result<Tensor<'t>> {
        let qs = queries.shape();
        let ks = memory.shape();
        let (b, lq, d) = (qs[0], qs[1], qs[2]);
        let lk = ks[1];
        let h = self.n_heads;
        let dh = d / h;
        let split = |x: Tensor<'t>, l: usize| -> Result<Tensor<'t>> {
            if h == 1 {
                Ok(x)
            } else {
                x.reshape(&[b, l, h, dh])?
                    .permute(&[0, 2, 1, 3])?
                    .reshape(&[b * h, l, dh])
            }
        };
        let q = split(self.query.forward(p, queries)?, lq)?;
        let k = split(self.key.forward(p, memory)?, lk)?;
        let v = split(self.value.forward(p, memory)?, lk)?;
        let mut scores = q.batch_matmul(&k, true)?.scale(1.0 / (dh as f64).sqrt());
        if let Some(m) = mask {
            scores = scores
                .reshape(&[b, h, lq, lk])?
                .add(m)?
                .reshape(&[b * h, lq, lk])?;
        }
        let weights = scores.softmax(2)?;
        let mut out = weights.batch_matmul(&v, false)?;
        if h > 1 {
            out = out
                .reshape(&[b, h, lq, dh])?
                .permute(&[0, 2, 1, 3])?
                .reshape(&[b, lq, d])?;
        }
        self.output.forward(p, &out)
    }
}

/// Pre-norm encoder layer: `x + Attn(LN(x))`, then `x + MLP(LN(x))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderLayer {
    pub norm_attn: LayerNorm,
    pub attn: Attention,
    pub norm_mlp: LayerNorm,
    pub mlp: Mlp,
}

impl EncoderLayer {
    pub(crate) fn new(init: &mut Init<'_>, name: &str, d: usize, n_heads: usize, ratio: usize) -> Self {
        Self {
            norm_attn: init.layer_norm(&format!("{name}.norm_attn"), d),
            attn: Attention::new(init, &format!("{name}.attn"), d, n_heads),
            norm_mlp: init.layer_norm(&format!("{name}.norm_mlp"), d),
            mlp: Mlp::new(init, &format!("{name}.mlp"), d, ratio),
        }
    }

    pub fn forward<'t>(
        &self,
        p: &BoundParams<'t>,
        x: &Tensor<'t>,
        mask: Option<&Tensor<'t>>,
    ) -> Result<Tensor<'t>> {
        let h = self.norm_attn.forward(p, x)?;
        let x = x.add(&self.attn.forward(p, &h, &h, mask)?)?;
        let h = self.norm_mlp.forward(p, &x)?;
        x.add(&self.mlp.forward(p, &h)?)
    }
}

/// A stack of encoder layers closed by a final norm. An empty stack is the
/// identity.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack {
    pub layers: Vec<EncoderLayer>,
    pub final_norm: Option<LayerNorm>,
}

impl EncoderStack {
    pub(crate) fn new(init: &mut Init<'_>, name: &str, n: usize, d: usize, n_heads: usize, ratio: usize) -> Self {
        let layers = (0..n)
            .map(|i| EncoderLayer::new(init, &format!("{name}.{i}"), d, n_heads, ratio))
            .collect();
        let final_norm = (n > 0).then(|| init.layer_norm(&format!("{name}.final_norm"), d));
        Self { layers, final_norm }
    }

    pub fn forward<'t>(
        &self,
        p: &BoundParams<'t>,
        x: &Tensor<'t>,
        mask: Option<&Tensor<'t>>,
    ) -> Result<Tensor<'t>> {
        let mut x = *x;
        for layer in &self.layers {
            x = layer.forward(p, &x, mask)?;
        }
        match &self.final_norm {
            Some(norm) => norm.forward(p, &x),
            None => Ok(x),
        }
    }
}

/// `[B, 1, 1, L]` additive mask hiding keys where `visible` is false.
pub(crate) fn key_padding_mask<'t>(tape: &'t Tape, visible: &[bool], b: usize, l: usize) -> Result<Tensor<'t>> {
    let data = visible.iter().map(|&v| if v { 0.0 } else { MASKED }).collect();
    tape.constant(data, &[b, 1, 1, l])
}

/// `[B, 1, L, L]` additive mask: causal, plus hidden padded keys.
pub(crate) fn causal_mask<'t>(tape: &'t Tape, visible: &[bool], b: usize, l: usize) -> Result<Tensor<'t>> {
    let mut data = vec![0.0; b * l * l];
    for bi in 0..b {
        for i in 0..l {
            for j in 0..l {
                if j > i || !visible[bi * l + j] {
                    data[(bi * l + i) * l + j] = MASKED;
                }
            }
        }
    }
    tape.constant(data, &[b, 1, l, l])
}
