//! Training objectives: pooled projections, symmetric InfoNCE and the
//! reconstruction cross-entropy.

use serde::{Deserialize, Serialize};

use crate::autodiff::{cosine_matrix, BoundParams, Result, Tensor, TensorError};
use crate::batch::TextBatch;
use crate::model::{AssignmentRoute, GroupingOutput, Linear, Mode, TextGroupModel};

/// Frozen image groups for a batch, `[B, K_img, d_img]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub data: Vec<f64>,
    pub batch_size: usize,
    pub n_groups: usize,
    pub dim: usize,
}

impl ImageBatch {
    pub fn new(data: Vec<f64>, batch_size: usize, n_groups: usize, dim: usize) -> Self {
        assert_eq!(data.len(), batch_size * n_groups * dim);
        Self { data, batch_size, n_groups, dim }
    }

    /// Recorded as a constant: image groups never receive gradients.
    pub fn to_tensor<'t>(&self, tape: &'t crate::autodiff::Tape) -> Result<Tensor<'t>> {
        tape.constant(self.data.clone(), &[self.batch_size, self.n_groups, self.dim])
    }
}

/// Per-group linear projection followed by the mean over groups:
/// `[B, K, d] → [B, P]`.
pub fn project_and_pool<'t>(
    p: &BoundParams<'t>,
    groups: &Tensor<'t>,
    projector: &Linear,
) -> Result<Tensor<'t>> {
    projector.forward(p, groups)?.mean_axis(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// For each image, classify its caption among all captions.
    ImageToText,
    /// For each caption, classify its image among all images.
    TextToImage,
}

/// InfoNCE over cosine similarities at temperature `tau`. Row `i` of `text`
/// and of `image` form the positive pair.
pub fn info_nce<'t>(
    text: &Tensor<'t>,
    image: &Tensor<'t>,
    tau: f64,
    direction: Direction,
) -> Result<Tensor<'t>> {
    let b = text.shape()[0];
    if b < 2 {
        return Err(TensorError::Invalid {
            op: "info_nce",
            msg: format!("batch of {b} has no negatives"),
        });
    }
    if !(tau > 0.0) {
        return Err(TensorError::Invalid {
            op: "info_nce",
            msg: format!("temperature must be positive, got {tau}"),
        });
    }
    // sims[i][j] = sim(text_i, image_j)
    let sims = cosine_matrix(text, image)?;
    let logits = match direction {
        Direction::TextToImage => sims,
        Direction::ImageToText => sims.transpose()?,
    };
    let targets: Vec<usize> = (0..b).collect();
    logits.scale(1.0 / tau).cross_entropy(&targets, usize::MAX)
}

/// Both InfoNCE directions and their mean.
pub fn contrastive_loss<'t>(
    text: &Tensor<'t>,
    image: &Tensor<'t>,
    tau: f64,
) -> Result<(Tensor<'t>, Tensor<'t>, Tensor<'t>)> {
    let i2t = info_nce(text, image, tau, Direction::ImageToText)?;
    let t2i = info_nce(text, image, tau, Direction::TextToImage)?;
    let mean = i2t.add(&t2i)?.scale(0.5);
    Ok((i2t, t2i, mean))
}

/// Cross-entropy of the reconstruction logits `[B, M-1, V]` against the
/// batch shifted by one; padded targets are ignored. Mean over tokens
/// within a caption, then mean over captions.
pub fn reconstruction_loss<'t>(logits: &Tensor<'t>, batch: &TextBatch) -> Result<Tensor<'t>> {
    let shape = logits.shape();
    let (b, m) = (batch.batch_size(), batch.seq_len());
    if shape.len() != 3 || shape[0] != b || shape[1] + 1 != m {
        return Err(TensorError::ShapeMismatch {
            op: "reconstruction_loss",
            lhs: shape,
            rhs: vec![b, m],
        });
    }
    let (l, v) = (shape[1], shape[2]);
    let mut targets = Vec::with_capacity(b * l);
    let mut weights = Vec::with_capacity(b * l);
    for bi in 0..b {
        let row = batch.row(bi);
        let mask = &batch.pad_mask()[bi * m..(bi + 1) * m];
        let n = mask[1..].iter().filter(|&&r| r).count();
        for i in 0..l {
            targets.push(row[i + 1]);
            weights.push(if mask[i + 1] { 1.0 / (b * n) as f64 } else { 0.0 });
        }
    }
    logits.reshape(&[b * l, v])?.weighted_nll(&targets, &weights)
}

/// Which terms enter the total, and how.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub temperature: f64,
    pub contrastive: bool,
    pub reconstruction: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            temperature: 0.07,
            contrastive: true,
            reconstruction: true,
        }
    }
}

/// Scalar values of every loss term. Disabled terms are reported as 0.
///
/// `l_contrastive = (l_i2t + l_t2i) / 2` and
/// `l_total = w_c · l_contrastive + λ · l_reconstruction` hold exactly,
/// where `w_c` is 1 or 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_i2t: f64,
    pub l_t2i: f64,
    pub l_contrastive: f64,
    pub l_reconstruction: f64,
    pub l_total: f64,
    pub lambda: f64,
    pub temperature: f64,
    pub contrastive_weight: f64,
}

/// Output of [`total_loss`].
pub struct LossOutput<'t> {
    pub total: Tensor<'t>,
    pub breakdown: LossBreakdown,
    pub grouping: GroupingOutput<'t>,
}

/// Encodes the batch and combines the enabled objectives.
pub fn total_loss<'t>(
    model: &TextGroupModel,
    p: &BoundParams<'t>,
    batch: &TextBatch,
    images: &ImageBatch,
    weights: &LossWeights,
    mode: Mode,
) -> Result<LossOutput<'t>> {
    total_loss_with(model, p, batch, images, weights, mode, AssignmentRoute::default())
}

/// [`total_loss`] with an explicit assignment route.
pub fn total_loss_with<'t>(
    model: &TextGroupModel,
    p: &BoundParams<'t>,
    batch: &TextBatch,
    images: &ImageBatch,
    weights: &LossWeights,
    mode: Mode,
    route: AssignmentRoute,
) -> Result<LossOutput<'t>> {
    if !weights.contrastive && !weights.reconstruction {
        return Err(TensorError::Invalid {
            op: "total_loss",
            msg: "both objectives disabled".into(),
        });
    }
    let (groups, grouping) = model.encode_text_with(p, batch, mode, route)?;
    let zero = || -> Result<Tensor<'t>> { groups.tape().constant(vec![0.0], &[1]) };

    let (i2t, t2i, contrastive) = if weights.contrastive {
        let l = &model.layout;
        let text = project_and_pool(p, &groups, &l.text_projector)?;
        let image = project_and_pool(p, &images.to_tensor(groups.tape())?, &l.image_projector)?;
        contrastive_loss(&text, &image, weights.temperature)?
    } else {
        (zero()?, zero()?, zero()?)
    };
    let (recon, lambda) = if weights.reconstruction {
        let logits = model.decode(p, batch, &groups)?;
        (reconstruction_loss(&logits, batch)?, weights.lambda)
    } else {
        (zero()?, 0.0)
    };
    let contrastive_weight = if weights.contrastive { 1.0 } else { 0.0 };
    let total = match (weights.contrastive, weights.reconstruction) {
        (true, true) => contrastive.add(&recon.scale(lambda))?,
        (true, false) => contrastive,
        (false, _) => recon.scale(lambda),
    };
    let breakdown = LossBreakdown {
        l_i2t: i2t.item(),
        l_t2i: t2i.item(),
        l_contrastive: contrastive.item(),
        l_reconstruction: recon.item(),
        l_total: total.item(),
        lambda,
        temperature: weights.temperature,
        contrastive_weight,
    };
    Ok(LossOutput {
        total,
        breakdown,
        grouping,
    })
}
