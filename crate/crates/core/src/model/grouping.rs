//! Top-down grouping: learned group vectors compete for tokens.
//!
//! Raw scores `Q(g) K(t)ᵀ / √d` are normalized over the *group* axis (with
//! Gumbel noise in training), turned into a hard one-hot assignment whose
//! gradient is that of the soft distribution, and each group absorbs the
//! values of the tokens assigned to it:
//!
//! ```text
//! ḡ_k = ĝ_k + W( Σ_j  A_kj / (ε + Σ_j' A_kj') · V(t̂_j) )
//! ```

use crate::autodiff::{argmax_axis, gumbel_noise, BoundParams, Result, Tensor};

use super::layers::{Init, Linear};

/// Forward mode of the grouping block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Gumbel noise drawn from `seed`.
    Train { seed: u64 },
    /// No noise; deterministic.
    Eval,
}

/// How the hard assignment is recorded on the tape. Every route gives the
/// same gradient; the first two also give the same forward value up to
/// rounding.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum AssignmentRoute {
    /// Dedicated op: forward is exactly one-hot, backward is identity.
    #[default]
    StraightThrough,
    /// `one_hot − stop_gradient(A') + A'` spelled out with primitive ops.
    Literal,
    /// `one_hot + A' − A'₀` with `A'₀` a constant `[B, K, M]` buffer. Equal
    /// to the hard forward when `A'₀ = A'`, and differentiable in the
    /// parameters around that point, so finite differences of this route
    /// measure the straight-through gradient.
    Anchored(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupingBlock {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub temperature: f64,
    pub eps: f64,
}

/// Everything the grouping block produces for one batch.
#[derive(Debug, Clone)]
pub struct GroupingOutput<'t> {
    /// Updated groups `ḡ`, `[B, K, d]`.
    pub groups: Tensor<'t>,
    /// Raw scores before noise and normalization, `[B, K, M]`.
    pub raw_scores: Tensor<'t>,
    /// `A'`: softmax over groups, zero on padded columns, `[B, K, M]`.
    pub soft_attention: Tensor<'t>,
    /// `A`: one-hot forward value with the gradient of `A'`, `[B, K, M]`.
    pub assignment: Tensor<'t>,
    /// Group index of every token, `None` for padding; `B` rows of `M`.
    pub hard_assignment: Vec<Vec<Option<usize>>>,
}

impl GroupingBlock {
    pub(crate) fn new(init: &mut Init<'_>, name: &str, d: usize, temperature: f64, eps: f64, qk_std: f64) -> Self {
        let std = std::mem::replace(&mut init.std, qk_std);
        let query = init.linear(&format!("{name}.query"), d, d);
        let key = init.linear(&format!("{name}.key"), d, d);
        init.std = std;
        Self {
            query,
            key,
            value: init.linear(&format!("{name}.value"), d, d),
            output: init.linear(&format!("{name}.output"), d, d),
            temperature,
            eps,
        }
    }

    /// `tokens [B, M, d]`, `groups [B, K, d]`, `pad_mask` row-major `B × M`.
    pub fn forward<'t>(
        &self,
        p: &BoundParams<'t>,
        tokens: &Tensor<'t>,
        groups: &Tensor<'t>,
        pad_mask: &[bool],
        mode: Mode,
        route: AssignmentRoute,
    ) -> Result<GroupingOutput<'t>> {
        let ts = tokens.shape();
        let gs = groups.shape();
        let (b, m, d) = (ts[0], ts[1], ts[2]);
        let k = gs[1];
        let tape = tokens.tape();

        let q = self.query.forward(p, groups)?;
        let key = self.key.forward(p, tokens)?;
        let raw_scores = q.batch_matmul(&key, true)?.scale(1.0 / (d as f64).sqrt());

        let noisy = match mode {
            Mode::Train { seed } => {
                let noise = tape.constant(gumbel_noise(&[b, k, m], seed), &[b, k, m])?;
                raw_scores.add(&noise)?
            }
            Mode::Eval => raw_scores,
        };
        let real = tape.constant(
            pad_mask.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect(),
            &[b, 1, m],
        )?;
        let soft = noisy
            .scale(1.0 / self.temperature)
            .softmax(1)?
            .mul(&real)?;

        let winners = argmax_axis(&soft.value(), &[b, k, m], 1);
        let mut one_hot = vec![0.0; b * k * m];
        let mut hard_assignment = Vec::with_capacity(b);
        for bi in 0..b {
            let row = (0..m)
                .map(|j| {
                    pad_mask[bi * m + j].then(|| {
                        let g = winners[bi * m + j];
                        one_hot[(bi * k + g) * m + j] = 1.0;
                        g
                    })
                })
                .collect();
            hard_assignment.push(row);
        }

        let assignment = match route {
            AssignmentRoute::StraightThrough => soft.straight_through(one_hot)?,
            AssignmentRoute::Literal => {
                let hard = tape.constant(one_hot, &[b, k, m])?;
                hard.sub(&soft.stop_gradient())?.add(&soft)?
            }
            AssignmentRoute::Anchored(reference) => {
                let hard = tape.constant(one_hot, &[b, k, m])?;
                let anchor = tape.constant(reference, &[b, k, m])?;
                hard.add(&soft)?.sub(&anchor)?
            }
        };

        let mass = assignment.sum_axis(2)?.add_scalar(self.eps);
        let weights = assignment.div(&mass)?;
        let values = self.value.forward(p, tokens)?;
        let pooled = weights.batch_matmul(&values, false)?;
        let updated = groups.add(&self.output.forward(p, &pooled)?)?;

        Ok(GroupingOutput {
            groups: updated,
            raw_scores,
            soft_attention: soft,
            assignment,
            hard_assignment,
        })
    }
}
