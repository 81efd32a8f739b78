//! Named parameter storage living outside any tape.

use std::collections::BTreeMap;

use super::{Gradients, Result, Tape, Tensor, TensorError};

/// Index of a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
struct Param {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
    decay: bool,
    frozen: bool,
}

/// Model parameters in registration order. Names are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. `decay` marks it for decoupled weight decay.
    ///
    /// # Panics
    /// On a duplicate name or a data/shape length mismatch; both are
    /// programming errors in model construction.
    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f64>, decay: bool) -> ParamId {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "parameter `{name}`");
        let idx = self.params.len();
        let prev = self.by_name.insert(name.to_string(), idx);
        assert!(prev.is_none(), "duplicate parameter `{name}`");
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
            decay,
            frozen: false,
        });
        ParamId(idx)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.params[id.0].shape
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].data
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.params[id.0].decay
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    /// Frozen parameters are bound as constants and skipped by optimizers.
    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Replaces a parameter's values, checking the length.
    pub fn set_data(&mut self, id: ParamId, data: Vec<f64>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.data.len() != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "set_data",
                lhs: p.shape.clone(),
                rhs: vec![data.len()],
            });
        }
        p.data = data;
        Ok(())
    }

    /// Records every parameter as a leaf of `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        let tensors = self
            .params
            .iter()
            .map(|p| {
                let t = if p.frozen {
                    tape.constant(p.data.clone(), &p.shape)
                } else {
                    tape.var(p.data.clone(), &p.shape)
                };
                t.expect("stored parameter shapes are valid")
            })
            .collect();
        BoundParams { tensors }
    }

    /// Records every parameter as a constant: inference only, nothing on the
    /// tape requires a gradient.
    pub fn bind_constant<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        let tensors = self
            .params
            .iter()
            .map(|p| {
                tape.constant(p.data.clone(), &p.shape)
                    .expect("stored parameter shapes are valid")
            })
            .collect();
        BoundParams { tensors }
    }
}

/// Parameters recorded on one tape.
#[derive(Debug, Clone)]
pub struct BoundParams<'t> {
    tensors: Vec<Tensor<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn get(&self, id: ParamId) -> Tensor<'t> {
        self.tensors[id.0]
    }

    /// Moves the gradient of every parameter out of `grads`, indexed by
    /// [`ParamId`].
    pub fn collect_grads(&self, grads: &mut Gradients) -> Vec<Option<Vec<f64>>> {
        self.tensors.iter().map(|t| grads.take(t)).collect()
    }
}
