//! Dense reverse-mode automatic differentiation over 64-bit floats.
//!
//! A [`Tape`] records every operation of one forward pass. [`Tensor`] is a
//! cheap `Copy` handle into the tape; its value is immutable once recorded.
//! Calling [`Tape::backward`] on a scalar walks the tape in reverse and
//! returns a [`Gradients`] table keyed by tensor.
//!
//! ```
//! use textgroup::autodiff::Tape;
//!
//! let tape = Tape::new();
//! let a = tape.var(vec![1.0, 2.0], &[1, 2]).unwrap();
//! let b = tape.var(vec![3.0, 4.0], &[2, 1]).unwrap();
//! let c = a.matmul(&b).unwrap();
//! assert_eq!(c.item(), 11.0);
//!
//! let grads = tape.backward(&c).unwrap();
//! assert_eq!(grads.get(&a).unwrap(), &[3.0, 4.0]);
//! assert_eq!(grads.get(&b).unwrap(), &[1.0, 2.0]);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

pub(crate) mod kernels;
mod ops;
pub mod optim;
pub mod params;
pub mod random;

pub use optim::{AdamW, AdamWConfig, LrSchedule};
pub use params::{BoundParams, ParamId, ParamStore};
pub use ops::{argmax_axis, cosine_matrix, cosine_similarity};
pub use random::{gumbel_noise, normal_init};

/// Errors raised by tensor operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid axis {axis} for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

type BackwardFn = Box<dyn Fn(&[f64], &mut GradSink<'_>)>;

struct Node {
    shape: Vec<usize>,
    value: Rc<Vec<f64>>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Accumulator handed to backward closures.
pub(crate) struct GradSink<'a> {
    grads: &'a mut [Option<Vec<f64>>],
    nodes: &'a [Node],
}

impl GradSink<'_> {
    /// Gradient buffer of node `id`, zero-initialized on first access.
    /// `None` when the node does not require a gradient.
    pub(crate) fn slot(&mut self, id: usize) -> Option<&mut [f64]> {
        let node = &self.nodes[id];
        if !node.requires_grad {
            return None;
        }
        let len = node.value.len();
        Some(self.grads[id].get_or_insert_with(|| vec![0.0; len]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn leaf(&self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor<'_>> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::Invalid {
                op: "leaf",
                msg: format!("zero-sized dimension in {shape:?}"),
            });
        }
        if data.len() != numel(shape) {
            return Err(TensorError::ShapeMismatch {
                op: "leaf",
                lhs: vec![data.len()],
                rhs: shape.to_vec(),
            });
        }
        Ok(self.push_node(Node {
            shape: shape.to_vec(),
            value: Rc::new(data),
            requires_grad,
            backward: None,
        }))
    }

    /// Differentiable leaf.
    pub fn var(&self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor<'_>> {
        self.leaf(data, shape, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor<'_>> {
        self.leaf(data, shape, false)
    }

    fn push_node(&self, node: Node) -> Tensor<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Tensor {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records a derived value. The backward closure is dropped when no
    /// parent requires a gradient.
    pub(crate) fn push_op<F>(
        &self,
        shape: Vec<usize>,
        value: Rc<Vec<f64>>,
        parents: &[&Tensor<'_>],
        backward: F,
    ) -> Tensor<'_>
    where
        F: Fn(&[f64], &mut GradSink<'_>) + 'static,
    {
        debug_assert_eq!(value.len(), numel(&shape));
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        self.push_node(Node {
            shape,
            value,
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        })
    }

    /// Reverse pass from a scalar root. Gradients of shared subexpressions
    /// are summed.
    pub fn backward(&self, root: &Tensor<'_>) -> Result<Gradients> {
        assert!(
            std::ptr::eq(root.tape, self),
            "backward called with a tensor from another tape"
        );
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.len() != 1 {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: format!("root must be scalar, got shape {:?}", nodes[root.id].shape),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[root.id].requires_grad {
            grads[root.id] = Some(vec![1.0]);
        }
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some(bw) = &nodes[id].backward {
                let mut sink = GradSink {
                    grads: &mut grads[..id],
                    nodes: &nodes[..id],
                };
                bw(&g, &mut sink);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Result of a reverse pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `t`; `None` when `t` was not
    /// reached or does not require a gradient.
    pub fn get(&self, t: &Tensor<'_>) -> Option<&[f64]> {
        self.grads.get(t.id).and_then(|g| g.as_deref())
    }

    pub(crate) fn take(&mut self, t: &Tensor<'_>) -> Option<Vec<f64>> {
        self.grads.get_mut(t.id).and_then(Option::take)
    }
}

impl<'t> Tensor<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Shared view of the forward value.
    pub fn value(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.value().as_ref().clone()
    }

    /// Value of a single-element tensor.
    ///
    /// # Panics
    /// If the tensor holds more than one element.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a tensor with {} elements", v.len());
        v[0]
    }
}
