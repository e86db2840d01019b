//! Reverse-mode tape over dynamic-rank f64 arrays.
//!
//! A `Tape` owns the forward graph of one computation; each op records its
//! parents and enough context to replay its local gradient. Nodes are
//! appended in topological order, so `backward` is a single reverse sweep.
//! Everything runs in f64 on a single thread, which keeps finite-difference
//! checks tight and reruns bit-reproducible.
//!
//! Layout conventions: token matrices are `(rows, cols)`, feature maps are
//! `(channels, height, width)`, convolution weights are
//! `(c_out, c_in, kh, kw)`, scalars are single-element rank-1 arrays.

mod backward;
mod forward;
pub(crate) mod kernels;
mod op;

pub use op::Op;

use crate::params::{GradStore, ParamId, ParamSet};
use ndarray::ArrayD;

pub type Arr = ArrayD<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node {
    pub value: Arr,
    pub op: Op,
    pub requires_grad: bool,
}

pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    training: bool,
}

impl Tape {
    /// Tape that tracks gradients for parameters and grad-requested inputs.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            training: true,
        }
    }

    /// Tape for inference: parameters enter as plain constants.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            training: false,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Arr {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar payload of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = &self.nodes[v.0].value;
        assert_eq!(value.len(), 1, "scalar() on non-scalar node");
        *value.iter().next().unwrap()
    }

    pub fn constant(&mut self, value: Arr) -> Var {
        self.push(value, Op::Leaf { param: None }, false)
    }

    /// Leaf whose gradient is retained after `backward` (used by tests and
    /// by losses taken w.r.t. raw inputs such as embeddings).
    pub fn input(&mut self, value: Arr) -> Var {
        self.push(value, Op::Leaf { param: None }, true)
    }

    /// Leaf bound to a parameter. On an inference tape this is an untracked
    /// constant, so no gradient can ever reach the parameter store.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let value = params.value(id).clone();
        if self.training {
            self.push(value, Op::Leaf { param: Some(id) }, true)
        } else {
            self.push(value, Op::Leaf { param: None }, false)
        }
    }

    pub(crate) fn push(&mut self, value: Arr, op: Op, leaf_grad: bool) -> Var {
        let requires_grad = leaf_grad || op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar loss. Returns gradients for parameter
    /// leaves and grad-requested inputs; interior gradients are dropped as
    /// soon as their consumers have been processed.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.nodes[loss.0].value.len(),
            1,
            "backward target must be scalar"
        );
        let mut grads: Vec<Option<Arr>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Arr::ones(self.nodes[loss.0].value.shape()));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let keep = matches!(self.nodes[idx].op, Op::Leaf { .. });
            backward::propagate(self, idx, &grad, &mut grads);
            if keep {
                grads[idx] = Some(grad);
            }
        }
        let mut param_grads = GradStore::default();
        let mut leaf_grads = vec![None; self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param } = &node.op {
                if let Some(grad) = grads[idx].take() {
                    match param {
                        Some(id) => param_grads.accumulate(*id, grad),
                        None => leaf_grads[idx] = Some(grad),
                    }
                }
            }
        }
        Gradients {
            leaf_grads,
            param_grads,
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Gradients {
    leaf_grads: Vec<Option<Arr>>,
    param_grads: GradStore,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a grad-requested input leaf.
    pub fn input(&self, v: Var) -> Option<&Arr> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn params(&self) -> &GradStore {
        &self.param_grads
    }

    pub fn into_params(self) -> GradStore {
        self.param_grads
    }
}

pub(crate) fn accumulate(grads: &mut [Option<Arr>], idx: usize, contribution: Arr) {
    match &mut grads[idx] {
        Some(existing) => *existing += &contribution,
        slot @ None => *slot = Some(contribution),
    }
}
