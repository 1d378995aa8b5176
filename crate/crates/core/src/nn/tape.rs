//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] records one forward computation; nodes are appended in
//! topological order, so the backward sweep is a single reverse pass.
//! Each op pushes its output value plus a closure that maps the output
//! gradient to parent-gradient contributions. Leaves (inputs, parameters,
//! constants) carry no closure and terminate propagation.

use super::tensor::Tensor;

/// Handle to a value on a [`Tape`]. Plain index; cheap to copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub type BackwardFn = Box<dyn Fn(&Tensor, &mut Gradients)>;

struct Node {
    value: Tensor,
    backward: Option<BackwardFn>,
}

pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Tape {
    /// Tape that records gradients (training / gradient checks).
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Inference-only tape: ops skip closure construction and input capture.
    pub fn forward_only() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Inserts a leaf value. Gradients accumulate here but do not propagate
    /// further, which is exactly what parameters and inputs need.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, None)
    }

    pub(crate) fn push(&mut self, value: Tensor, backward: Option<BackwardFn>) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { value, backward });
        Var(id)
    }

    /// Pushes an op output; `make_backward` is only invoked when gradients
    /// are being recorded.
    pub(crate) fn push_op(
        &mut self,
        value: Tensor,
        make_backward: impl FnOnce() -> BackwardFn,
    ) -> Var {
        if self.grad_enabled {
            let back = make_backward();
            self.push(value, Some(back))
        } else {
            self.push(value, None)
        }
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reverse sweep from a scalar root. Returns the gradient of the root
    /// with respect to every node on the tape.
    ///
    /// Panics if the root is not a single-element tensor or gradients were
    /// not recorded.
    pub fn backward(&self, root: Var) -> Gradients {
        assert!(
            self.grad_enabled,
            "backward() on a forward-only tape; use Tape::new()"
        );
        assert_eq!(
            self.value(root).numel(),
            1,
            "backward root must be scalar, got shape {:?}",
            self.value(root).shape()
        );
        let mut grads = Gradients {
            grads: (0..self.nodes.len()).map(|_| None).collect(),
        };
        grads.accumulate(root, Tensor::ones(self.value(root).shape()));

        for id in (0..=root.0).rev() {
            let Some(grad) = grads.grads[id].take() else {
                continue;
            };
            if let Some(back) = &self.nodes[id].backward {
                back(&grad, &mut grads);
            }
            grads.grads[id] = Some(grad);
        }
        grads
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn accumulate(&mut self, var: Var, grad: Tensor) {
        match &mut self.grads[var.0] {
            Some(existing) => existing.add_in_place(&grad),
            slot @ None => *slot = Some(grad),
        }
    }

    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads[var.0].take()
    }
}
