//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every op applied to tracked [`Var`]s together with a
//! closure mapping the output gradient to input gradients. An inference tape
//! records nothing, so intermediates are freed as soon as their `Var` drops.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Maps the output gradient to one optional gradient per input. The flag
/// slice says which inputs actually need one.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
}

/// Handle to a value living on a tape.
#[derive(Clone, Debug)]
pub struct Var<T> {
    node: Option<usize>,
    value: Rc<Tensor<T>>,
}

impl<T: Scalar> Var<T> {
    #[inline]
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub(crate) fn rc(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        (*self.value).clone()
    }
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    /// A tape that records ops for a later [`Tape::backward`].
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A tape that records nothing.
    pub fn inference() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf (a parameter).
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        let node = self.recording.then(|| {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                parents: Vec::new(),
                backward: None,
            });
            nodes.len() - 1
        });
        Var {
            node,
            value: Rc::new(value),
        }
    }

    /// Untracked value (inputs, targets).
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var {
            node: None,
            value: Rc::new(value),
        }
    }

    pub(crate) fn record(
        &self,
        op: &'static str,
        value: Tensor<T>,
        inputs: &[&Var<T>],
        backward: BackwardFn<T>,
    ) -> Result<Var<T>> {
        if !value.all_finite() {
            return Err(Error::NonFinite(op));
        }
        let tracked = self.recording && inputs.iter().any(|v| v.node.is_some());
        let node = tracked.then(|| {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                parents: inputs.iter().map(|v| v.node).collect(),
                backward: Some(backward),
            });
            nodes.len() - 1
        });
        Ok(Var {
            node,
            value: Rc::new(value),
        })
    }

    /// Gradients of a single-element `root` with respect to every tracked
    /// value recorded before it.
    pub fn backward(&self, root: &Var<T>) -> Result<Gradients<T>> {
        if root.value.len() != 1 {
            return Err(Error::dim(
                "backward",
                format!("root must hold one value, has shape {:?}", root.shape()),
            ));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let Some(root_id) = root.node else {
            return Ok(Gradients { grads });
        };
        grads[root_id] = Some(Tensor::full(root.shape(), T::one()));

        for id in (0..=root_id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let need: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
            let input_grads = backward(&g, &need);
            for (parent, ig) in node.parents.iter().zip(input_grads) {
                if let (Some(p), Some(ig)) = (parent, ig) {
                    match &mut grads[*p] {
                        Some(acc) => acc.add_assign(&ig)?,
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Result of [`Tape::backward`]; only leaves keep their gradient.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        var.node.and_then(|id| self.grads[id].as_ref())
    }

    /// Gradient of `var`, or zeros if nothing flowed into it.
    pub fn get_or_zeros(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}
