//! Define-by-run reverse-mode differentiation.
//!
//! Every operation on a [`Var`] appends one node to its [`Tape`]. Node ids
//! increase monotonically, so the id order is already a topological order
//! and [`Tape::backward`] is a single reverse sweep.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Inputs handed to a node's backward rule.
pub struct BackwardCtx<'a, T> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a Tensor<T>,
    /// Forward values of the node's inputs, in the order they were given.
    pub inputs: Vec<&'a Tensor<T>>,
    /// Forward value of the node itself.
    pub output: &'a Tensor<T>,
}

/// Maps an output gradient to one optional gradient per input.
pub type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Trainable parameter stored outside any tape.
///
/// Bind it to a tape with [`Tape::param`]; after [`Tape::backward`] collect
/// the gradient with [`Tape::accumulate_param_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Operation record for one forward pass.
///
/// A tape is confined to one thread; build a fresh one per forward pass.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    bound: RefCell<HashMap<usize, usize>>,
}

/// Handle to a node on a [`Tape`].
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: true,
            grad: None,
        })
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
            grad: None,
        })
    }

    /// Binds `param` as a leaf. Binding the same parameter twice returns the
    /// same node.
    pub fn param(&self, param: &Param<T>) -> Var<'_, T> {
        let key = param as *const Param<T> as usize;
        if let Some(&id) = self.bound.borrow().get(&key) {
            return Var { tape: self, id };
        }
        let v = self.leaf(param.value.clone());
        self.bound.borrow_mut().insert(key, v.id);
        v
    }

    /// Adds the gradient of a bound parameter into `param.grad`. Returns
    /// false if the parameter was never bound or received no gradient.
    pub fn accumulate_param_grad(&self, param: &mut Param<T>) -> Result<bool> {
        let key = param as *const Param<T> as usize;
        let Some(&id) = self.bound.borrow().get(&key) else {
            return Ok(false);
        };
        let nodes = self.nodes.borrow();
        match &nodes[id].grad {
            Some(g) => {
                param.grad.add_assign(g)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Records an operation with a caller-supplied backward rule.
    ///
    /// `backward` must return one entry per input; `None` means no gradient
    /// flows to that input.
    pub fn custom_op<F>(&self, inputs: &[Var<'_, T>], value: Tensor<T>, backward: F) -> Var<'_, T>
    where
        F: Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let parents: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        self.push(Node {
            value,
            parents,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            requires_grad,
            grad: None,
        })
    }

    pub(crate) fn value_of(&self, id: usize) -> std::cell::Ref<'_, Tensor<T>> {
        std::cell::Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Back-propagates from the scalar `loss`.
    ///
    /// Gradients of leaves are added to whatever an earlier call left there;
    /// use [`Tape::zero_grad`] to reset.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let leaf_grads = {
            let nodes = self.nodes.borrow();
            let root = &nodes[loss.id];
            if root.value.numel() != 1 {
                return Err(TensorError::invalid(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    root.value.shape()
                )));
            }
            let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.id).map(|_| None).collect();
            grads[loss.id] = Some(Tensor::ones(root.value.shape()));
            let mut leaf_grads = Vec::new();
            for id in (0..=loss.id).rev() {
                let Some(g) = grads[id].take() else { continue };
                let node = &nodes[id];
                match &node.backward {
                    None => {
                        if node.requires_grad {
                            leaf_grads.push((id, g));
                        }
                    }
                    Some(bw) => {
                        let ctx = BackwardCtx {
                            grad: &g,
                            inputs: node.parents.iter().map(|&p| &nodes[p].value).collect(),
                            output: &node.value,
                        };
                        let parent_grads = bw(&ctx);
                        debug_assert_eq!(parent_grads.len(), node.parents.len());
                        for (&p, pg) in node.parents.iter().zip(parent_grads) {
                            let Some(pg) = pg else { continue };
                            if !nodes[p].requires_grad {
                                continue;
                            }
                            if pg.shape() != nodes[p].value.shape() {
                                return Err(TensorError::shape(
                                    "backward",
                                    pg.shape(),
                                    nodes[p].value.shape(),
                                ));
                            }
                            match &mut grads[p] {
                                Some(acc) => acc.add_assign(&pg)?,
                                slot => *slot = Some(pg),
                            }
                        }
                    }
                }
            }
            leaf_grads
        };
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            match &mut nodes[id].grad {
                Some(acc) => acc.add_assign(&g)?,
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value_of(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_of(self.id).shape().to_vec()
    }

    pub fn item(&self) -> Result<T> {
        self.tape.value_of(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.nodes.borrow()[self.id].grad.clone()
    }

    /// Records a unary op: `forward` maps the input value, `backward` maps
    /// (grad, input, output) to the input gradient.
    pub(crate) fn unary<B>(
        self,
        forward: impl FnOnce(&Tensor<T>) -> Result<Tensor<T>>,
        backward: B,
    ) -> Result<Var<'t, T>>
    where
        B: Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> Tensor<T> + 'static,
    {
        let value = forward(&self.tape.value_of(self.id))?;
        Ok(self.tape.custom_op(&[self], value, move |ctx| {
            vec![Some(backward(ctx.grad, ctx.inputs[0], ctx.output))]
        }))
    }

    pub(crate) fn check_same_tape(&self, other: &Var<'_, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(TensorError::invalid("operands live on different tapes"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let loss = x.sum().unwrap();
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 2.0, 2.0]);
        tape.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let loss = x.mul(c).unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[3.0, 4.0]);
        assert!(c.grad().is_none());
    }

    #[test]
    fn param_binding_is_shared() {
        let tape = Tape::<f64>::new();
        let mut p = Param::new("w", Tensor::vector(vec![2.0]));
        let a = tape.param(&p);
        let b = tape.param(&p);
        assert_eq!(a.id(), b.id());
        let loss = a.mul(b).unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.accumulate_param_grad(&mut p).unwrap());
        assert_eq!(p.grad.data(), &[4.0]);
    }
}
