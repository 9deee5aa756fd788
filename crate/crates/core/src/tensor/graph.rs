use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

/// Vector-Jacobian product of one recorded operation.
///
/// `needs[i]` is false when input `i` does not require a gradient; the
/// implementation may return `None` for it.
pub trait Function<T: Real> {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Value<'a, T> {
    Owned(Tensor<T>),
    Borrowed(&'a Tensor<T>),
}

struct Node<'a, T: Real> {
    op: &'static str,
    value: Value<'a, T>,
    inputs: Vec<usize>,
    func: Option<Box<dyn Function<T> + 'a>>,
    requires_grad: bool,
}

/// Tape of forward values. Nodes are appended in evaluation order, so the
/// reverse sweep is a simple descending walk.
pub struct Graph<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: &'static str, value: Value<'a, T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, inputs: Vec::new(), func: None, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push("constant", Value::Owned(t), false)
    }

    /// A differentiable leaf owned by the graph.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push("leaf", Value::Owned(t), true)
    }

    /// A leaf borrowed from outside (parameters are bound this way).
    pub fn borrowed(&mut self, t: &'a Tensor<T>, requires_grad: bool) -> Var {
        self.push("leaf", Value::Borrowed(t), requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record an operation. The output must be finite.
    pub fn apply<F>(&mut self, op: &'static str, inputs: &[Var], value: Tensor<T>, f: F) -> Result<Var>
    where
        F: Function<T> + 'a,
    {
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
            inputs: inputs.iter().map(|v| v.0).collect(),
            func: if requires_grad { Some(Box::new(f)) } else { None },
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar. Only leaf gradients are retained.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(func) = &node.func else { continue };
            let Some(grad) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&j| self.value(Var(j))).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
            let out = func.backward(&inputs, self.value(Var(i)), &grad, &needs)?;
            for ((&j, g), need) in node.inputs.iter().zip(out).zip(needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                if g.shape() != self.value(Var(j)).shape() {
                    return Err(Error::shape(node.op, g.shape(), self.value(Var(j)).shape()));
                }
                if !g.all_finite() {
                    return Err(Error::NonFinite { op: node.op });
                }
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of leaves reached by a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
