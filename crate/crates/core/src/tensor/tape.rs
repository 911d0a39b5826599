use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
///
/// `backward` receives the forward inputs and output plus the adjoint of the
/// output, and returns one adjoint per input. Inputs whose `needs` flag is
/// false may get `None`.
pub trait BackwardOp<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Real> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    op: Option<Box<dyn BackwardOp<T>>>,
    name: &'static str,
    needs_grad: bool,
}

/// Records every operation of one forward pass so it can be replayed in
/// reverse. Nodes are appended in evaluation order, so the node list is
/// already topologically sorted.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: false,
        }
    }

    /// With the check on, any op producing a NaN or infinity fails with
    /// [`Error::NonFinite`] naming the op.
    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
            name: "leaf",
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].name
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records `value = op(inputs)`.
    pub fn push(
        &mut self,
        value: Tensor<T>,
        inputs: &[Var],
        op: Box<dyn BackwardOp<T>>,
    ) -> Result<Var> {
        let name = op.name();
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            op: needs_grad.then_some(op),
            name,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from the scalar `root`. Every node is visited at most
    /// once, in reverse recording order.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_value = &self.nodes[root.0].value;
        if root_value.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![T::one()]);

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            let Some(op) = node.op.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> =
                node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].needs_grad)
                .collect();
            let adjoints = op.backward(&inputs, &node.value, &g, &needs);
            debug_assert_eq!(adjoints.len(), node.inputs.len(), "{}", op.name());
            for ((input, adj), need) in node.inputs.iter().zip(adjoints).zip(&needs) {
                let (Some(adj), true) = (adj, *need) else {
                    continue;
                };
                debug_assert_eq!(adj.len(), self.nodes[input.0].value.numel(), "{}", op.name());
                match &mut grads[input.0] {
                    slot @ None => *slot = Some(adj),
                    Some(acc) => acc.iter_mut().zip(&adj).for_each(|(a, b)| *a += *b),
                }
            }
        }
        // Adjoints of interior nodes were consumed above; what is left
        // belongs to leaves.
        Ok(Gradients { grads })
    }
}

/// Leaf adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Adjoint of `v`, or `None` if `v` does not influence the root.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Adjoint of `v`, zeros when `v` does not influence the root.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<T> {
        self.get(v).map_or_else(|| vec![T::zero(); len], <[T]>::to_vec)
    }
}
