//! Operation tape for reverse-mode differentiation.
//!
//! Every op applied through a [`Tape`] is evaluated eagerly and appended to
//! the tape with handles to its inputs. [`Tape::backward`] then walks the tape
//! from the loss towards the leaves, visiting each recorded op once.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::{forward_op, vjp, Op};
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Option<Op>,
    inputs: Vec<usize>,
    trainable: bool,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every trainable leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: HashMap<NodeId, Tensor>,
    ops_visited: usize,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.remove(&id)
    }

    /// Number of recorded ops whose vector-Jacobian product was evaluated.
    pub fn ops_visited(&self) -> usize {
        self.ops_visited
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn resolve(&self, id: NodeId) -> Result<usize> {
        if id.tape != self.id || id.index >= self.nodes.len() {
            return Err(Error::MissingProvenance(format!("{id:?}")));
        }
        Ok(id.index)
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Node {
            value,
            op: None,
            inputs: Vec::new(),
            trainable: false,
            requires_grad: false,
        })
    }

    /// Records a trainable leaf; `backward` returns a gradient for it.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Node {
            value,
            op: None,
            inputs: Vec::new(),
            trainable: true,
            requires_grad: true,
        })
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        Ok(&self.nodes[self.resolve(id)?].value)
    }

    /// Evaluates `op` on recorded inputs and records the result.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let idx = inputs
            .iter()
            .map(|&i| self.resolve(i))
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<&Tensor> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let value = forward_op(&op, &values)?;
        let requires_grad = idx.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(Node {
            value,
            op: Some(op),
            inputs: idx,
            trainable: false,
            requires_grad,
        }))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::Scale(c), &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu, &[x])
    }

    pub fn softmax(&mut self, x: NodeId, key_mask: Option<Vec<bool>>) -> Result<NodeId> {
        self.apply(Op::SoftmaxLastDim { key_mask }, &[x])
    }

    pub fn layernorm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        self.apply(Op::LayerNorm { eps: super::LAYERNORM_EPS }, &[x, gamma, beta])
    }

    pub fn embedding(&mut self, table: NodeId, ids: Vec<usize>) -> Result<NodeId> {
        self.apply(Op::EmbeddingLookup { ids }, &[table])
    }

    pub fn dropout(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        self.apply(Op::DropoutMaskApply { mask }, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Mean, &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Sum, &[x])
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Square, &[x])
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Sqrt, &[x])
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::TransposeLast2, &[x])
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        self.apply(Op::Concat { axis }, xs)
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        self.apply(Op::Slice { axis, start, end }, &[x])
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Trainable leaves that do not influence the loss get a zero gradient.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let root = self.resolve(loss)?;
        if !self.nodes[root].value.is_scalar() {
            return Err(Error::contract(
                "backward",
                format!("loss has shape {:?}, expected a scalar", self.nodes[root].value.shape()),
            ));
        }
        let mut acc: Vec<Option<Tensor>> = vec![None; root + 1];
        acc[root] = Some(Tensor::full(self.nodes[root].value.shape(), 1.0));
        let mut ops_visited = 0;
        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            let Some(op) = &node.op else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = acc[i].take() else { continue };
            ops_visited += 1;
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&j| self.nodes[j].requires_grad)
                .collect();
            let grads = vjp(op, &inputs, &node.value, &upstream, &needs)?;
            for (&j, g) in node.inputs.iter().zip(grads) {
                let Some(g) = g else { continue };
                if !self.nodes[j].requires_grad {
                    continue;
                }
                match &mut acc[j] {
                    Some(prev) => prev.add_assign(&g)?,
                    slot => *slot = Some(g),
                }
            }
        }
        let mut grads = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.trainable {
                continue;
            }
            let g = acc
                .get_mut(i)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
            grads.insert(
                NodeId {
                    tape: self.id,
                    index: i,
                },
                g,
            );
        }
        Ok(Gradients { grads, ops_visited })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three_has_gradient_six() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.square(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sum_relu_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![-1.0, 2.0]));
        let r = tape.relu(x).unwrap();
        let s = tape.sum(r).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.square(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Contract { .. })));
    }

    #[test]
    fn foreign_node_is_missing_provenance() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.param(Tensor::scalar(1.0));
        let _ = b.param(Tensor::scalar(1.0));
        assert!(matches!(b.backward(x), Err(Error::MissingProvenance(_))));
        assert!(matches!(b.square(x), Err(Error::MissingProvenance(_))));
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn backward_visits_each_op_once_and_is_repeatable() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap());
        let x = tape.constant(Tensor::matrix(1, 2, vec![1.0, 3.0]).unwrap());
        let mut h = tape.matmul(x, w).unwrap();
        for _ in 0..10 {
            h = tape.relu(h).unwrap();
            h = tape.matmul(h, w).unwrap();
        }
        let loss = tape.sum(h).unwrap();
        let ops = tape.len() - 2;
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        assert_eq!(g1.ops_visited(), ops);
        assert_eq!(g1.get(w), g2.get(w));
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(Tensor::vector(vec![1.0, 1.0]));
        let y = tape.square(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(unused).unwrap().data(), &[0.0, 0.0]);
    }
}
