//! Eager reverse-mode differentiation over the fixed kernel set.
//!
//! Every `record` computes the forward value immediately and keeps it on the
//! tape. [`Tape::backward`] then walks the nodes in reverse, releasing each
//! value right after the last backward step that reads it and each
//! intermediate gradient right after it has been propagated. Parameter
//! values are never released; they are handed back with their gradients. The tape counts
//! every byte it holds and records a [`TraceEvent`] at each change, which is
//! the ground truth the memory planner is checked against.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::ops::{self, ConvSpec};
use crate::tensor::{Element, Shape, Tensor};

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    /// Constant leaf (image, target). Never receives a gradient.
    Input,
    /// Trainable leaf.
    Param,
    /// Inputs `[x, w]` or `[x, w, b]`.
    Conv(ConvSpec),
    /// Inputs `[x, w]` or `[x, w, b]`.
    TConv(ConvSpec),
    Relu,
    Sigmoid,
    Add,
    /// Inputs `[pred, target]`; scalar output.
    Bce,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::Conv(_) => "conv",
            Op::TConv(_) => "tconv",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Add => "add",
            Op::Bce => "bce",
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Op::Input | Op::Param)
    }

    /// Input positions whose values the backward step reads, given which
    /// inputs need a gradient.
    pub fn saved_inputs(&self, needs_grad: &[bool]) -> Vec<usize> {
        match self {
            // x is read for dW, w is read for dx.
            Op::Conv(_) | Op::TConv(_) => {
                let mut saved = Vec::new();
                if needs_grad[1] {
                    saved.push(0);
                }
                if needs_grad[0] {
                    saved.push(1);
                }
                saved
            }
            Op::Bce if needs_grad[0] => vec![0, 1],
            _ => Vec::new(),
        }
    }

    /// Whether the backward step reads this node's own output.
    pub fn saves_output(&self, needs_grad: &[bool]) -> bool {
        matches!(self, Op::Relu | Op::Sigmoid) && needs_grad[0]
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Bytes and tensors held by the tape after one bookkeeping event.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub label: String,
    pub live_bytes: usize,
    pub live_tensors: usize,
}

#[derive(Debug)]
struct Node<T: Element> {
    op: Op,
    inputs: Vec<NodeId>,
    shape: Shape,
    value: Option<Tensor<T>>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
struct Ledger {
    bytes: usize,
    tensors: usize,
    trace: Vec<TraceEvent>,
}

impl Ledger {
    fn hold(&mut self, bytes: usize) {
        self.bytes += bytes;
        self.tensors += 1;
    }

    fn release(&mut self, bytes: usize) {
        self.bytes -= bytes;
        self.tensors -= 1;
    }

    fn mark(&mut self, label: String) {
        self.trace.push(TraceEvent {
            label,
            live_bytes: self.bytes,
            live_tensors: self.tensors,
        });
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Backward<T: Element> {
    /// Gradient of the loss for every `Param` node that reaches it.
    pub grads: BTreeMap<NodeId, Tensor<T>>,
    /// Values of all `Param` nodes, returned to the caller.
    pub params: BTreeMap<NodeId, Tensor<T>>,
    /// Full bookkeeping trace, forward and backward.
    pub trace: Vec<TraceEvent>,
}

impl<T: Element> Backward<T> {
    pub fn peak_bytes(&self) -> usize {
        self.trace.iter().map(|e| e.live_bytes).max().unwrap_or(0)
    }
}

#[derive(Debug, Default)]
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    ledger: Ledger,
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ledger: Ledger::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> Option<Op> {
        self.nodes.get(id).map(|n| n.op)
    }

    pub fn inputs(&self, id: NodeId) -> Option<&[NodeId]> {
        self.nodes.get(id).map(|n| n.inputs.as_slice())
    }

    pub fn shape(&self, id: NodeId) -> Option<Shape> {
        self.nodes.get(id).map(|n| n.shape)
    }

    /// Forward value of a node, while the tape still holds it.
    pub fn value(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes.get(id).and_then(|n| n.value.as_ref())
    }

    pub fn live_bytes(&self) -> usize {
        self.ledger.bytes
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.ledger.trace
    }

    /// Records a constant leaf. The tape takes ownership; no copy is made.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(Op::Input, value)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(Op::Param, value)
    }

    pub fn conv(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec) -> Result<NodeId> {
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.record(Op::Conv(spec), &inputs)
    }

    pub fn tconv(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec) -> Result<NodeId> {
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.record(Op::TConv(spec), &inputs)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Relu, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Op::Sigmoid, &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add, &[a, b])
    }

    pub fn bce(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.record(Op::Bce, &[pred, target])
    }

    /// Appends a non-leaf node, computing its value eagerly.
    pub fn record(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if op.is_leaf() {
            return Err(Error::Tape(format!(
                "{op} nodes carry a value; use Tape::input or Tape::param"
            )));
        }
        for &id in inputs {
            if id >= self.nodes.len() {
                return Err(Error::DanglingNode {
                    id,
                    len: self.nodes.len(),
                });
            }
        }
        let arity_ok = match op {
            Op::Conv(s) | Op::TConv(s) => inputs.len() == if s.has_bias { 3 } else { 2 },
            Op::Relu | Op::Sigmoid => inputs.len() == 1,
            Op::Add | Op::Bce => inputs.len() == 2,
            Op::Input | Op::Param => unreachable!(),
        };
        if !arity_ok {
            return Err(Error::Tape(format!(
                "{op} does not take {} inputs",
                inputs.len()
            )));
        }
        let value = self.eval(op, inputs)?;
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let id = self.nodes.len();
        self.ledger.hold(value.bytes());
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
            shape: value.shape(),
            value: Some(value),
            requires_grad,
        });
        self.ledger.mark(format!("fwd {id} {op}"));
        Ok(id)
    }

    fn push_leaf(&mut self, op: Op, value: Tensor<T>) -> NodeId {
        let id = self.nodes.len();
        self.ledger.hold(value.bytes());
        self.nodes.push(Node {
            op,
            inputs: Vec::new(),
            shape: value.shape(),
            value: Some(value),
            requires_grad: op == Op::Param,
        });
        self.ledger.mark(format!("fwd {id} {op}"));
        id
    }

    fn val(&self, id: NodeId) -> Result<&Tensor<T>> {
        self.nodes[id]
            .value
            .as_ref()
            .ok_or_else(|| Error::Tape(format!("value of node {id} was already released")))
    }

    fn eval(&self, op: Op, inputs: &[NodeId]) -> Result<Tensor<T>> {
        match op {
            Op::Conv(spec) | Op::TConv(spec) => {
                let x = self.val(inputs[0])?;
                let w = self.val(inputs[1])?;
                let b = match inputs.get(2) {
                    Some(&b) => Some(self.val(b)?.data()),
                    None => None,
                };
                if matches!(op, Op::Conv(_)) {
                    ops::conv2d_forward(x, w, b, &spec)
                } else {
                    ops::tconv2d_forward(x, w, b, &spec)
                }
            }
            Op::Relu => Ok(ops::relu_forward(self.val(inputs[0])?)),
            Op::Sigmoid => Ok(ops::sigmoid_forward(self.val(inputs[0])?)),
            Op::Add => ops::add_forward(self.val(inputs[0])?, self.val(inputs[1])?),
            Op::Bce => {
                let loss = ops::bce_forward(self.val(inputs[0])?, self.val(inputs[1])?)?;
                Ok(Tensor::scalar(T::from_f64(loss)))
            }
            Op::Input | Op::Param => unreachable!(),
        }
    }

    fn release_value(&mut self, id: NodeId) {
        if let Some(v) = self.nodes[id].value.take() {
            self.ledger.release(v.bytes());
        }
    }

    /// Runs the reverse sweep from `loss`, consuming the tape.
    pub fn backward(mut self, loss: NodeId) -> Result<Backward<T>> {
        let n = self.nodes.len();
        if loss >= n {
            return Err(Error::DanglingNode { id: loss, len: n });
        }
        if !self.nodes[loss].shape.is_scalar() {
            return Err(Error::NonScalarLoss(self.nodes[loss].shape.dims()));
        }

        // Nodes whose backward step will run: those that need a gradient and
        // lie on a path into the loss.
        let mut active = vec![false; n];
        active[loss] = self.nodes[loss].requires_grad;
        for i in (0..=loss).rev() {
            if !active[i] {
                continue;
            }
            for &j in &self.nodes[i].inputs {
                if self.nodes[j].requires_grad {
                    active[j] = true;
                }
            }
        }

        let mut last_use: Vec<Option<NodeId>> = vec![None; n];
        for u in 0..n {
            if !active[u] || self.nodes[u].op == Op::Param {
                continue;
            }
            let node = &self.nodes[u];
            let needs: Vec<bool> = node.inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
            let mut readers: Vec<NodeId> = node.op.saved_inputs(&needs).into_iter().map(|p| node.inputs[p]).collect();
            if node.op.saves_output(&needs) {
                readers.push(u);
            }
            for j in readers {
                if self.nodes[j].op != Op::Param {
                    last_use[j] = Some(last_use[j].map_or(u, |v| v.min(u)));
                }
            }
        }

        for id in 0..n {
            if last_use[id].is_none() && self.nodes[id].op != Op::Param {
                self.release_value(id);
            }
        }
        let mut grads: BTreeMap<NodeId, Tensor<T>> = BTreeMap::new();
        let mut result = BTreeMap::new();
        if active[loss] {
            let seed = Tensor::scalar(T::from_f64(1.0));
            self.ledger.hold(seed.bytes());
            grads.insert(loss, seed);
        }
        self.ledger.mark("bwd begin".into());

        for i in (0..=loss).rev() {
            if !active[i] {
                continue;
            }
            let g = grads
                .remove(&i)
                .ok_or_else(|| Error::Tape(format!("node {i} reached without a gradient")))?;
            let fresh = self.local_grads(i, &g)?;
            for (_, t) in &fresh {
                self.ledger.hold(t.bytes());
            }
            self.ledger.mark(format!("bwd {i} {} grads", self.nodes[i].op));
            for (j, t) in fresh {
                match grads.get_mut(&j) {
                    Some(acc) => {
                        acc.accumulate(&t)?;
                        self.ledger.release(t.bytes());
                    }
                    None => {
                        grads.insert(j, t);
                    }
                }
            }
            if self.nodes[i].op == Op::Param {
                result.insert(i, g);
            } else {
                self.ledger.release(g.bytes());
                drop(g);
            }
            for id in 0..n {
                if last_use[id] == Some(i) {
                    self.release_value(id);
                }
            }
            self.ledger.mark(format!("bwd {i} {} settle", self.nodes[i].op));
        }

        let params = self
            .nodes
            .iter_mut()
            .enumerate()
            .filter(|(_, node)| node.op == Op::Param)
            .filter_map(|(id, node)| node.value.take().map(|v| (id, v)))
            .collect();
        Ok(Backward {
            grads: result,
            params,
            trace: std::mem::take(&mut self.ledger.trace),
        })
    }

    /// Gradients flowing from node `i` into each of its inputs that needs one.
    fn local_grads(&self, i: NodeId, g: &Tensor<T>) -> Result<Vec<(NodeId, Tensor<T>)>> {
        let node = &self.nodes[i];
        let needs = |pos: usize| self.nodes[node.inputs[pos]].requires_grad;
        let mut out = Vec::new();
        match node.op {
            Op::Input | Op::Param => {}
            Op::Conv(spec) | Op::TConv(spec) => {
                let transposed = matches!(node.op, Op::TConv(_));
                let x_shape = self.nodes[node.inputs[0]].shape;
                if needs(0) {
                    let w = self.val(node.inputs[1])?;
                    let gx = if transposed {
                        ops::conv::tconv2d_backward_input(g, x_shape, w, &spec)?
                    } else {
                        ops::conv::conv2d_backward_input(g, x_shape, w, &spec)?
                    };
                    out.push((node.inputs[0], gx));
                }
                if needs(1) {
                    let x = self.val(node.inputs[0])?;
                    let (gw, gb) = if transposed {
                        ops::conv::tconv2d_backward_params(g, x, &spec)?
                    } else {
                        ops::conv::conv2d_backward_params(g, x, &spec)?
                    };
                    out.push((node.inputs[1], gw));
                    if node.inputs.len() == 3 && needs(2) {
                        out.push((node.inputs[2], Tensor::from_vec(spec.bias_shape(), gb)?));
                    }
                } else if node.inputs.len() == 3 && needs(2) {
                    let gb = ops::conv::channel_sums(g);
                    out.push((node.inputs[2], Tensor::from_vec(spec.bias_shape(), gb)?));
                }
            }
            Op::Relu => {
                if needs(0) {
                    out.push((node.inputs[0], ops::relu_backward(self.val(i)?, g)?));
                }
            }
            Op::Sigmoid => {
                if needs(0) {
                    out.push((node.inputs[0], ops::sigmoid_backward(self.val(i)?, g)?));
                }
            }
            Op::Add => {
                let (ga, gb) = ops::add_backward(g);
                if needs(0) {
                    out.push((node.inputs[0], ga));
                }
                if needs(1) {
                    out.push((node.inputs[1], gb));
                }
            }
            Op::Bce => {
                if needs(0) {
                    let pred = self.val(node.inputs[0])?;
                    let target = self.val(node.inputs[1])?;
                    let upstream = g.data()[0].to_f64();
                    out.push((node.inputs[0], ops::bce_backward(pred, target, upstream)?));
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn first_node_is_zero() {
        let mut tape = Tape::<f32>::new();
        assert_eq!(tape.input(Tensor::scalar(1.0)), 0);
        assert_eq!(tape.len(), 1);
    }

    #[test]
    fn dangling_input_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::scalar(1.0));
        assert!(matches!(tape.relu(x + 5), Err(Error::DanglingNode { id: 5, len: 1 })));
    }

    #[test]
    fn leaf_ops_need_values() {
        let mut tape = Tape::<f32>::new();
        assert!(tape.record(Op::Param, &[]).is_err());
    }

    #[test]
    fn sigmoid_gradient_is_analytic() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(scalar(0.7));
        let y = tape.sigmoid(x).unwrap();
        let out = tape.backward(y).unwrap();
        let s = ops::sigmoid(0.7);
        assert!((out.grads[&x].data()[0] - s * (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn self_addition_doubles_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(scalar(0.3));
        let y = tape.add(x, x).unwrap();
        let z = tape.sigmoid(y).unwrap();
        let out = tape.backward(z).unwrap();
        let s = ops::sigmoid(0.6);
        assert!((out.grads[&x].data()[0] - 2.0 * s * (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::zeros(Shape::new(1, 1, 2, 2).unwrap()));
        let y = tape.relu(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::NonScalarLoss([1, 1, 2, 2]))));
    }

    #[test]
    fn ledger_ends_holding_parameters_and_gradients() {
        let mut tape = Tape::<f32>::new();
        let shape = Shape::new(1, 1, 4, 4).unwrap();
        let x = tape.input(Tensor::full(shape, 0.5));
        let w = tape.param(Tensor::full(Shape::new(1, 1, 2, 2).unwrap(), 0.1));
        let b = tape.param(Tensor::zeros(Shape::new(1, 1, 1, 1).unwrap()));
        let c = tape.conv(x, w, Some(b), ConvSpec::conv(2, 2, 1, 1)).unwrap();
        let up = tape.tconv(c, w, None, ConvSpec::tconv(2, 2, 1, 1).without_bias()).unwrap();
        let p = tape.sigmoid(up).unwrap();
        let t = tape.input(Tensor::full(shape, 1.0));
        let loss = tape.bce(p, t).unwrap();
        let out = tape.backward(loss).unwrap();
        let last = out.trace.last().unwrap();
        let grad_bytes: usize = out.grads.values().map(|g| g.bytes()).sum();
        let param_bytes: usize = out.params.values().map(|p| p.bytes()).sum();
        assert_eq!(last.live_bytes, grad_bytes + param_bytes);
        assert_eq!(last.live_tensors, 4);
        assert_eq!(out.grads.len(), 2);
        assert_eq!(out.params[&w].data(), &[0.1; 4]);
    }
}
