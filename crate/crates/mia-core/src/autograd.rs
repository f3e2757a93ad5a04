//! Reverse-mode differentiation over a recorded graph (define-by-run: the
//! tape is rebuilt for every training step). The primitive vocabulary is
//! fixed and sized exactly to what the attention block and the backbones
//! need; every adjoint is hand-written and finite-difference verified.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{self, Tensor};

/// Handle to a node in one specific [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add { a: NodeId, b: NodeId },
    BroadcastMul { a: NodeId, b: NodeId },
    /// b is read transposed when `transpose_b` (the linear-layer convention
    /// y = x * W^T with W stored as (out, in)).
    Matmul { a: NodeId, b: NodeId, transpose_b: bool },
    Conv2d { x: NodeId, kernel: NodeId, bias: NodeId, padding: usize },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    ReduceMean { x: NodeId, axes: Vec<usize> },
    Reshape { x: NodeId },
    MaxPool { x: NodeId },
    SoftmaxCe { logits: NodeId, labels: Vec<usize> },
    DiceLoss { pred: NodeId, target: NodeId, epsilon: f64 },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only tape of recorded operations, topologically ordered by id.
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
}

/// Per-parameter gradients returned by [`Graph::backward`], in parameter
/// registration order. Unreachable parameters get zero tensors.
pub struct Gradients {
    entries: Vec<(NodeId, Tensor)>,
}

impl Gradients {
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.entries.iter().find(|(pid, _)| *pid == id).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.entries.iter().map(|(id, g)| (*id, g))
    }

    /// Gradients in registration order, dropping the ids.
    pub fn into_tensors(self) -> Vec<Tensor> {
        self.entries.into_iter().map(|(_, g)| g).collect()
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph { nodes: Vec::new(), params: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Trainable leaf; backward reports a gradient for it.
    pub fn parameter(&mut self, value: Tensor) -> NodeId {
        let id = self.push(Op::Leaf, value);
        self.params.push(id);
        id
    }

    pub fn parameter_ids(&self) -> &[NodeId] {
        &self.params
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::broadcast_add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add { a, b }, v))
    }

    /// Elementwise product with broadcasting.
    pub fn broadcast_mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::broadcast_mul(self.value(a), self.value(b))?;
        Ok(self.push(Op::BroadcastMul { a, b }, v))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId, transpose_b: bool) -> Result<NodeId> {
        let v = ops::matmul(self.value(a), self.value(b), false, transpose_b)?;
        Ok(self.push(Op::Matmul { a, b, transpose_b }, v))
    }

    /// Stride-1 convolution with zero padding on all sides.
    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, bias: NodeId, padding: usize) -> Result<NodeId> {
        let v = ops::conv2d_forward(self.value(x), self.value(kernel), self.value(bias), padding)?;
        Ok(self.push(Op::Conv2d { x, kernel, bias, padding }, v))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        Ok(self.push(Op::Relu { x }, v))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(ops::sigmoid_scalar);
        Ok(self.push(Op::Sigmoid { x }, v))
    }

    /// Mean over the given axes; reduced dims are removed.
    pub fn reduce_mean(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let v = tensor::reduce_mean(self.value(x), axes)?;
        Ok(self.push(Op::ReduceMean { x, axes: axes.to_vec() }, v))
    }

    pub fn reshape(&mut self, x: NodeId, dims: &[usize]) -> Result<NodeId> {
        let v = self.value(x).reshaped(dims)?;
        Ok(self.push(Op::Reshape { x }, v))
    }

    /// 2x2 max pooling, stride 2.
    pub fn max_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let v = ops::max_pool_forward(self.value(x))?;
        Ok(self.push(Op::MaxPool { x }, v))
    }

    /// Mean over the batch of -log softmax(logits)[label], max-stabilized.
    pub fn softmax_ce(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "softmax_ce",
                detail: format!("expected (N,K) logits, got {}", lv.shape()),
            });
        }
        let (n, k) = (lv.dims()[0], lv.dims()[1]);
        if labels.len() != n {
            return Err(Error::LengthMismatch { left: n, right: labels.len() });
        }
        let mut total = 0.0;
        for (row, &label) in labels.iter().enumerate() {
            if label >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
            let logits_row = &lv.data()[row * k..(row + 1) * k];
            let max = logits_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_z = logits_row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            total += -(logits_row[label] - max - log_z);
        }
        let v = Tensor::scalar(total / n as f64);
        Ok(self.push(Op::SoftmaxCe { logits, labels: labels.to_vec() }, v))
    }

    /// Soft Dice loss over the whole batch:
    /// 1 - (2*sum(pred*target) + eps) / (sum(pred) + sum(target) + eps).
    pub fn dice_loss(&mut self, pred: NodeId, target: NodeId, epsilon: f64) -> Result<NodeId> {
        let p = self.value(pred);
        let t = self.value(target);
        if p.dims() != t.dims() {
            return Err(Error::ShapeMismatch {
                op: "dice_loss",
                detail: format!("pred {} vs target {}", p.shape(), t.shape()),
            });
        }
        let inter: f64 = p.data().iter().zip(t.data()).map(|(a, b)| a * b).sum();
        let denom = p.sum() + t.sum() + epsilon;
        let v = Tensor::scalar(1.0 - (2.0 * inter + epsilon) / denom);
        Ok(self.push(Op::DiceLoss { pred, target, epsilon }, v))
    }

    /// Mean over every axis, yielding a rank-0 scalar.
    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let axes: Vec<usize> = (0..self.value(x).rank()).collect();
        self.reduce_mean(x, &axes)
    }

    /// Sum of all elements, expressed as mean * element count.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let count = self.value(x).len() as f64;
        let mean = self.mean_all(x)?;
        let scale = self.constant(Tensor::scalar(count));
        self.broadcast_mul(mean, scale)
    }

    /// Reverse topological accumulation of d(loss)/d(parameter) for every
    /// registered parameter. The loss node must hold a single element.
    /// Calling this twice yields identical results; no state accumulates.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::NonScalarLoss { elements: loss_value.len() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(loss_value.shape().clone(), vec![1.0]).expect("unit seed"));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {
                    grads[id] = Some(g); // keep for parameter collection
                    continue;
                }
                Op::Add { a, b } => {
                    let ga = tensor::reduce_sum_to(&g, self.value(*a).dims());
                    let gb = tensor::reduce_sum_to(&g, self.value(*b).dims());
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::BroadcastMul { a, b } => {
                    let full_a = tensor::broadcast_mul(&g, self.value(*b)).expect("forward validated");
                    let full_b = tensor::broadcast_mul(&g, self.value(*a)).expect("forward validated");
                    accumulate(&mut grads, *a, tensor::reduce_sum_to(&full_a, self.value(*a).dims()));
                    accumulate(&mut grads, *b, tensor::reduce_sum_to(&full_b, self.value(*b).dims()));
                }
                Op::Matmul { a, b, transpose_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if *transpose_b {
                        // y = a b^T: da = g b ; db = g^T a
                        accumulate(&mut grads, *a, ops::matmul(&g, bv, false, false).expect("shapes agree"));
                        accumulate(&mut grads, *b, ops::matmul(&g, av, true, false).expect("shapes agree"));
                    } else {
                        // y = a b: da = g b^T ; db = a^T g
                        accumulate(&mut grads, *a, ops::matmul(&g, bv, false, true).expect("shapes agree"));
                        accumulate(&mut grads, *b, ops::matmul(av, &g, true, false).expect("shapes agree"));
                    }
                }
                Op::Conv2d { x, kernel, bias, padding } => {
                    let (dx, dk, db) =
                        ops::conv2d_backward(self.value(*x), self.value(*kernel), &g, *padding);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *kernel, dk);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().clone(), data).expect("same shape"));
                }
                Op::Sigmoid { x } => {
                    let yv = &self.nodes[id].value;
                    let data = g
                        .data()
                        .iter()
                        .zip(yv.data())
                        .map(|(&gv, &s)| gv * s * (1.0 - s))
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(yv.shape().clone(), data).expect("same shape"));
                }
                Op::ReduceMean { x, axes } => {
                    let dx = tensor::reduce_mean_backward(&g, self.value(*x).dims(), axes);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Reshape { x } => {
                    let dx = g.reshaped(self.value(*x).dims()).expect("element count preserved");
                    accumulate(&mut grads, *x, dx);
                }
                Op::MaxPool { x } => {
                    accumulate(&mut grads, *x, ops::max_pool_backward(self.value(*x), &g));
                }
                Op::SoftmaxCe { logits, labels } => {
                    let lv = self.value(*logits);
                    let (n, k) = (lv.dims()[0], lv.dims()[1]);
                    let upstream = g.data()[0];
                    let mut data = vec![0.0; n * k];
                    for (row, &label) in labels.iter().enumerate() {
                        let logits_row = &lv.data()[row * k..(row + 1) * k];
                        let max = logits_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = logits_row.iter().map(|&v| (v - max).exp()).sum();
                        for j in 0..k {
                            let softmax = (logits_row[j] - max).exp() / z;
                            let indicator = if j == label { 1.0 } else { 0.0 };
                            data[row * k + j] = upstream * (softmax - indicator) / n as f64;
                        }
                    }
                    accumulate(&mut grads, *logits, Tensor::from_dims(&[n, k], data).expect("logit shape"));
                }
                Op::DiceLoss { pred, target, epsilon } => {
                    let p = self.value(*pred);
                    let t = self.value(*target);
                    let upstream = g.data()[0];
                    let numer = 2.0 * p.data().iter().zip(t.data()).map(|(a, b)| a * b).sum::<f64>() + epsilon;
                    let denom = p.sum() + t.sum() + epsilon;
                    let dp: Vec<f64> = t
                        .data()
                        .iter()
                        .map(|&tv| upstream * (numer - 2.0 * tv * denom) / (denom * denom))
                        .collect();
                    let dt: Vec<f64> = p
                        .data()
                        .iter()
                        .map(|&pv| upstream * (numer - 2.0 * pv * denom) / (denom * denom))
                        .collect();
                    accumulate(&mut grads, *pred, Tensor::new(p.shape().clone(), dp).expect("same shape"));
                    accumulate(&mut grads, *target, Tensor::new(t.shape().clone(), dt).expect("same shape"));
                }
            }
        }

        let entries = self
            .params
            .iter()
            .map(|&pid| {
                let g = grads[pid.0].take().unwrap_or_else(|| Tensor::zeros_like(self.value(pid)));
                (pid, g)
            })
            .collect();
        Ok(Gradients { entries })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (slot, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *slot += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Outcome of one finite-difference comparison for a named parameter.
#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
}

/// Report of analytic-vs-central-difference comparisons.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub step: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err <= self.tol)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

/// Compare analytic gradients against central finite differences for every
/// element of every named parameter. `build` must produce a scalar loss from
/// the parameter nodes it is handed; it is re-run for each perturbation.
/// Relative errors use denominators floored at 1e-8, so a parameter the loss
/// ignores (analytic 0, numeric 0) checks out at error 0.
pub fn grad_check<F>(params: &[(&str, Tensor)], step: f64, tol: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let eval = |tensors: &[Tensor]| -> Result<(f64, Option<Gradients>, Vec<NodeId>)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.parameter(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        if g.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss { elements: g.value(loss).len() });
        }
        Ok((g.value(loss).data()[0], Some(g.backward(loss)?), ids))
    };

    let tensors: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let (_, grads, ids) = eval(&tensors)?;
    let grads = grads.expect("gradients computed");

    let mut entries = Vec::with_capacity(params.len());
    for (pi, (name, _)) in params.iter().enumerate() {
        let analytic = grads.wrt(ids[pi]).expect("registered parameter").clone();
        let mut max_rel = 0.0_f64;
        for j in 0..tensors[pi].len() {
            let mut plus = tensors.clone();
            plus[pi].data_mut()[j] += step;
            let mut minus = tensors.clone();
            minus[pi].data_mut()[j] -= step;
            let fp = loss_only(&plus, &build)?;
            let fm = loss_only(&minus, &build)?;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
        entries.push(GradCheckEntry { name: name.to_string(), max_rel_err: max_rel });
    }
    Ok(GradCheckReport { entries, step, tol })
}

fn loss_only<F>(tensors: &[Tensor], build: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = tensors.iter().map(|t| g.parameter(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    Ok(g.value(loss).data()[0])
}
