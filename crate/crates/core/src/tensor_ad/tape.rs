use std::cell::{Ref, RefCell};

use super::kernels::{self, axis_split};
use super::{Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Powf(usize, f64),
    ClampMax(usize, f64),
    Sum { input: usize, axis: usize },
    Mean { input: usize, axis: usize },
    LogSumExp { input: usize, axis: usize },
    Softmax { input: usize, axis: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Gather { input: usize, indices: Vec<usize> },
    SelectRows { input: usize, indices: Vec<usize> },
    BroadcastTo(usize),
    Reshape(usize),
    Slice { input: usize, axis: usize, start: usize, end: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is also a topological order, so
/// the backward sweep is a single reverse pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf; it receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&self, tensor: Tensor) -> Var<'_> {
        let requires_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, mut tensor: Tensor) -> Var<'_> {
        tensor.set_requires_grad(false);
        self.push(tensor, Op::Leaf, false)
    }

    pub fn param(&self, mut tensor: Tensor) -> Var<'_> {
        tensor.set_requires_grad(true);
        self.push(tensor, Op::Leaf, true)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub fn zeros(&self, shape: &[usize]) -> Var<'_> {
        self.constant(Tensor::zeros(shape))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn record(&self, op: &'static str, value: Tensor, node: Op, inputs: &[usize]) -> Result<Var<'_>> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let requires_grad = self.needs(inputs);
        Ok(self.push(value, node, requires_grad))
    }

    /// Reverse sweep from a scalar root. Each node is visited exactly once.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.numel() != 1 {
            return Err(TensorError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::full(root_value.shape(), 1.0));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        // Only leaves that asked for gradients keep them.
        for (g, node) in grads.iter_mut().zip(nodes.iter()) {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of a scalar root with respect to every trainable leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, or zeros shaped like it when nothing flowed back.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(var.value_ref().shape()),
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn backprop(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    let wants = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(nodes[id].op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if wants(*a) {
                accumulate(grads, *a, kernels::reduce_to(g, val(*a).shape(), |x, _| x));
            }
            if wants(*b) {
                accumulate(grads, *b, kernels::reduce_to(g, val(*b).shape(), |x, _| sign * x));
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if wants(*a) {
                let ga = kernels::binary_grad(g, av, bv, |gi, _x, y| gi * y, true);
                accumulate(grads, *a, ga);
            }
            if wants(*b) {
                let gb = kernels::binary_grad(g, av, bv, |gi, x, _y| gi * x, false);
                accumulate(grads, *b, gb);
            }
        }
        Op::Div(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if wants(*a) {
                let ga = kernels::binary_grad(g, av, bv, |gi, _x, y| gi / y, true);
                accumulate(grads, *a, ga);
            }
            if wants(*b) {
                let gb = kernels::binary_grad(g, av, bv, |gi, x, y| -gi * x / (y * y), false);
                accumulate(grads, *b, gb);
            }
        }
        Op::Neg(a) => accumulate(grads, *a, g.map(|x| -x)),
        Op::Scale(a, c) => accumulate(grads, *a, g.map(|x| x * c)),
        Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
        Op::MatMul(a, b) => {
            let (ga, gb) = kernels::matmul_backward(g, val(*a), val(*b), wants(*a), wants(*b));
            if let Some(ga) = ga {
                accumulate(grads, *a, ga);
            }
            if let Some(gb) = gb {
                accumulate(grads, *b, gb);
            }
        }
        Op::Transpose(a) => accumulate(grads, *a, kernels::transpose_last2(g)),
        Op::Relu(a) => {
            let x = val(*a);
            accumulate(grads, *a, zip_map(g, x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }));
        }
        Op::Sigmoid(a) => accumulate(grads, *a, zip_map(g, out, |gi, y| gi * y * (1.0 - y))),
        Op::Tanh(a) => accumulate(grads, *a, zip_map(g, out, |gi, y| gi * (1.0 - y * y))),
        Op::Exp(a) => accumulate(grads, *a, zip_map(g, out, |gi, y| gi * y)),
        Op::Log(a) => accumulate(grads, *a, zip_map(g, val(*a), |gi, x| gi / x)),
        Op::Sqrt(a) => accumulate(grads, *a, zip_map(g, out, |gi, y| 0.5 * gi / y)),
        Op::Powf(a, p) => {
            let p = *p;
            accumulate(grads, *a, zip_map(g, val(*a), |gi, x| gi * p * x.powf(p - 1.0)));
        }
        Op::ClampMax(a, m) => {
            let m = *m;
            accumulate(grads, *a, zip_map(g, val(*a), |gi, x| if x <= m { gi } else { 0.0 }));
        }
        Op::Sum { input, axis } | Op::Mean { input, axis } => {
            let shape = val(*input).shape();
            let (outer, len, inner) = axis_split(shape, *axis);
            let scale = if matches!(nodes[id].op, Op::Mean { .. }) { 1.0 / len as f64 } else { 1.0 };
            let mut data = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        data[(o * len + l) * inner + i] = g.data()[o * inner + i] * scale;
                    }
                }
            }
            accumulate(grads, *input, Tensor::from_parts(shape.to_vec(), data));
        }
        Op::LogSumExp { input, axis } => {
            let x = val(*input);
            let (outer, len, inner) = axis_split(x.shape(), *axis);
            let mut data = vec![0.0; x.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let lse = out.data()[o * inner + i];
                    let gi = g.data()[o * inner + i];
                    for l in 0..len {
                        let k = (o * len + l) * inner + i;
                        data[k] = gi * (x.data()[k] - lse).exp();
                    }
                }
            }
            accumulate(grads, *input, Tensor::from_parts(x.shape().to_vec(), data));
        }
        Op::Softmax { input, axis } => {
            let (outer, len, inner) = axis_split(out.shape(), *axis);
            let mut data = vec![0.0; out.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |l: usize| (o * len + l) * inner + i;
                    let dot: f64 = (0..len).map(|l| g.data()[idx(l)] * out.data()[idx(l)]).sum();
                    for l in 0..len {
                        data[idx(l)] = out.data()[idx(l)] * (g.data()[idx(l)] - dot);
                    }
                }
            }
            accumulate(grads, *input, Tensor::from_parts(out.shape().to_vec(), data));
        }
        Op::Concat { inputs, axis } => {
            let (outer, _, inner) = axis_split(out.shape(), *axis);
            let total = out.shape()[*axis];
            let mut offset = 0;
            for &inp in inputs {
                let shape = val(inp).shape();
                let len = shape[*axis];
                if wants(inp) {
                    let mut data = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        data.extend_from_slice(&g.data()[start..start + len * inner]);
                    }
                    accumulate(grads, inp, Tensor::from_parts(shape.to_vec(), data));
                }
                offset += len;
            }
        }
        Op::Slice { input, axis, start, end } => {
            let shape = val(*input).shape();
            let (outer, total, inner) = axis_split(shape, *axis);
            let len = end - start;
            let mut data = vec![0.0; outer * total * inner];
            for o in 0..outer {
                let dst = (o * total + start) * inner;
                let src = o * len * inner;
                data[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
            }
            accumulate(grads, *input, Tensor::from_parts(shape.to_vec(), data));
        }
        Op::Gather { input, indices } => {
            let shape = val(*input).shape();
            let mut data = vec![0.0; val(*input).numel()];
            for (gi, &k) in g.data().iter().zip(indices) {
                data[k] += gi;
            }
            accumulate(grads, *input, Tensor::from_parts(shape.to_vec(), data));
        }
        Op::SelectRows { input, indices } => {
            let x = val(*input);
            let width = x.row_width();
            let mut data = vec![0.0; x.numel()];
            for (r, &k) in indices.iter().enumerate() {
                for c in 0..width {
                    data[k * width + c] += g.data()[r * width + c];
                }
            }
            accumulate(grads, *input, Tensor::from_parts(x.shape().to_vec(), data));
        }
        Op::BroadcastTo(a) => {
            accumulate(grads, *a, kernels::unbroadcast(g, val(*a).shape()));
        }
        Op::Reshape(a) => {
            accumulate(grads, *a, Tensor::from_parts(val(*a).shape().to_vec(), g.data().to_vec()));
        }
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn value_ref(&self) -> Ref<'_, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        let mut t = self.value_ref().clone();
        t.set_requires_grad(false);
        t
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.value_ref())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value_ref().shape().to_vec()
    }

    pub fn item(&self) -> Result<f64> {
        self.value_ref().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes cannot be combined"
        );
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        node: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            kernels::broadcast_binary(name, &nodes[self.id].value, &nodes[other.id].value, f)?
        };
        self.tape.record(name, value, node, &[self.id, other.id])
    }

    fn unary(self, name: &'static str, node: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        let value = f(&self.value_ref())?;
        self.tape.record(name, value, node, &[self.id])
    }

    /// Elementwise sum; the smaller operand may match a trailing suffix of
    /// the larger shape (leading-axis expansion).
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        if other.with_value(|t| t.data().iter().any(|&x| x == 0.0)) {
            return Err(TensorError::DivisionByZero);
        }
        self.binary(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.unary("neg", Op::Neg(self.id), |x| Ok(x.map(|v| -v)))
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary("scale", Op::Scale(self.id, c), |x| Ok(x.map(|v| v * c)))
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", Op::AddScalar(self.id), |x| Ok(x.map(|v| v + c)))
    }

    /// `[n,k]x[k,p]`, `[b,n,k]x[b,k,p]` or `[b,n,k]x[k,p]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            kernels::matmul(&nodes[self.id].value, &nodes[other.id].value)?
        };
        self.tape
            .record("matmul", value, Op::MatMul(self.id, other.id), &[self.id, other.id])
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t>> {
        self.unary("transpose", Op::Transpose(self.id), |x| {
            if x.rank() < 2 {
                return Err(TensorError::Invalid(format!("transpose of rank-{} tensor", x.rank())));
            }
            Ok(kernels::transpose_last2(x))
        })
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary("relu", Op::Relu(self.id), |x| Ok(x.map(|v| v.max(0.0))))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary("sigmoid", Op::Sigmoid(self.id), |x| Ok(x.map(kernels::sigmoid)))
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary("tanh", Op::Tanh(self.id), |x| Ok(x.map(f64::tanh)))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary("exp", Op::Exp(self.id), |x| Ok(x.map(f64::exp)))
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.unary("log", Op::Log(self.id), |x| {
            if let Some(&v) = x.data().iter().find(|&&v| v <= 0.0) {
                return Err(TensorError::Domain { op: "log", value: v });
            }
            Ok(x.map(f64::ln))
        })
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary("sqrt", Op::Sqrt(self.id), |x| {
            if let Some(&v) = x.data().iter().find(|&&v| v < 0.0) {
                return Err(TensorError::Domain { op: "sqrt", value: v });
            }
            Ok(x.map(f64::sqrt))
        })
    }

    pub fn powf(self, p: f64) -> Result<Var<'t>> {
        self.unary("powf", Op::Powf(self.id, p), |x| {
            if p.fract() != 0.0 {
                if let Some(&v) = x.data().iter().find(|&&v| v < 0.0) {
                    return Err(TensorError::Domain { op: "powf", value: v });
                }
            }
            Ok(x.map(|v| v.powf(p)))
        })
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.mul(self)
    }

    /// `min(x, max)`; the gradient is zero where the clamp is active.
    pub fn clamp_max(self, max: f64) -> Result<Var<'t>> {
        self.unary("clamp_max", Op::ClampMax(self.id, max), |x| Ok(x.map(|v| v.min(max))))
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        let rank = self.value_ref().rank();
        if axis >= rank {
            return Err(TensorError::BadAxis { axis, rank });
        }
        Ok(())
    }

    /// Sum over `axis`, removing it.
    pub fn sum(self, axis: usize) -> Result<Var<'t>> {
        self.check_axis(axis)?;
        self.unary("sum", Op::Sum { input: self.id, axis }, |x| Ok(kernels::reduce_axis(x, axis, |s| s.iter().sum())))
    }

    pub fn mean(self, axis: usize) -> Result<Var<'t>> {
        self.check_axis(axis)?;
        self.unary("mean", Op::Mean { input: self.id, axis }, |x| {
            Ok(kernels::reduce_axis(x, axis, |s| s.iter().sum::<f64>() / s.len() as f64))
        })
    }

    pub fn sum_all(self) -> Result<Var<'t>> {
        let n = self.value_ref().numel();
        self.reshape(&[n])?.sum(0)
    }

    pub fn mean_all(self) -> Result<Var<'t>> {
        let n = self.value_ref().numel();
        self.reshape(&[n])?.mean(0)
    }

    /// Overflow-safe log-sum-exp over `axis`.
    pub fn logsumexp(self, axis: usize) -> Result<Var<'t>> {
        self.check_axis(axis)?;
        self.unary("logsumexp", Op::LogSumExp { input: self.id, axis }, |x| {
            Ok(kernels::reduce_axis(x, axis, kernels::logsumexp))
        })
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        self.check_axis(axis)?;
        self.unary("softmax", Op::Softmax { input: self.id, axis }, |x| Ok(kernels::softmax(x, axis)))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        self.unary("reshape", Op::Reshape(self.id), |x| x.reshape(shape))
    }

    /// Explicit broadcast: size-1 axes and missing leading axes expand.
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t>> {
        self.unary("broadcast_to", Op::BroadcastTo(self.id), |x| kernels::broadcast_to(x, shape))
    }

    /// Elements at the given flat indices, as a vector.
    pub fn gather(self, indices: &[usize]) -> Result<Var<'t>> {
        self.unary("gather", Op::Gather { input: self.id, indices: indices.to_vec() }, |x| {
            let n = x.numel();
            if let Some(&k) = indices.iter().find(|&&k| k >= n) {
                return Err(TensorError::Invalid(format!("gather index {k} out of range {n}")));
            }
            Ok(Tensor::vector(indices.iter().map(|&k| x.data()[k]).collect()))
        })
    }

    /// Rows along axis 0.
    pub fn select_rows(self, indices: &[usize]) -> Result<Var<'t>> {
        self.unary("select_rows", Op::SelectRows { input: self.id, indices: indices.to_vec() }, |x| {
            let rows = x.rows();
            if x.rank() == 0 || indices.iter().any(|&k| k >= rows) {
                return Err(TensorError::Invalid(format!("row index out of range {rows}")));
            }
            Ok(x.select_rows(indices))
        })
    }

    /// `[start, end)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        self.check_axis(axis)?;
        self.unary("slice", Op::Slice { input: self.id, axis, start, end }, |x| {
            let len = x.shape()[axis];
            if start > end || end > len {
                return Err(TensorError::Invalid(format!("slice {start}..{end} of axis length {len}")));
            }
            let (outer, total, inner) = axis_split(x.shape(), axis);
            let mut data = Vec::with_capacity(outer * (end - start) * inner);
            for o in 0..outer {
                data.extend_from_slice(&x.data()[(o * total + start) * inner..(o * total + end) * inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[axis] = end - start;
            Ok(Tensor::from_parts(shape, data))
        })
    }

    /// Diagonal of a square matrix.
    pub fn diagonal(self) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(TensorError::Invalid(format!("diagonal of shape {shape:?}")));
        }
        let n = shape[0];
        let idx: Vec<usize> = (0..n).map(|i| i * n + i).collect();
        self.gather(&idx)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let tape = first.tape;
        for p in parts {
            first.same_tape(p);
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = tape.nodes.borrow();
            let inputs: Vec<&Tensor> = ids.iter().map(|&i| &nodes[i].value).collect();
            kernels::concat(&inputs, axis)?
        };
        tape.record("concat", value, Op::Concat { inputs: ids.clone(), axis }, &ids)
    }

    /// Stacks equally shaped tensors along a new axis 1 (`[B, ..]` -> `[B, n, ..]`).
    pub fn stack_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let mut expanded = Vec::with_capacity(parts.len());
        for p in parts {
            let mut shape = p.shape();
            shape.insert(1, 1);
            expanded.push(p.reshape(&shape)?);
        }
        Var::concat(&expanded, 1)
    }
}
