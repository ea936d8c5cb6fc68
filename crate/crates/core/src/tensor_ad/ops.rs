use super::{TensorError, Var};

/// Every differentiable operation the tape supports, with its static
/// arguments. [`forward_op`] dispatches on it.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Transpose,
    Neg,
    Scale(f64),
    AddScalar(f64),
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Powf(f64),
    ClampMax(f64),
    Sum { axis: usize },
    Mean { axis: usize },
    LogSumExp { axis: usize },
    Softmax { axis: usize },
    Concat { axis: usize },
    Gather { indices: Vec<usize> },
    SelectRows { indices: Vec<usize> },
    BroadcastTo { shape: Vec<usize> },
    Reshape { shape: Vec<usize> },
    Slice { axis: usize, start: usize, end: usize },
}

impl OpKind {
    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div | OpKind::MatMul => Some(2),
            OpKind::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

/// Applies `kind` to `inputs`, recording the result on their tape.
pub fn forward_op<'t>(kind: &OpKind, inputs: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
    if let Some(n) = kind.arity() {
        if inputs.len() != n {
            return Err(TensorError::Invalid(format!(
                "{kind:?} takes {n} inputs, got {}",
                inputs.len()
            )));
        }
    }
    let x = inputs[0];
    match kind {
        OpKind::Add => x.add(inputs[1]),
        OpKind::Sub => x.sub(inputs[1]),
        OpKind::Mul => x.mul(inputs[1]),
        OpKind::Div => x.div(inputs[1]),
        OpKind::MatMul => x.matmul(inputs[1]),
        OpKind::Transpose => x.transpose(),
        OpKind::Neg => x.neg(),
        OpKind::Scale(c) => x.scale(*c),
        OpKind::AddScalar(c) => x.add_scalar(*c),
        OpKind::Relu => x.relu(),
        OpKind::Sigmoid => x.sigmoid(),
        OpKind::Tanh => x.tanh(),
        OpKind::Exp => x.exp(),
        OpKind::Log => x.log(),
        OpKind::Sqrt => x.sqrt(),
        OpKind::Powf(p) => x.powf(*p),
        OpKind::ClampMax(m) => x.clamp_max(*m),
        OpKind::Sum { axis } => x.sum(*axis),
        OpKind::Mean { axis } => x.mean(*axis),
        OpKind::LogSumExp { axis } => x.logsumexp(*axis),
        OpKind::Softmax { axis } => x.softmax(*axis),
        OpKind::Concat { axis } => Var::concat(inputs, *axis),
        OpKind::Gather { indices } => x.gather(indices),
        OpKind::SelectRows { indices } => x.select_rows(indices),
        OpKind::BroadcastTo { shape } => x.broadcast_to(shape),
        OpKind::Reshape { shape } => x.reshape(shape),
        OpKind::Slice { axis, start, end } => x.slice(*axis, *start, *end),
    }
}
