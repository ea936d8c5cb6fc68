use idad_core::rng::{Rng, SeedStreams};
use idad_core::tensor_ad::{finite_diff_grad, forward_op, OpKind, Tape, Tensor, TensorError};
use rand::Rng as _;

use crate::{Check, Verdict};

const INSTANCES: usize = 200;
const TOLERANCE: f64 = 1e-5;
const STEP: f64 = 1e-6;

fn kinds() -> Vec<&'static str> {
    vec![
        "add", "sub", "mul", "div", "matmul", "transpose", "neg", "scale", "add_scalar", "relu", "sigmoid", "tanh",
        "exp", "log", "sqrt", "powf", "clamp_max", "sum", "mean", "logsumexp", "softmax", "concat", "gather",
        "select_rows", "broadcast_to", "reshape", "slice",
    ]
}

fn tensor(shape: &[usize], rng: &mut Rng, mut sample: impl FnMut(&mut Rng) -> f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| sample(rng)).collect()).unwrap()
}

fn normal(rng: &mut Rng) -> f64 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

fn signed(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    let v = rng.random_range(lo..hi);
    if rng.random_bool(0.5) { v } else { -v }
}

/// A random instance of `kind`: the op and its inputs.
fn instance(kind: &str, rng: &mut Rng) -> (OpKind, Vec<Tensor>) {
    let r = rng.random_range(1..=4);
    let c = rng.random_range(1..=4);
    let axis = rng.random_range(0..2);
    let x = tensor(&[r, c], rng, normal);
    match kind {
        "add" | "sub" | "mul" | "div" => {
            let shape = if rng.random_bool(0.5) { vec![r, c] } else { vec![c] };
            let y = if kind == "div" { tensor(&shape, rng, |g| signed(g, 0.5, 2.0)) } else { tensor(&shape, rng, normal) };
            let op = match kind {
                "add" => OpKind::Add,
                "sub" => OpKind::Sub,
                "mul" => OpKind::Mul,
                _ => OpKind::Div,
            };
            (op, vec![x, y])
        }
        "matmul" => {
            let n = rng.random_range(1..=4);
            (OpKind::MatMul, vec![x, tensor(&[c, n], rng, normal)])
        }
        "transpose" => (OpKind::Transpose, vec![x]),
        "neg" => (OpKind::Neg, vec![x]),
        "scale" => (OpKind::Scale(normal(rng) * 2.0), vec![x]),
        "add_scalar" => (OpKind::AddScalar(normal(rng)), vec![x]),
        "relu" => (OpKind::Relu, vec![tensor(&[r, c], rng, |g| signed(g, 0.05, 2.0))]),
        "sigmoid" => (OpKind::Sigmoid, vec![x]),
        "tanh" => (OpKind::Tanh, vec![x]),
        "exp" => (OpKind::Exp, vec![x]),
        "log" => (OpKind::Log, vec![tensor(&[r, c], rng, |g| g.random_range(0.2..3.0))]),
        "sqrt" => (OpKind::Sqrt, vec![tensor(&[r, c], rng, |g| g.random_range(0.2..3.0))]),
        "powf" => (OpKind::Powf(rng.random_range(-2.0..3.0)), vec![tensor(&[r, c], rng, |g| g.random_range(0.2..3.0))]),
        "clamp_max" => {
            let m = normal(rng);
            (OpKind::ClampMax(m), vec![tensor(&[r, c], rng, |g| m + signed(g, 0.05, 2.0))])
        }
        "sum" => (OpKind::Sum { axis }, vec![x]),
        "mean" => (OpKind::Mean { axis }, vec![x]),
        "logsumexp" => (OpKind::LogSumExp { axis }, vec![x.map(|v| v * 3.0)]),
        "softmax" => (OpKind::Softmax { axis }, vec![x]),
        "concat" => {
            let parts = rng.random_range(2..=3);
            let mut inputs = vec![x];
            for _ in 1..parts {
                let extent = rng.random_range(1..=3);
                let shape = if axis == 0 { [extent, c] } else { [r, extent] };
                inputs.push(tensor(&shape, rng, normal));
            }
            (OpKind::Concat { axis }, inputs)
        }
        "gather" => {
            let k = rng.random_range(1..=6);
            (OpKind::Gather { indices: (0..k).map(|_| rng.random_range(0..r * c)).collect() }, vec![x])
        }
        "select_rows" => {
            let k = rng.random_range(1..=5);
            (OpKind::SelectRows { indices: (0..k).map(|_| rng.random_range(0..r)).collect() }, vec![x])
        }
        "broadcast_to" => {
            let input = match rng.random_range(0..3) {
                0 => tensor(&[1, c], rng, normal),
                1 => tensor(&[c], rng, normal),
                _ => tensor(&[r, 1], rng, normal),
            };
            (OpKind::BroadcastTo { shape: vec![r, c] }, vec![input])
        }
        "reshape" => {
            let shape = if axis == 0 { vec![c, r] } else { vec![r * c] };
            (OpKind::Reshape { shape }, vec![x])
        }
        "slice" => {
            let len = [r, c][axis];
            let start = rng.random_range(0..len);
            let end = rng.random_range(start + 1..=len);
            (OpKind::Slice { axis, start, end }, vec![x])
        }
        other => unreachable!("unknown op {other}"),
    }
}

/// `sum(op(inputs) * weights)` with gradients for every input.
fn weighted_output(op: &OpKind, inputs: &[Tensor], weights: Option<&Tensor>) -> Result<(f64, Vec<Tensor>, Tensor), TensorError> {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = forward_op(op, &vars)?;
    let w = match weights {
        Some(w) => w.clone(),
        None => Tensor::full(&out.shape(), 1.0),
    };
    let total = out.mul(tape.constant(w.clone()))?.sum_all()?;
    let grads = tape.backward(total)?;
    Ok((total.item()?, vars.iter().map(|v| grads.wrt(*v)).collect(), w))
}

fn norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn matches_finite_differences() -> Check {
    let streams = SeedStreams::new(7).child("autodiff");
    let mut worst = (0.0_f64, "");
    let mut checked = 0;
    for kind in kinds() {
        let mut rng = streams.rng(kind);
        for _ in 0..INSTANCES {
            let (op, inputs) = instance(kind, &mut rng);
            let (_, _, ones) = weighted_output(&op, &inputs, None)?;
            let weights = tensor(ones.shape(), &mut rng, normal);
            let (_, grads, _) = weighted_output(&op, &inputs, Some(&weights))?;
            for (i, grad) in grads.iter().enumerate() {
                let numeric = finite_diff_grad(
                    |probe| {
                        let mut moved = inputs.clone();
                        moved[i] = probe.clone();
                        Ok(weighted_output(&op, &moved, Some(&weights))?.0)
                    },
                    &inputs[i],
                    STEP,
                )?;
                let diff: Vec<f64> = grad.data().iter().zip(numeric.data()).map(|(a, b)| a - b).collect();
                let scale = norm(numeric.data()).max(norm(grad.data())).max(1e-8);
                let rel = norm(&diff) / scale;
                if rel > worst.0 {
                    worst = (rel, kind);
                }
            }
            checked += 1;
        }
    }
    Verdict::new(
        worst.0 < TOLERANCE,
        format!("{} op kinds x {INSTANCES} instances ({checked}), max relative error {:.2e} ({}) < {TOLERANCE:e}", kinds().len(), worst.0, worst.1),
    )
}
