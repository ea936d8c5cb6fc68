//! Plain numeric kernels shared by the forward and backward passes.

use super::{Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Splits `shape` around `axis` into `(outer, axis_len, inner)` extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted log-sum-exp of a slice; `-inf` for an empty slice.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

pub(crate) fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let (ad, bd) = (a.data(), b.data());
    if a.shape() == b.shape() {
        let data = ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    if is_suffix(b.shape(), a.shape()) {
        let nb = bd.len();
        let data = ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % nb])).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    if is_suffix(a.shape(), b.shape()) {
        let na = ad.len();
        let data = bd.iter().enumerate().map(|(i, &y)| f(ad[i % na], y)).collect();
        return Ok(Tensor::from_parts(b.shape().to_vec(), data));
    }
    Err(TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })
}

/// Sums a broadcast gradient back onto a suffix-shaped operand.
pub(crate) fn reduce_to(g: &Tensor, target: &[usize], f: impl Fn(f64, usize) -> f64) -> Tensor {
    let n: usize = target.iter().product();
    let mut data = vec![0.0; n];
    for (i, &gi) in g.data().iter().enumerate() {
        data[i % n] += f(gi, i);
    }
    Tensor::from_parts(target.to_vec(), data)
}

/// Gradient of a broadcasting binary op for one operand.
pub(crate) fn binary_grad(
    g: &Tensor,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64, f64) -> f64,
    for_lhs: bool,
) -> Tensor {
    let (ad, bd) = (a.data(), b.data());
    let (na, nb) = (ad.len(), bd.len());
    let target = if for_lhs { a.shape() } else { b.shape() };
    let n = if for_lhs { na } else { nb };
    let mut data = vec![0.0; n];
    for (i, &gi) in g.data().iter().enumerate() {
        data[i % n] += f(gi, ad[i % na], bd[i % nb]);
    }
    Tensor::from_parts(target.to_vec(), data)
}

pub(crate) fn reduce_axis(x: &Tensor, axis: usize, f: impl Fn(&[f64]) -> f64) -> Tensor {
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let mut out = Vec::with_capacity(outer * inner);
    let mut buf = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            for (l, slot) in buf.iter_mut().enumerate() {
                *slot = x.data()[(o * len + l) * inner + i];
            }
            out.push(f(&buf));
        }
    }
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    Tensor::from_parts(shape, out)
}

pub(crate) fn softmax(x: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let mut data = vec![0.0; x.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |l: usize| (o * len + l) * inner + i;
            let max = (0..len).map(|l| x.data()[idx(l)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for l in 0..len {
                let e = (x.data()[idx(l)] - max).exp();
                data[idx(l)] = e;
                total += e;
            }
            for l in 0..len {
                data[idx(l)] /= total;
            }
        }
    }
    Tensor::from_parts(x.shape().to_vec(), data)
}

pub(crate) fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts[0];
    let rank = first.rank();
    if axis >= rank {
        return Err(TensorError::BadAxis { axis, rank });
    }
    let mut total = 0;
    for p in parts {
        let compatible = p.rank() == rank
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(k, (a, b))| k == axis || a == b);
        if !compatible {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        total += p.shape()[axis];
    }
    let (outer, _, inner) = axis_split(first.shape(), axis);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let len = p.shape()[axis];
            data.extend_from_slice(&p.data()[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::from_parts(shape, data))
}

pub(crate) fn transpose_last2(x: &Tensor) -> Tensor {
    let r = x.rank();
    let (rows, cols) = (x.shape()[r - 2], x.shape()[r - 1]);
    let batch = x.numel() / (rows * cols).max(1);
    let mut data = vec![0.0; x.numel()];
    for b in 0..batch {
        let off = b * rows * cols;
        for i in 0..rows {
            for j in 0..cols {
                data[off + j * rows + i] = x.data()[off + i * cols + j];
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape.swap(r - 2, r - 1);
    Tensor::from_parts(shape, data)
}

/// Flat input index for every output element of a broadcast.
fn broadcast_map(input: &[usize], target: &[usize]) -> Result<Vec<usize>> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "broadcast_to",
        lhs: input.to_vec(),
        rhs: target.to_vec(),
    };
    if input.len() > target.len() {
        return Err(mismatch());
    }
    let pad = target.len() - input.len();
    let mut strides = vec![0usize; target.len()];
    let mut stride = 1;
    for k in (0..input.len()).rev() {
        let (d, t) = (input[k], target[pad + k]);
        if d == t {
            strides[pad + k] = stride;
        } else if d != 1 {
            return Err(mismatch());
        }
        stride *= d;
    }
    let n: usize = target.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut index = vec![0usize; target.len()];
    for _ in 0..n {
        map.push(index.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for k in (0..target.len()).rev() {
            index[k] += 1;
            if index[k] < target[k] {
                break;
            }
            index[k] = 0;
        }
    }
    Ok(map)
}

pub(crate) fn broadcast_to(x: &Tensor, target: &[usize]) -> Result<Tensor> {
    let map = broadcast_map(x.shape(), target)?;
    let data = map.iter().map(|&k| x.data()[k]).collect();
    Ok(Tensor::from_parts(target.to_vec(), data))
}

pub(crate) fn unbroadcast(g: &Tensor, input: &[usize]) -> Tensor {
    let map = broadcast_map(input, g.shape()).expect("shape validated in forward pass");
    let mut data = vec![0.0; input.iter().product()];
    for (&k, &gi) in map.iter().zip(g.data()) {
        data[k] += gi;
    }
    Tensor::from_parts(input.to_vec(), data)
}

/// `c = a * b (+ c if accumulate)` for strided row/column-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    // SAFETY: the caller guarantees each view's extents lie inside its slice;
    // `c` is a dense m x n row-major block.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

enum MatMulCase {
    /// `[n,k] x [k,p]`, with the left operand possibly a flattened `[b,n,k]`.
    Shared { rows: usize, k: usize, p: usize },
    Batched { batch: usize, n: usize, k: usize, p: usize },
}

fn matmul_case(a: &[usize], b: &[usize]) -> Result<MatMulCase> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    match (a.len(), b.len()) {
        (2, 2) if a[1] == b[0] => Ok(MatMulCase::Shared { rows: a[0], k: a[1], p: b[1] }),
        (3, 2) if a[2] == b[0] => Ok(MatMulCase::Shared { rows: a[0] * a[1], k: a[2], p: b[1] }),
        (3, 3) if a[0] == b[0] && a[2] == b[1] => Ok(MatMulCase::Batched {
            batch: a[0],
            n: a[1],
            k: a[2],
            p: b[2],
        }),
        _ => Err(mismatch()),
    }
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let case = matmul_case(a.shape(), b.shape())?;
    let mut shape = a.shape().to_vec();
    let last = shape.len() - 1;
    shape[last] = *b.shape().last().unwrap();
    let mut out = vec![0.0; shape.iter().product()];
    match case {
        MatMulCase::Shared { rows, k, p } => {
            gemm(rows, k, p, a.data(), (k as isize, 1), b.data(), (p as isize, 1), &mut out, false);
        }
        MatMulCase::Batched { batch, n, k, p } => {
            for i in 0..batch {
                gemm(
                    n,
                    k,
                    p,
                    &a.data()[i * n * k..],
                    (k as isize, 1),
                    &b.data()[i * k * p..],
                    (p as isize, 1),
                    &mut out[i * n * p..(i + 1) * n * p],
                    false,
                );
            }
        }
    }
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn matmul_backward(
    g: &Tensor,
    a: &Tensor,
    b: &Tensor,
    want_a: bool,
    want_b: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let case = matmul_case(a.shape(), b.shape()).expect("shape validated in forward pass");
    let mut ga = want_a.then(|| vec![0.0; a.numel()]);
    let mut gb = want_b.then(|| vec![0.0; b.numel()]);
    match case {
        MatMulCase::Shared { rows, k, p } => {
            if let Some(ga) = ga.as_mut() {
                // dA = G B^T
                gemm(rows, p, k, g.data(), (p as isize, 1), b.data(), (1, p as isize), ga, false);
            }
            if let Some(gb) = gb.as_mut() {
                // dB = A^T G
                gemm(k, rows, p, a.data(), (1, k as isize), g.data(), (p as isize, 1), gb, false);
            }
        }
        MatMulCase::Batched { batch, n, k, p } => {
            for i in 0..batch {
                let gi = &g.data()[i * n * p..];
                if let Some(ga) = ga.as_mut() {
                    let bi = &b.data()[i * k * p..];
                    gemm(n, p, k, gi, (p as isize, 1), bi, (1, p as isize), &mut ga[i * n * k..(i + 1) * n * k], false);
                }
                if let Some(gb) = gb.as_mut() {
                    let ai = &a.data()[i * n * k..];
                    gemm(k, n, p, ai, (1, k as isize), gi, (p as isize, 1), &mut gb[i * k * p..(i + 1) * k * p], false);
                }
            }
        }
    }
    (
        ga.map(|d| Tensor::from_parts(a.shape().to_vec(), d)),
        gb.map(|d| Tensor::from_parts(b.shape().to_vec(), d)),
    )
}
