//! Primitive tensor operations: forward kernels and their vector-Jacobian
//! products.
//!
//! Shapes are checked at every op boundary. The only implicit broadcast is a
//! bias vector added across the leading dimensions of `Add`.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A primitive op together with its non-tensor attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// `[m, k] x [k, n] -> [m, n]`
    MatMul,
    /// Elementwise sum, or `[.., n] + [n]` bias add.
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    /// Multiply by a constant.
    Scale(f64),
    Relu,
    /// Softmax over the last dimension. Positions whose key mask is `false`
    /// receive exactly zero weight and are excluded from the normaliser.
    SoftmaxLastDim { key_mask: Option<Vec<bool>> },
    /// Inputs `x [.., n]`, `gamma [n]`, `beta [n]`.
    LayerNorm { eps: f64 },
    /// Gathers rows of a `[vocab, d]` table.
    EmbeddingLookup { ids: Vec<usize> },
    /// Multiplies by a precomputed mask (entries `0` or `1/(1-p)`).
    DropoutMaskApply { mask: Vec<f64> },
    /// Mean of all entries, producing a scalar.
    Mean,
    /// Sum of all entries, producing a scalar.
    Sum,
    Square,
    Sqrt,
    TransposeLast2,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Relu => "relu",
            Op::SoftmaxLastDim { .. } => "softmax_lastdim",
            Op::LayerNorm { .. } => "layernorm",
            Op::EmbeddingLookup { .. } => "embedding_lookup",
            Op::DropoutMaskApply { .. } => "dropout_mask_apply",
            Op::Mean => "mean",
            Op::Sum => "sum",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::TransposeLast2 => "transpose_last2",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::MatMul | Op::Add | Op::Sub | Op::Mul => Some(2),
            Op::LayerNorm { .. } => Some(3),
            Op::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

fn mismatch(op: &Op, inputs: &[&Tensor]) -> Error {
    let shapes: Vec<_> = inputs.iter().map(|t| t.shape().to_vec()).collect();
    Error::contract(op.name(), format!("incompatible input shapes {shapes:?}"))
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], batch: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for b in 0..batch {
        let base = b * m * n;
        for i in 0..m {
            for j in 0..n {
                out[base + j * m + i] = a[base + i * n + j];
            }
        }
    }
    out
}

fn last_dim(t: &Tensor) -> usize {
    t.shape().last().copied().unwrap_or(1)
}

/// Evaluates `op` on concrete inputs.
pub fn forward_op(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    if let Some(n) = op.arity() {
        if inputs.len() != n {
            return Err(Error::contract(
                op.name(),
                format!("expected {n} inputs, got {}", inputs.len()),
            ));
        }
    }
    match op {
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(mismatch(op, inputs));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
        }
        Op::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() == b.shape() {
                a.zip_map(b, |x, y| x + y)
            } else if b.rank() == 1 && a.rank() >= 1 && last_dim(a) == b.numel() {
                let n = b.numel();
                let data = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| x + b.data()[i % n])
                    .collect();
                Tensor::new(a.shape().to_vec(), data)
            } else {
                Err(mismatch(op, inputs))
            }
        }
        Op::Sub | Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(op, inputs));
            }
            if *op == Op::Sub {
                a.zip_map(b, |x, y| x - y)
            } else {
                a.zip_map(b, |x, y| x * y)
            }
        }
        Op::Scale(c) => Ok(inputs[0].map(|x| x * c)),
        Op::Relu => Ok(inputs[0].map(|x| x.max(0.0))),
        Op::SoftmaxLastDim { key_mask } => softmax_forward(inputs[0], key_mask.as_deref()),
        Op::LayerNorm { eps } => {
            let (x, gamma, beta) = (inputs[0], inputs[1], inputs[2]);
            let n = last_dim(x);
            if x.rank() == 0 || gamma.shape() != [n] || beta.shape() != [n] {
                return Err(mismatch(op, inputs));
            }
            let mut out = Vec::with_capacity(x.numel());
            for row in x.data().chunks(n) {
                let (xhat, _) = normalize_row(row, *eps);
                out.extend(
                    xhat.iter()
                        .zip(gamma.data().iter().zip(beta.data()))
                        .map(|(&h, (&g, &b))| g * h + b),
                );
            }
            Tensor::new(x.shape().to_vec(), out)
        }
        Op::EmbeddingLookup { ids } => {
            let table = inputs[0];
            if table.rank() != 2 {
                return Err(mismatch(op, inputs));
            }
            let (vocab, d) = (table.shape()[0], table.shape()[1]);
            let mut out = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                if id >= vocab {
                    return Err(Error::contract(
                        op.name(),
                        format!("id {id} out of range for table of {vocab} rows"),
                    ));
                }
                out.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
            }
            Tensor::new(vec![ids.len(), d], out)
        }
        Op::DropoutMaskApply { mask } => {
            let x = inputs[0];
            if mask.len() != x.numel() {
                return Err(Error::contract(
                    op.name(),
                    format!("mask has {} entries for tensor {:?}", mask.len(), x.shape()),
                ));
            }
            let data = x.data().iter().zip(mask).map(|(a, m)| a * m).collect();
            Tensor::new(x.shape().to_vec(), data)
        }
        Op::Mean => {
            let x = inputs[0];
            if x.numel() == 0 {
                return Err(Error::contract(op.name(), "mean of empty tensor"));
            }
            Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64))
        }
        Op::Sum => Ok(Tensor::scalar(inputs[0].data().iter().sum())),
        Op::Square => Ok(inputs[0].map(|x| x * x)),
        Op::Sqrt => {
            let x = inputs[0];
            if x.data().iter().any(|&v| v < 0.0) {
                return Err(Error::contract(op.name(), "negative input"));
            }
            Ok(x.map(f64::sqrt))
        }
        Op::TransposeLast2 => {
            let x = inputs[0];
            if x.rank() < 2 {
                return Err(mismatch(op, inputs));
            }
            let r = x.rank();
            let (m, n) = (x.shape()[r - 2], x.shape()[r - 1]);
            let batch = x.numel() / (m * n).max(1);
            let mut shape = x.shape().to_vec();
            shape.swap(r - 2, r - 1);
            Tensor::new(shape, transpose_raw(x.data(), batch, m, n))
        }
        Op::Concat { axis } => concat_forward(op, inputs, *axis),
        Op::Slice { axis, start, end } => {
            let x = inputs[0];
            if *axis >= x.rank() || start >= end || *end > x.shape()[*axis] {
                return Err(Error::contract(
                    op.name(),
                    format!("range {start}..{end} on axis {axis} of {:?}", x.shape()),
                ));
            }
            let (outer, dim, inner) = split_axis(x.shape(), *axis);
            let width = end - start;
            let mut out = Vec::with_capacity(outer * width * inner);
            for o in 0..outer {
                let base = o * dim * inner;
                out.extend_from_slice(&x.data()[base + start * inner..base + end * inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[*axis] = width;
            Tensor::new(shape, out)
        }
    }
}

fn normalize_row(row: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    (row.iter().map(|x| (x - mean) * inv).collect(), inv)
}

fn softmax_forward(x: &Tensor, key_mask: Option<&[bool]>) -> Result<Tensor> {
    let n = last_dim(x);
    if x.rank() == 0 {
        return Err(Error::contract("softmax_lastdim", "scalar input"));
    }
    if let Some(mask) = key_mask {
        if mask.len() != n {
            return Err(Error::contract(
                "softmax_lastdim",
                format!("key mask of length {} for last dim {n}", mask.len()),
            ));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::contract("softmax_lastdim", "every key is masked"));
        }
    }
    let keep = |j: usize| key_mask.is_none_or(|m| m[j]);
    let mut out = vec![0.0; x.numel()];
    for (row, dst) in x.data().chunks(n).zip(out.chunks_mut(n)) {
        let max = (0..n)
            .filter(|&j| keep(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in 0..n {
            if keep(j) {
                dst[j] = (row[j] - max).exp();
                total += dst[j];
            }
        }
        for v in dst.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

fn concat_forward(op: &Op, inputs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::contract(op.name(), "no inputs"))?;
    if axis >= first.rank() {
        return Err(mismatch(op, inputs));
    }
    for t in inputs {
        let same_rank = t.rank() == first.rank();
        if !same_rank
            || t.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            return Err(mismatch(op, inputs));
        }
    }
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let total: usize = inputs.iter().map(|t| t.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for t in inputs {
            let w = t.shape()[axis] * inner;
            out.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(shape, out)
}

/// Vector-Jacobian product of `op`: given the upstream gradient of the
/// output, returns the gradient for each input whose `needs` flag is set.
pub fn vjp(
    op: &Op,
    inputs: &[&Tensor],
    output: &Tensor,
    grad_out: &Tensor,
    needs: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    if grad_out.shape() != output.shape() {
        return Err(Error::contract(
            op.name(),
            format!(
                "upstream gradient {:?} does not match output {:?}",
                grad_out.shape(),
                output.shape()
            ),
        ));
    }
    let need = |i: usize| needs.get(i).copied().unwrap_or(false);
    let g = grad_out;
    let grads = match op {
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let da = need(0).then(|| {
                let bt = transpose_raw(b.data(), 1, k, n);
                Tensor::new(vec![m, k], matmul_raw(g.data(), &bt, m, n, k))
            });
            let db = need(1).then(|| {
                let at = transpose_raw(a.data(), 1, m, k);
                Tensor::new(vec![k, n], matmul_raw(&at, g.data(), k, m, n))
            });
            vec![da.transpose()?, db.transpose()?]
        }
        Op::Add => {
            let b = inputs[1];
            let db = if !need(1) {
                None
            } else if b.shape() == g.shape() {
                Some(g.clone())
            } else {
                let n = b.numel();
                let mut acc = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                Some(Tensor::new(vec![n], acc)?)
            };
            vec![need(0).then(|| g.clone()), db]
        }
        Op::Sub => vec![need(0).then(|| g.clone()), need(1).then(|| g.map(|v| -v))],
        Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let da = need(0).then(|| g.zip_map(b, |x, y| x * y)).transpose()?;
            let db = need(1).then(|| g.zip_map(a, |x, y| x * y)).transpose()?;
            vec![da, db]
        }
        Op::Scale(c) => vec![Some(g.map(|v| v * c))],
        Op::Relu => vec![Some(g.zip_map(inputs[0], |gv, x| if x > 0.0 { gv } else { 0.0 })?)],
        Op::SoftmaxLastDim { .. } => {
            let n = last_dim(output);
            let mut dx = vec![0.0; output.numel()];
            for ((y, gr), d) in output
                .data()
                .chunks(n)
                .zip(g.data().chunks(n))
                .zip(dx.chunks_mut(n))
            {
                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    d[j] = y[j] * (gr[j] - dot);
                }
            }
            vec![Some(Tensor::new(output.shape().to_vec(), dx)?)]
        }
        Op::LayerNorm { eps } => {
            let (x, gamma) = (inputs[0], inputs[1]);
            let n = last_dim(x);
            let mut dx = vec![0.0; x.numel()];
            let mut dgamma = vec![0.0; n];
            let mut dbeta = vec![0.0; n];
            for ((row, gr), d) in x
                .data()
                .chunks(n)
                .zip(g.data().chunks(n))
                .zip(dx.chunks_mut(n))
            {
                let (xhat, inv) = normalize_row(row, *eps);
                let mut sum_dh = 0.0;
                let mut sum_dh_xhat = 0.0;
                for j in 0..n {
                    dgamma[j] += gr[j] * xhat[j];
                    dbeta[j] += gr[j];
                    let dh = gr[j] * gamma.data()[j];
                    sum_dh += dh;
                    sum_dh_xhat += dh * xhat[j];
                }
                let nf = n as f64;
                for j in 0..n {
                    let dh = gr[j] * gamma.data()[j];
                    d[j] = inv / nf * (nf * dh - sum_dh - xhat[j] * sum_dh_xhat);
                }
            }
            vec![
                need(0).then(|| Tensor::new(x.shape().to_vec(), dx)).transpose()?,
                need(1).then(|| Tensor::vector(dgamma)),
                need(2).then(|| Tensor::vector(dbeta)),
            ]
        }
        Op::EmbeddingLookup { ids } => {
            let table = inputs[0];
            let d = table.shape()[1];
            let mut dt = vec![0.0; table.numel()];
            for (r, &id) in ids.iter().enumerate() {
                for (a, v) in dt[id * d..(id + 1) * d]
                    .iter_mut()
                    .zip(&g.data()[r * d..(r + 1) * d])
                {
                    *a += v;
                }
            }
            vec![Some(Tensor::new(table.shape().to_vec(), dt)?)]
        }
        Op::DropoutMaskApply { mask } => {
            let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
            vec![Some(Tensor::new(g.shape().to_vec(), data)?)]
        }
        Op::Mean => {
            let x = inputs[0];
            let v = g.data()[0] / x.numel() as f64;
            vec![Some(Tensor::full(x.shape(), v))]
        }
        Op::Sum => vec![Some(Tensor::full(inputs[0].shape(), g.data()[0]))],
        Op::Square => vec![Some(g.zip_map(inputs[0], |gv, x| 2.0 * x * gv)?)],
        Op::Sqrt => {
            if output.data().contains(&0.0) {
                return Err(Error::contract(op.name(), "gradient undefined at zero"));
            }
            vec![Some(g.zip_map(output, |gv, y| gv / (2.0 * y))?)]
        }
        Op::TransposeLast2 => vec![Some(forward_op(&Op::TransposeLast2, &[g])?)],
        Op::Concat { axis } => {
            let mut start = 0;
            let mut out = Vec::with_capacity(inputs.len());
            for (i, t) in inputs.iter().enumerate() {
                let end = start + t.shape()[*axis];
                out.push(if need(i) {
                    Some(forward_op(
                        &Op::Slice {
                            axis: *axis,
                            start,
                            end,
                        },
                        &[g],
                    )?)
                } else {
                    None
                });
                start = end;
            }
            out
        }
        Op::Slice { axis, start, end } => {
            let x = inputs[0];
            let (outer, dim, inner) = split_axis(x.shape(), *axis);
            let width = end - start;
            let mut dx = vec![0.0; x.numel()];
            for o in 0..outer {
                let dst = o * dim * inner + start * inner;
                let src = o * width * inner;
                dx[dst..dst + width * inner].copy_from_slice(&g.data()[src..src + width * inner]);
            }
            vec![Some(Tensor::new(x.shape().to_vec(), dx)?)]
        }
    };
    Ok(grads)
}
