use std::collections::HashMap;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'p, F> {
    Owned(Vec<F>),
    Borrowed(&'p [F]),
}

impl<F> Value<'_, F> {
    fn as_slice(&self) -> &[F] {
        match self {
            Value::Owned(v) => v,
            Value::Borrowed(s) => s,
        }
    }
}

enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, row: Var },
    AddTiled { a: Var, b: Var },
    Affine { a: Var, scale: F },
    MulConst { a: Var, mask: Vec<F> },
    Blend { new: Var, old: Var, keep: Vec<F> },
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SumAll(Var),
    Mean { a: Var, axis: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { a: Var, start: usize },
    SliceRows { a: Var, start: usize },
    Gather { a: Var, rows: Vec<usize> },
    Reshape(Var),
    Transpose(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<F>, inv_std: Vec<F> },
    WeightedTimeSum { alpha: Var, ann: Var },
    TimeMean { ann: Var, weights: Vec<F> },
    CrossEntropy { logits: Var, targets: Vec<u32>, weights: Vec<F>, probs: Vec<F> },
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow { .. } => "add_row",
            Op::AddTiled { .. } => "add_tiled",
            Op::Affine { .. } => "affine",
            Op::MulConst { .. } => "mul_const",
            Op::Blend { .. } => "blend",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::SumAll(_) => "sum",
            Op::Mean { .. } => "mean",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::Gather { .. } => "gather",
            Op::Reshape(_) => "reshape",
            Op::Transpose(_) => "transpose",
            Op::LayerNorm { .. } => "layer_norm",
            Op::WeightedTimeSum { .. } => "weighted_time_sum",
            Op::TimeMean { .. } => "time_mean",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Node<'p, F> {
    value: Value<'p, F>,
    shape: Vec<usize>,
    op: Op<F>,
    needs_grad: bool,
}

/// Define-by-run computation tape.
///
/// Every operation appends one node; nodes are therefore already in
/// topological order and `backward` is a single reverse sweep.
pub struct Graph<'p, F: Real> {
    nodes: Vec<Node<'p, F>>,
    grads: Vec<Option<Vec<F>>>,
    params: HashMap<usize, Var>,
    param_order: Vec<(usize, Var)>,
    checked: bool,
    record: bool,
}

impl<F: Real> Default for Graph<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Interpret a shape as a matrix: all leading axes fold into rows.
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        None => (1, 1),
        Some((&c, rest)) => (rest.iter().product::<usize>().max(1), c),
    }
}

fn add_into<F: Real>(dst: &mut Option<Vec<F>>, src: impl IntoIterator<Item = (usize, F)>, len: usize) {
    let buf = dst.get_or_insert_with(|| vec![F::zero(); len]);
    for (i, v) in src {
        buf[i] = buf[i] + v;
    }
}

fn add_slice<F: Real>(dst: &mut Option<Vec<F>>, src: &[F]) {
    match dst {
        Some(buf) => buf.iter_mut().zip(src).for_each(|(a, &b)| *a = *a + b),
        None => *dst = Some(src.to_vec()),
    }
}

fn softmax_row<F: Real>(row: &[F], out: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum = sum + *o;
    }
    out.iter_mut().for_each(|o| *o = *o / sum);
}

impl<'p, F: Real> Graph<'p, F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            param_order: Vec::new(),
            checked: false,
            record: true,
        }
    }

    /// A graph that only evaluates; no node ever requires a gradient.
    pub fn inference() -> Self {
        Graph {
            record: false,
            ..Self::new()
        }
    }

    /// Turn on NaN/Inf detection after every op.
    pub fn set_checked(&mut self, checked: bool) {
        self.checked = checked;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[F] {
        self.nodes[v.0].value.as_slice()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn rc(&self, v: Var) -> (usize, usize) {
        rows_cols(&self.nodes[v.0].shape)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op: Op<F>, shape: Vec<usize>, value: Vec<F>, inputs: &[Var]) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if self.checked && value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                op: op.name().to_string(),
            });
        }
        let needs_grad = self.record && inputs.iter().any(|&i| self.needs(i));
        self.nodes.push(Node {
            value: Value::Owned(value),
            shape,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, shape: &[usize], data: Vec<F>) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(
                "constant",
                format!("shape {shape:?} vs {} values", data.len()),
            ));
        }
        self.nodes.push(Node {
            value: Value::Owned(data),
            shape: shape.to_vec(),
            op: Op::Leaf,
            needs_grad: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        let n = shape.iter().product();
        self.constant(shape, vec![F::zero(); n]).expect("consistent shape")
    }

    /// Leaf borrowed from a tensor. It requires a gradient iff the tensor
    /// does. Distinct `key`s identify distinct parameters; registering the
    /// same key twice returns the same node.
    pub fn param(&mut self, key: usize, t: &'p Tensor<F>) -> Var {
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Borrowed(t.data()),
            shape: t.shape().to_vec(),
            op: Op::Leaf,
            needs_grad: self.record && t.requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(key, v);
        self.param_order.push((key, v));
        v
    }

    // ---------------------------------------------------------------- ops

    /// `a · b`, with optional transposition of either operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.rc(a);
        let (br, bc) = self.rc(b);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?}{} x {:?}{}", self.shape(a), if ta { "^T" } else { "" }, self.shape(b), if tb { "^T" } else { "" }),
            ));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, self.value(a), ta, self.value(b), tb, &mut out, false);
        self.push(Op::MatMul { a, b, ta, tb }, vec![m, n], out, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_op(&mut self, op: Op<F>, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let out: Vec<F> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(op, shape, out, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// Broadcast a row vector over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.rc(a);
        if self.value(row).len() != c {
            return Err(Error::shape("add_row", format!("{:?} + row {:?}", self.shape(a), self.shape(row))));
        }
        let rv = self.value(row);
        let out: Vec<F> = self
            .value(a)
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(&x, &y)| x + y))
            .collect();
        debug_assert_eq!(out.len(), r * c);
        let shape = self.shape(a).to_vec();
        self.push(Op::AddRow { a, row }, shape, out, &[a, row])
    }

    /// `a` is time-major `[S*B, C]`; `b` is `[B, C]` and is added to every
    /// time slice.
    pub fn add_tiled(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.rc(a);
        let (br, bc) = self.rc(b);
        if ac != bc || br == 0 || ar % br != 0 {
            return Err(Error::shape("add_tiled", format!("{:?} + tiled {:?}", self.shape(a), self.shape(b))));
        }
        let bv = self.value(b);
        let block = br * bc;
        let out: Vec<F> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % block])
            .collect();
        self.push(Op::AddTiled { a, b }, vec![ar, ac], out, &[a, b])
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: F, shift: F) -> Result<Var> {
        let out: Vec<F> = self.value(a).iter().map(|&x| scale * x + shift).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Affine { a, scale }, shape, out, &[a])
    }

    /// Elementwise product with a constant of the same size (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Vec<F>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(Error::shape("mul_const", format!("{:?} vs mask of {}", self.shape(a), mask.len())));
        }
        let out: Vec<F> = self.value(a).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::MulConst { a, mask }, shape, out, &[a])
    }

    /// Row-wise `keep * new + (1 - keep) * old` with a constant per-row mask.
    pub fn blend(&mut self, new: Var, old: Var, keep: Vec<F>) -> Result<Var> {
        self.same_shape("blend", new, old)?;
        let (r, c) = self.rc(new);
        if keep.len() != r {
            return Err(Error::shape("blend", format!("{r} rows vs mask of {}", keep.len())));
        }
        let (nv, ov) = (self.value(new), self.value(old));
        let out: Vec<F> = (0..r * c)
            .map(|i| {
                let m = keep[i / c];
                m * nv[i] + (F::one() - m) * ov[i]
            })
            .collect();
        let shape = self.shape(new).to_vec();
        self.push(Op::Blend { new, old, keep }, shape, out, &[new, old])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out: Vec<F> = self.value(a).iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Tanh(a), shape, out, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out: Vec<F> = self
            .value(a)
            .iter()
            .map(|&x| F::one() / (F::one() + (-x).exp()))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Sigmoid(a), shape, out, &[a])
    }

    /// Row-wise softmax over the last axis (max-subtracted).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (_, c) = self.rc(a);
        let mut out = vec![F::zero(); self.value(a).len()];
        for (row, o) in self.value(a).chunks(c).zip(out.chunks_mut(c)) {
            softmax_row(row, o);
        }
        let shape = self.shape(a).to_vec();
        self.push(Op::Softmax(a), shape, out, &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (_, c) = self.rc(a);
        let mut out = Vec::with_capacity(self.value(a).len());
        for row in self.value(a).chunks(c) {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<F>().ln() + max;
            out.extend(row.iter().map(|&x| x - lse));
        }
        let shape = self.shape(a).to_vec();
        self.push(Op::LogSoftmax(a), shape, out, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().copied().sum::<F>();
        self.push(Op::SumAll(a), vec![1], vec![s], &[a])
    }

    /// Mean over axis 0 (rows → `[C]`) or axis 1 (cols → `[R]`) of a matrix.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.rc(a);
        let v = self.value(a);
        let out: Vec<F> = match axis {
            0 => {
                let n = F::from_usize(r).expect("row count");
                (0..c).map(|j| (0..r).map(|i| v[i * c + j]).sum::<F>() / n).collect()
            }
            1 => {
                let n = F::from_usize(c).expect("col count");
                v.chunks(c).map(|row| row.iter().copied().sum::<F>() / n).collect()
            }
            _ => return Err(Error::shape("mean", format!("axis {axis} on {:?}", self.shape(a)))),
        };
        let len = out.len();
        self.push(Op::Mean { a, axis }, vec![len], out, &[a])
    }

    /// Concatenate matrices with equal row counts along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.rc(p).0).ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        if parts.iter().any(|&p| self.rc(p).0 != rows) {
            let shapes: Vec<_> = parts.iter().map(|&p| self.shape(p).to_vec()).collect();
            return Err(Error::shape("concat_cols", format!("{shapes:?}")));
        }
        let total: usize = parts.iter().map(|&p| self.rc(p).1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let c = self.rc(p).1;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), vec![rows, total], out, parts)
    }

    /// Stack matrices with equal column counts along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|&p| self.rc(p).1).ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        if parts.iter().any(|&p| self.rc(p).1 != cols) {
            let shapes: Vec<_> = parts.iter().map(|&p| self.shape(p).to_vec()).collect();
            return Err(Error::shape("concat_rows", format!("{shapes:?}")));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let rows = out.len() / cols;
        self.push(Op::ConcatRows(parts.to_vec()), vec![rows, cols], out, parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.rc(a);
        if start + len > c || len == 0 {
            return Err(Error::shape("slice_cols", format!("[{start}..{}] of {:?}", start + len, self.shape(a))));
        }
        let v = self.value(a);
        let out: Vec<F> = (0..r).flat_map(|i| v[i * c + start..i * c + start + len].iter().copied()).collect();
        self.push(Op::SliceCols { a, start }, vec![r, len], out, &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.rc(a);
        if start + len > r || len == 0 {
            return Err(Error::shape("slice_rows", format!("[{start}..{}] of {:?}", start + len, self.shape(a))));
        }
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        self.push(Op::SliceRows { a, start }, vec![len, c], out, &[a])
    }

    /// Row gather; also serves as embedding lookup.
    pub fn gather(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.rc(a);
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather", format!("row {bad} of {:?}", self.shape(a))));
        }
        if rows.is_empty() {
            return Err(Error::shape("gather", "empty index list"));
        }
        let v = self.value(a);
        let out: Vec<F> = rows.iter().flat_map(|&i| v[i * c..(i + 1) * c].iter().copied()).collect();
        self.push(Op::Gather { a, rows: rows.to_vec() }, vec![rows.len(), c], out, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(a))));
        }
        let out = self.value(a).to_vec();
        self.push(Op::Reshape(a), shape.to_vec(), out, &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.rc(a);
        let v = self.value(a);
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        self.push(Op::Transpose(a), vec![c, r], out, &[a])
    }

    /// Per-row standardization (population variance) followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.rc(x);
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(Error::shape(
                "layer_norm",
                format!("{:?} with gain {:?} bias {:?}", self.shape(x), self.shape(gain), self.shape(bias)),
            ));
        }
        let eps = F::from_f64_lossy(eps);
        let n = F::from_usize(c).expect("dim");
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let mut xhat = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in xv.chunks(c) {
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let is = F::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(gv[j] * h + bv[j]);
            }
        }
        self.push(Op::LayerNorm { x, gain, bias, xhat, inv_std }, self.shape(x).to_vec(), out, &[x, gain, bias])
    }

    /// `alpha` is `[B, S]`, `ann` is time-major `[S*B, D]`; returns
    /// `[B, D]` with row `b = Σ_s alpha[b,s] · ann[s*B + b]`.
    pub fn weighted_time_sum(&mut self, alpha: Var, ann: Var) -> Result<Var> {
        let (b, s) = self.rc(alpha);
        let (ar, d) = self.rc(ann);
        if ar != s * b {
            return Err(Error::shape("weighted_time_sum", format!("{:?} over {:?}", self.shape(alpha), self.shape(ann))));
        }
        let (av, nv) = (self.value(alpha), self.value(ann));
        let mut out = vec![F::zero(); b * d];
        for bi in 0..b {
            let o = &mut out[bi * d..(bi + 1) * d];
            for si in 0..s {
                let w = av[bi * s + si];
                let row = &nv[(si * b + bi) * d..(si * b + bi + 1) * d];
                o.iter_mut().zip(row).for_each(|(x, &y)| *x = *x + w * y);
            }
        }
        self.push(Op::WeightedTimeSum { alpha, ann }, vec![b, d], out, &[alpha, ann])
    }

    /// Constant-weighted reduction over time of a time-major `[S*B, D]`
    /// matrix; `weights` is `[B, S]` (row-major by batch).
    pub fn time_mean(&mut self, ann: Var, batch: usize, weights: Vec<F>) -> Result<Var> {
        let (ar, d) = self.rc(ann);
        if batch == 0 || ar % batch != 0 || weights.len() != ar {
            return Err(Error::shape("time_mean", format!("{:?} with batch {batch}", self.shape(ann))));
        }
        let s = ar / batch;
        let nv = self.value(ann);
        let mut out = vec![F::zero(); batch * d];
        for bi in 0..batch {
            for si in 0..s {
                let w = weights[bi * s + si];
                let row = &nv[(si * batch + bi) * d..(si * batch + bi + 1) * d];
                out[bi * d..(bi + 1) * d].iter_mut().zip(row).for_each(|(x, &y)| *x = *x + w * y);
            }
        }
        self.push(Op::TimeMean { ann, weights }, vec![batch, d], out, &[ann])
    }

    /// Softmax cross-entropy summed over rows: `Σ_b w_b · −log softmax(logits_b)[t_b]`.
    ///
    /// Columns marked `false` in `allowed` are excluded from the softmax.
    /// Rows with zero weight are ignored entirely.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[u32],
        weights: Vec<F>,
        allowed: Option<&[bool]>,
    ) -> Result<Var> {
        let (r, c) = self.rc(logits);
        if targets.len() != r || weights.len() != r || allowed.is_some_and(|a| a.len() != c) {
            return Err(Error::shape(
                "cross_entropy",
                format!("{:?} with {} targets, {} weights", self.shape(logits), targets.len(), weights.len()),
            ));
        }
        let lv = self.value(logits);
        let mut probs = vec![F::zero(); r * c];
        let mut loss = F::zero();
        for bi in 0..r {
            if weights[bi] == F::zero() {
                continue;
            }
            let t = targets[bi] as usize;
            if t >= c || allowed.is_some_and(|a| !a[t]) {
                return Err(Error::contract(format!("cross_entropy target {t} is not an allowed output")));
            }
            let row = &lv[bi * c..(bi + 1) * c];
            let ok = |j: usize| allowed.is_none_or(|a| a[j]);
            let max = (0..c).filter(|&j| ok(j)).map(|j| row[j]).fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for j in (0..c).filter(|&j| ok(j)) {
                let e = (row[j] - max).exp();
                probs[bi * c + j] = e;
                z = z + e;
            }
            for j in 0..c {
                probs[bi * c + j] = probs[bi * c + j] / z;
            }
            let logp = row[t] - max - z.ln();
            loss = loss - weights[bi] * logp;
        }
        self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights,
                probs,
            },
            vec![1],
            vec![loss],
            &[logits],
        )
    }

    // ----------------------------------------------------------- backward

    /// Reverse sweep from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of parameter leaves, keyed as registered with [`Graph::param`].
    pub fn param_grads(&self) -> Vec<(usize, Option<&[F]>)> {
        self.param_order.iter().map(|&(k, v)| (k, self.grad(v))).collect()
    }

    fn backprop_node(&mut self, i: usize, g: &[F]) {
        // Split borrows: ops read node values while writing input grads.
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let val = |v: Var| nodes[v.0].value.as_slice();
        let needs = |v: Var| nodes[v.0].needs_grad;
        let rc = |v: Var| rows_cols(&nodes[v.0].shape);
        let out = nodes[i].value.as_slice();
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let (ar, ac) = rc(a);
                let (br, bc) = rc(b);
                let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
                let n = if tb { br } else { bc };
                if needs(a) {
                    // dA (logical m×k) = G · Bᵀ ; stored layout follows `ta`
                    let mut da = vec![F::zero(); m * k];
                    if ta {
                        // store as k×m: Bᴸ · Gᵀ
                        F::gemm(k, n, m, val(b), tb, g, true, &mut da, false);
                    } else {
                        F::gemm(m, n, k, g, false, val(b), !tb, &mut da, false);
                    }
                    add_slice(&mut grads[a.0], &da);
                }
                if needs(b) {
                    let mut db = vec![F::zero(); k * n];
                    if tb {
                        // store as n×k: Gᵀ · Aᴸ
                        F::gemm(n, m, k, g, true, val(a), ta, &mut db, false);
                    } else {
                        F::gemm(k, m, n, val(a), !ta, g, false, &mut db, false);
                    }
                    add_slice(&mut grads[b.0], &db);
                }
            }
            &Op::Add(a, b) => {
                if needs(a) {
                    add_slice(&mut grads[a.0], g);
                }
                if needs(b) {
                    add_slice(&mut grads[b.0], g);
                }
            }
            &Op::Sub(a, b) => {
                if needs(a) {
                    add_slice(&mut grads[a.0], g);
                }
                if needs(b) {
                    let neg: Vec<F> = g.iter().map(|&x| -x).collect();
                    add_slice(&mut grads[b.0], &neg);
                }
            }
            &Op::Mul(a, b) => {
                if needs(a) {
                    let d: Vec<F> = g.iter().zip(val(b)).map(|(&x, &y)| x * y).collect();
                    add_slice(&mut grads[a.0], &d);
                }
                if needs(b) {
                    let d: Vec<F> = g.iter().zip(val(a)).map(|(&x, &y)| x * y).collect();
                    add_slice(&mut grads[b.0], &d);
                }
            }
            &Op::AddRow { a, row } => {
                if needs(a) {
                    add_slice(&mut grads[a.0], g);
                }
                if needs(row) {
                    let c = val(row).len();
                    let mut d = vec![F::zero(); c];
                    for chunk in g.chunks(c) {
                        d.iter_mut().zip(chunk).for_each(|(x, &y)| *x = *x + y);
                    }
                    add_slice(&mut grads[row.0], &d);
                }
            }
            &Op::AddTiled { a, b } => {
                if needs(a) {
                    add_slice(&mut grads[a.0], g);
                }
                if needs(b) {
                    let block = val(b).len();
                    let mut d = vec![F::zero(); block];
                    for chunk in g.chunks(block) {
                        d.iter_mut().zip(chunk).for_each(|(x, &y)| *x = *x + y);
                    }
                    add_slice(&mut grads[b.0], &d);
                }
            }
            &Op::Affine { a, scale } => {
                let d: Vec<F> = g.iter().map(|&x| x * scale).collect();
                add_slice(&mut grads[a.0], &d);
            }
            Op::MulConst { a, mask } => {
                let d: Vec<F> = g.iter().zip(mask).map(|(&x, &m)| x * m).collect();
                add_slice(&mut grads[a.0], &d);
            }
            Op::Blend { new, old, keep } => {
                let c = g.len() / keep.len();
                if needs(*new) {
                    let d: Vec<F> = g.iter().enumerate().map(|(j, &x)| x * keep[j / c]).collect();
                    add_slice(&mut grads[new.0], &d);
                }
                if needs(*old) {
                    let d: Vec<F> = g
                        .iter()
                        .enumerate()
                        .map(|(j, &x)| x * (F::one() - keep[j / c]))
                        .collect();
                    add_slice(&mut grads[old.0], &d);
                }
            }
            &Op::Tanh(a) => {
                let d: Vec<F> = g.iter().zip(out).map(|(&x, &y)| x * (F::one() - y * y)).collect();
                add_slice(&mut grads[a.0], &d);
            }
            &Op::Sigmoid(a) => {
                let d: Vec<F> = g.iter().zip(out).map(|(&x, &y)| x * y * (F::one() - y)).collect();
                add_slice(&mut grads[a.0], &d);
            }
            &Op::Softmax(a) => {
                let (_, c) = rc(a);
                let mut d = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(c).zip(out.chunks(c)) {
                    let dot: F = gr.iter().zip(yr).map(|(&x, &y)| x * y).sum();
                    d.extend(gr.iter().zip(yr).map(|(&x, &y)| y * (x - dot)));
                }
                add_slice(&mut grads[a.0], &d);
            }
            &Op::LogSoftmax(a) => {
                let (_, c) = rc(a);
                let mut d = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(c).zip(out.chunks(c)) {
                    let s: F = gr.iter().copied().sum();
                    d.extend(gr.iter().zip(yr).map(|(&x, &y)| x - y.exp() * s));
                }
                add_slice(&mut grads[a.0], &d);
            }
            &Op::SumAll(a) => {
                let n = val(a).len();
                add_into(&mut grads[a.0], (0..n).map(|j| (j, g[0])), n);
            }
            &Op::Mean { a, axis } => {
                let (r, c) = rc(a);
                let mut d = vec![F::zero(); r * c];
                if axis == 0 {
                    let n = F::from_usize(r).expect("rows");
                    for (j, x) in d.iter_mut().enumerate() {
                        *x = g[j % c] / n;
                    }
                } else {
                    let n = F::from_usize(c).expect("cols");
                    for (j, x) in d.iter_mut().enumerate() {
                        *x = g[j / c] / n;
                    }
                }
                add_slice(&mut grads[a.0], &d);
            }
            Op::ConcatCols(parts) => {
                let total: usize = parts.iter().map(|&p| rc(p).1).sum();
                let mut off = 0;
                for &p in parts {
                    let (r, c) = rc(p);
                    if needs(p) {
                        let d: Vec<F> = (0..r).flat_map(|i| g[i * total + off..i * total + off + c].iter().copied()).collect();
                        add_slice(&mut grads[p.0], &d);
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    if needs(p) {
                        add_slice(&mut grads[p.0], &g[off..off + n]);
                    }
                    off += n;
                }
            }
            &Op::SliceCols { a, start } => {
                let (r, c) = rc(a);
                let len = g.len() / r;
                add_into(
                    &mut grads[a.0],
                    (0..r).flat_map(|i| (0..len).map(move |j| (i * c + start + j, g[i * len + j]))),
                    r * c,
                );
            }
            &Op::SliceRows { a, start } => {
                let (r, c) = rc(a);
                add_into(&mut grads[a.0], g.iter().enumerate().map(|(j, &x)| (start * c + j, x)), r * c);
            }
            Op::Gather { a, rows } => {
                let (r, c) = rc(*a);
                add_into(
                    &mut grads[a.0],
                    rows.iter().enumerate().flat_map(|(k, &src)| (0..c).map(move |j| (src * c + j, g[k * c + j]))),
                    r * c,
                );
            }
            &Op::Reshape(a) => add_slice(&mut grads[a.0], g),
            &Op::Transpose(a) => {
                let (r, c) = rc(a);
                let mut d = vec![F::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] = g[j * r + i];
                    }
                }
                add_slice(&mut grads[a.0], &d);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (_, c) = rc(*x);
                let gv = val(*gain);
                if needs(*gain) {
                    let mut d = vec![F::zero(); c];
                    for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                        d.iter_mut().zip(gr.iter().zip(hr)).for_each(|(o, (&a, &h))| *o = *o + a * h);
                    }
                    add_slice(&mut grads[gain.0], &d);
                }
                if needs(*bias) {
                    let mut d = vec![F::zero(); c];
                    for gr in g.chunks(c) {
                        d.iter_mut().zip(gr).for_each(|(o, &a)| *o = *o + a);
                    }
                    add_slice(&mut grads[bias.0], &d);
                }
                if needs(*x) {
                    let n = F::from_usize(c).expect("dim");
                    let mut d = Vec::with_capacity(g.len());
                    for ((gr, hr), &is) in g.chunks(c).zip(xhat.chunks(c)).zip(inv_std) {
                        let dh: Vec<F> = gr.iter().zip(gv).map(|(&a, &w)| a * w).collect();
                        let m1 = dh.iter().copied().sum::<F>() / n;
                        let m2 = dh.iter().zip(hr).map(|(&a, &h)| a * h).sum::<F>() / n;
                        d.extend(dh.iter().zip(hr).map(|(&a, &h)| is * (a - m1 - h * m2)));
                    }
                    add_slice(&mut grads[x.0], &d);
                }
            }
            &Op::WeightedTimeSum { alpha, ann } => {
                let (b, s) = rc(alpha);
                let (_, d) = rc(ann);
                let (av, nv) = (val(alpha), val(ann));
                if needs(alpha) {
                    let mut da = vec![F::zero(); b * s];
                    for bi in 0..b {
                        let gr = &g[bi * d..(bi + 1) * d];
                        for si in 0..s {
                            let row = &nv[(si * b + bi) * d..(si * b + bi + 1) * d];
                            da[bi * s + si] = gr.iter().zip(row).map(|(&x, &y)| x * y).sum();
                        }
                    }
                    add_slice(&mut grads[alpha.0], &da);
                }
                if needs(ann) {
                    let mut dn = vec![F::zero(); s * b * d];
                    for bi in 0..b {
                        let gr = &g[bi * d..(bi + 1) * d];
                        for si in 0..s {
                            let w = av[bi * s + si];
                            dn[(si * b + bi) * d..(si * b + bi + 1) * d]
                                .iter_mut()
                                .zip(gr)
                                .for_each(|(o, &x)| *o = w * x);
                        }
                    }
                    add_slice(&mut grads[ann.0], &dn);
                }
            }
            Op::TimeMean { ann, weights } => {
                let (ar, d) = rc(*ann);
                let b = g.len() / d;
                let s = ar / b;
                let mut dn = vec![F::zero(); ar * d];
                for bi in 0..b {
                    for si in 0..s {
                        let w = weights[bi * s + si];
                        dn[(si * b + bi) * d..(si * b + bi + 1) * d]
                            .iter_mut()
                            .zip(&g[bi * d..(bi + 1) * d])
                            .for_each(|(o, &x)| *o = w * x);
                    }
                }
                add_slice(&mut grads[ann.0], &dn);
            }
            Op::CrossEntropy { logits, targets, weights, probs } => {
                let (r, c) = rc(*logits);
                let mut d = vec![F::zero(); r * c];
                for bi in 0..r {
                    let w = weights[bi];
                    if w == F::zero() {
                        continue;
                    }
                    for j in 0..c {
                        d[bi * c + j] = g[0] * w * probs[bi * c + j];
                    }
                    let t = bi * c + targets[bi] as usize;
                    d[t] = d[t] - g[0] * w;
                }
                add_slice(&mut grads[logits.0], &d);
            }
        }
    }
}
