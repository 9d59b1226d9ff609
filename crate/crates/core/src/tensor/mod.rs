//! Dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Values live on a [`Tape`]: every forward operation appends a node holding
//! the result and enough context to run its backward rule. Calling
//! [`Tape::backward`] on a scalar loss walks the tape once in reverse and
//! accumulates gradients into every node's `grad` slot.
//!
//! The op set is deliberately small: matrix product, elementwise arithmetic
//! and activations, concatenation, row gather/scatter, segment reductions,
//! batch normalization and a fused softmax cross-entropy. Everything a graph
//! network needs, nothing more. All storage is row-major `f64`.

mod params;

pub use params::{BnBuffers, BnId, BnState, Forward, Init, Param, ParamId, ParamSet};

use thiserror::Error;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(pub usize);

/// Forward/eval switch. Affects batch normalization only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    DataLength {
        op: &'static str,
        len: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: id {index} out of range (limit {limit})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("{op}: expected a scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    #[error("{op}: empty input list")]
    EmptyInput { op: &'static str },
    #[error("batch_norm: empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// A dense value on the tape: shape, row-major data and an optional gradient
/// of the same length, filled in by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => (self.numel(), 1),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: ValueId, b: ValueId },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    Max2 { a: ValueId, b: ValueId },
    Relu { x: ValueId },
    Sigmoid { x: ValueId },
    Tanh { x: ValueId },
    Scale { x: ValueId, c: f64 },
    RowScale { x: ValueId, factors: Vec<f64> },
    Concat { inputs: Vec<ValueId>, axis: usize },
    GatherRows { x: ValueId, ids: Vec<usize> },
    ScatterAddRows { src: ValueId, dst: Vec<usize> },
    SegmentMaxRows { src: ValueId, argmax: Vec<Option<usize>> },
    RowwiseDotHeads { a: ValueId, b: ValueId, heads: usize },
    SegmentSoftmax { scores: ValueId, seg: Vec<usize> },
    MulHeadScale { v: ValueId, alpha: ValueId, heads: usize },
    BatchNorm {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    SumAll { x: ValueId },
    CrossEntropy { logits: ValueId, labels: Vec<usize> },
}

/// Recorded forward computation. Nodes are appended in execution order, so
/// every operation's inputs precede it and a single reverse sweep suffices
/// for backpropagation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    ops: Vec<Op>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

// a[m×n] · b[k×n]ᵀ -> [m×k]
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            c[i * k + p] = s;
        }
    }
    c
}

// a[m×k]ᵀ · b[m×n] -> [k×n]
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn add_into(target: &mut Option<Vec<f64>>, len: usize, src: impl Fn(&mut [f64])) {
    let buf = target.get_or_insert_with(|| vec![0.0; len]);
    src(buf);
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0]
    }

    pub fn data(&self, id: ValueId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: ValueId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> ValueId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        });
        self.ops.push(op);
        ValueId(self.nodes.len() - 1)
    }

    /// Record an input value. Gradients accumulate into every leaf during
    /// backward; `requires_grad` marks the ones callers intend to train.
    pub fn leaf(&mut self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<ValueId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::DataLength {
                op: "leaf",
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        let id = self.push(shape.to_vec(), data, Op::Leaf);
        self.nodes[id.0].requires_grad = requires_grad;
        Ok(id)
    }

    pub fn constant(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<ValueId> {
        self.leaf(data, shape, false)
    }

    pub fn scalar(&mut self, v: f64) -> ValueId {
        self.push(vec![1], vec![v], Op::Leaf)
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        Ok(self.push(vec![m, n], data, Op::MatMul { a, b }))
    }

    /// Validates binary elementwise shapes. Returns the broadcast length of
    /// `b`'s row when `b` is a vector broadcast over `a`'s rows, else None.
    fn binary_shape(&self, op: &'static str, a: ValueId, b: ValueId) -> Result<Option<usize>> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa == sb {
            return Ok(None);
        }
        let (_, cols) = self.nodes[a.0].rows_cols();
        let b_is_row = matches!(sb.len(), 1 if sb[0] == cols)
            || matches!(sb.len(), 2 if sb[0] == 1 && sb[1] == cols);
        if sa.len() == 2 && b_is_row {
            return Ok(Some(cols));
        }
        Err(TensorError::ShapeMismatch {
            op,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })
    }

    fn elementwise_binary(
        &mut self,
        op_name: &'static str,
        a: ValueId,
        b: ValueId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<ValueId> {
        let broadcast = self.binary_shape(op_name, a, b)?;
        let av = &self.nodes[a.0];
        let bv = &self.nodes[b.0];
        let data: Vec<f64> = match broadcast {
            None => av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect(),
            Some(cols) => av
                .data
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bv.data[i % cols]))
                .collect(),
        };
        let shape = av.shape.clone();
        Ok(self.push(shape, data, op))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.elementwise_binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.elementwise_binary("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.elementwise_binary("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    /// Elementwise maximum of two equal-shaped tensors. Ties route the
    /// gradient to `a`.
    pub fn max2(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: "max2",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        self.elementwise_binary("max2", a, b, |x, y| if x >= y { x } else { y }, Op::Max2 { a, b })
    }

    fn unary(&mut self, x: ValueId, f: impl Fn(f64) -> f64, op: Op) -> ValueId {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| f(v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(shape, data, op)
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: ValueId) -> ValueId {
        self.unary(x, f64::tanh, Op::Tanh { x })
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> ValueId {
        self.unary(x, |v| v * c, Op::Scale { x, c })
    }

    /// Multiplies row `r` of a matrix by `factors[r]`. Factors are constants,
    /// not differentiated through.
    pub fn row_scale(&mut self, x: ValueId, factors: Vec<f64>) -> Result<ValueId> {
        let xv = &self.nodes[x.0];
        let (rows, cols) = xv.rows_cols();
        if factors.len() != rows {
            return Err(TensorError::DataLength {
                op: "row_scale",
                len: factors.len(),
                shape: xv.shape.clone(),
            });
        }
        let mut data = xv.data.clone();
        for r in 0..rows {
            for v in &mut data[r * cols..(r + 1) * cols] {
                *v *= factors[r];
            }
        }
        let shape = xv.shape.clone();
        Ok(self.push(shape, data, Op::RowScale { x, factors }))
    }

    /// Concatenates 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[ValueId], axis: usize) -> Result<ValueId> {
        if inputs.is_empty() {
            return Err(TensorError::EmptyInput { op: "concat" });
        }
        if inputs.len() == 1 {
            // Identity case: still record a node so gradients slice back.
            let xv = &self.nodes[inputs[0].0];
            let (shape, data) = (xv.shape.clone(), xv.data.clone());
            return Ok(self.push(shape, data, Op::Concat { inputs: inputs.to_vec(), axis }));
        }
        let first = self.nodes[inputs[0].0].shape.clone();
        if first.len() != 2 || axis > 1 {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first,
                rhs: vec![axis],
            });
        }
        for &id in &inputs[1..] {
            let s = &self.nodes[id.0].shape;
            if s.len() != 2 || s[1 - axis] != first[1 - axis] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.clone(),
                });
            }
        }
        let (rows, cols): (usize, usize);
        let mut data;
        if axis == 0 {
            rows = inputs.iter().map(|&id| self.nodes[id.0].shape[0]).sum();
            cols = first[1];
            data = Vec::with_capacity(rows * cols);
            for &id in inputs {
                data.extend_from_slice(&self.nodes[id.0].data);
            }
        } else {
            rows = first[0];
            cols = inputs.iter().map(|&id| self.nodes[id.0].shape[1]).sum();
            data = vec![0.0; rows * cols];
            let mut offset = 0;
            for &id in inputs {
                let w = self.nodes[id.0].shape[1];
                for r in 0..rows {
                    data[r * cols + offset..r * cols + offset + w]
                        .copy_from_slice(&self.nodes[id.0].data[r * w..(r + 1) * w]);
                }
                offset += w;
            }
        }
        Ok(self.push(vec![rows, cols], data, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    /// Row gather: output row `i` is `x[ids[i]]`. Backward scatter-adds into
    /// the source rows, which makes this double as an embedding lookup.
    pub fn gather_rows(&mut self, x: ValueId, ids: &[usize]) -> Result<ValueId> {
        let xv = &self.nodes[x.0];
        let (rows, cols) = xv.rows_cols();
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: id,
                    limit: rows,
                });
            }
        }
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            data.extend_from_slice(&xv.data[id * cols..(id + 1) * cols]);
        }
        Ok(self.push(
            vec![ids.len(), cols],
            data,
            Op::GatherRows { x, ids: ids.to_vec() },
        ))
    }

    /// Embedding lookup: gathers `table` rows by id.
    pub fn embedding_lookup(&mut self, table: ValueId, ids: &[usize]) -> Result<ValueId> {
        self.gather_rows(table, ids)
    }

    /// Adds row `i` of `src` into output row `dst[i]`; rows that receive no
    /// contribution stay zero. Accumulation follows `dst` order, so callers
    /// wanting reproducible sums pass edges in canonical order.
    pub fn scatter_add_rows(
        &mut self,
        src: ValueId,
        dst: &[usize],
        out_rows: usize,
    ) -> Result<ValueId> {
        let sv = &self.nodes[src.0];
        let (rows, cols) = sv.rows_cols();
        if dst.len() != rows {
            return Err(TensorError::DataLength {
                op: "scatter_add_rows",
                len: dst.len(),
                shape: sv.shape.clone(),
            });
        }
        for &d in dst {
            if d >= out_rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "scatter_add_rows",
                    index: d,
                    limit: out_rows,
                });
            }
        }
        let mut data = vec![0.0; out_rows * cols];
        for (i, &d) in dst.iter().enumerate() {
            let srow = &sv.data[i * cols..(i + 1) * cols];
            let orow = &mut data[d * cols..(d + 1) * cols];
            for (o, &s) in orow.iter_mut().zip(srow) {
                *o += s;
            }
        }
        Ok(self.push(
            vec![out_rows, cols],
            data,
            Op::ScatterAddRows { src, dst: dst.to_vec() },
        ))
    }

    /// Componentwise maximum of `src` rows grouped by `dst`; rows with no
    /// contribution are zero. Gradient flows to the winning entry only, with
    /// ties kept by the first contributor in `dst` order.
    pub fn segment_max_rows(
        &mut self,
        src: ValueId,
        dst: &[usize],
        out_rows: usize,
    ) -> Result<ValueId> {
        let sv = &self.nodes[src.0];
        let (rows, cols) = sv.rows_cols();
        if dst.len() != rows {
            return Err(TensorError::DataLength {
                op: "segment_max_rows",
                len: dst.len(),
                shape: sv.shape.clone(),
            });
        }
        for &d in dst {
            if d >= out_rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "segment_max_rows",
                    index: d,
                    limit: out_rows,
                });
            }
        }
        let mut data = vec![f64::NEG_INFINITY; out_rows * cols];
        let mut argmax: Vec<Option<usize>> = vec![None; out_rows * cols];
        for (i, &d) in dst.iter().enumerate() {
            for j in 0..cols {
                let v = sv.data[i * cols + j];
                let slot = d * cols + j;
                if v > data[slot] {
                    data[slot] = v;
                    argmax[slot] = Some(i);
                }
            }
        }
        for (v, am) in data.iter_mut().zip(&argmax) {
            if am.is_none() {
                *v = 0.0;
            }
        }
        Ok(self.push(vec![out_rows, cols], data, Op::SegmentMaxRows { src, argmax }))
    }

    /// Per-head dot product of matching rows: out[r][h] = a[r, hs] · b[r, hs]
    /// where hs is head h's column slice.
    pub fn rowwise_dot_heads(&mut self, a: ValueId, b: ValueId, heads: usize) -> Result<ValueId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa != sb || sa.len() != 2 || heads == 0 || sa[1] % heads != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "rowwise_dot_heads",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let (rows, cols) = (sa[0], sa[1]);
        let hd = cols / heads;
        let mut data = vec![0.0; rows * heads];
        for r in 0..rows {
            for h in 0..heads {
                let mut s = 0.0;
                for j in h * hd..(h + 1) * hd {
                    s += self.nodes[a.0].data[r * cols + j] * self.nodes[b.0].data[r * cols + j];
                }
                data[r * heads + h] = s;
            }
        }
        Ok(self.push(vec![rows, heads], data, Op::RowwiseDotHeads { a, b, heads }))
    }

    /// Softmax over contiguous segments of rows, independently per column.
    /// `seg` must be non-decreasing.
    pub fn segment_softmax(&mut self, scores: ValueId, seg: &[usize]) -> Result<ValueId> {
        let sv = &self.nodes[scores.0];
        let (rows, cols) = sv.rows_cols();
        if seg.len() != rows {
            return Err(TensorError::DataLength {
                op: "segment_softmax",
                len: seg.len(),
                shape: sv.shape.clone(),
            });
        }
        debug_assert!(seg.windows(2).all(|w| w[0] <= w[1]), "segments must be sorted");
        let mut data = vec![0.0; rows * cols];
        let mut start = 0;
        while start < rows {
            let mut end = start + 1;
            while end < rows && seg[end] == seg[start] {
                end += 1;
            }
            for j in 0..cols {
                let mut mx = f64::NEG_INFINITY;
                for r in start..end {
                    mx = mx.max(sv.data[r * cols + j]);
                }
                let mut denom = 0.0;
                for r in start..end {
                    let e = (sv.data[r * cols + j] - mx).exp();
                    data[r * cols + j] = e;
                    denom += e;
                }
                for r in start..end {
                    data[r * cols + j] /= denom;
                }
            }
            start = end;
        }
        let shape = sv.shape.clone();
        Ok(self.push(shape, data, Op::SegmentSoftmax { scores, seg: seg.to_vec() }))
    }

    /// Scales each head's column block of `v` by the matching column of
    /// `alpha`: out[r, hs] = v[r, hs] * alpha[r][h].
    pub fn mul_head_scale(&mut self, v: ValueId, alpha: ValueId, heads: usize) -> Result<ValueId> {
        let (sv, sa) = (&self.nodes[v.0].shape, &self.nodes[alpha.0].shape);
        let ok = sv.len() == 2
            && sa.len() == 2
            && sa[0] == sv[0]
            && sa[1] == heads
            && heads > 0
            && sv[1] % heads == 0;
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "mul_head_scale",
                lhs: sv.clone(),
                rhs: sa.clone(),
            });
        }
        let (rows, cols) = (sv[0], sv[1]);
        let hd = cols / heads;
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for h in 0..heads {
                let a = self.nodes[alpha.0].data[r * heads + h];
                for j in h * hd..(h + 1) * hd {
                    data[r * cols + j] = self.nodes[v.0].data[r * cols + j] * a;
                }
            }
        }
        Ok(self.push(vec![rows, cols], data, Op::MulHeadScale { v, alpha, heads }))
    }

    /// 1-D batch normalization over rows with learnable scale/shift.
    ///
    /// Train mode normalizes by the batch's population statistics and folds
    /// them into `state`'s running estimates (momentum 0.1); eval mode uses
    /// the running estimates.
    pub fn batch_norm(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        state: &mut BnState,
        mode: Mode,
    ) -> Result<ValueId> {
        let xv = &self.nodes[x.0];
        let (rows, cols) = xv.rows_cols();
        if rows == 0 {
            return Err(TensorError::EmptyBatch);
        }
        if self.nodes[gamma.0].numel() != cols || self.nodes[beta.0].numel() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                lhs: xv.shape.clone(),
                rhs: self.nodes[gamma.0].shape.clone(),
            });
        }
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; cols];
                for r in 0..rows {
                    for j in 0..cols {
                        mean[j] += xv.data[r * cols + j];
                    }
                }
                for m in &mut mean {
                    *m /= rows as f64;
                }
                let mut var = vec![0.0; cols];
                for r in 0..rows {
                    for j in 0..cols {
                        let d = xv.data[r * cols + j] - mean[j];
                        var[j] += d * d;
                    }
                }
                for v in &mut var {
                    *v /= rows as f64;
                }
                for j in 0..cols {
                    state.running_mean[j] =
                        (1.0 - BN_MOMENTUM) * state.running_mean[j] + BN_MOMENTUM * mean[j];
                    state.running_var[j] =
                        (1.0 - BN_MOMENTUM) * state.running_var[j] + BN_MOMENTUM * var[j];
                }
                (mean, var)
            }
            Mode::Eval => (state.running_mean.clone(), state.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for j in 0..cols {
                let xhat = (xv.data[r * cols + j] - mean[j]) * inv_std[j];
                data[r * cols + j] =
                    self.nodes[gamma.0].data[j] * xhat + self.nodes[beta.0].data[j];
            }
        }
        let shape = xv.shape.clone();
        Ok(self.push(
            shape,
            data,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train: mode == Mode::Train,
            },
        ))
    }

    pub fn sum_all(&mut self, x: ValueId) -> ValueId {
        let s: f64 = self.nodes[x.0].data.iter().sum();
        self.push(vec![1], vec![s], Op::SumAll { x })
    }

    /// Mean over rows of -log softmax(logits)[label], stabilized by
    /// max-subtraction.
    pub fn cross_entropy_logits(&mut self, logits: ValueId, labels: &[usize]) -> Result<ValueId> {
        let lv = &self.nodes[logits.0];
        let (rows, cols) = lv.rows_cols();
        if labels.len() != rows || rows == 0 {
            return Err(TensorError::DataLength {
                op: "cross_entropy_logits",
                len: labels.len(),
                shape: lv.shape.clone(),
            });
        }
        for &l in labels {
            if l >= cols {
                return Err(TensorError::LabelOutOfRange { label: l, classes: cols });
            }
        }
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &lv.data[r * cols..(r + 1) * cols];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln() + mx;
            total -= row[label] - lse;
        }
        total /= rows as f64;
        Ok(self.push(
            vec![1],
            vec![total],
            Op::CrossEntropy { logits, labels: labels.to_vec() },
        ))
    }

    /// Reverse sweep from a scalar loss. Every pass starts from cleared
    /// gradients; within a pass, fan-out accumulates (a parameter used
    /// twice collects both contributions).
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if self.nodes[loss.0].numel() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: self.nodes[loss.0].shape.clone(),
            });
        }
        self.zero_grads();
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..self.nodes.len()).rev() {
            let Some(grad) = self.nodes[i].grad.clone() else {
                continue;
            };
            let op = self.ops[i].clone();
            self.apply_backward(i, &grad, &op);
        }
        Ok(())
    }

    fn apply_backward(&mut self, out: usize, g: &[f64], op: &Op) {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = {
                    let s = &self.nodes[a.0].shape;
                    (s[0], s[1])
                };
                let n = self.nodes[b.0].shape[1];
                let da = matmul_nt(g, &self.nodes[b.0].data, m, n, k);
                let db = matmul_tn(&self.nodes[a.0].data, g, m, k, n);
                add_into(&mut self.nodes[a.0].grad, m * k, |buf| {
                    for (t, s) in buf.iter_mut().zip(&da) {
                        *t += s;
                    }
                });
                add_into(&mut self.nodes[b.0].grad, k * n, |buf| {
                    for (t, s) in buf.iter_mut().zip(&db) {
                        *t += s;
                    }
                });
            }
            Op::Add { a, b } | Op::Sub { a, b } => {
                let sign = if matches!(op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                let a_len = self.nodes[a.0].numel();
                add_into(&mut self.nodes[a.0].grad, a_len, |buf| {
                    for (t, s) in buf.iter_mut().zip(g) {
                        *t += s;
                    }
                });
                let b_len = self.nodes[b.0].numel();
                if b_len == g.len() {
                    add_into(&mut self.nodes[b.0].grad, b_len, |buf| {
                        for (t, s) in buf.iter_mut().zip(g) {
                            *t += sign * s;
                        }
                    });
                } else {
                    // b was broadcast over rows: reduce by column sum.
                    add_into(&mut self.nodes[b.0].grad, b_len, |buf| {
                        for (i, s) in g.iter().enumerate() {
                            buf[i % b_len] += sign * s;
                        }
                    });
                }
            }
            Op::Mul { a, b } => {
                let b_len = self.nodes[b.0].numel();
                let a_len = self.nodes[a.0].numel();
                let bd = self.nodes[b.0].data.clone();
                let ad = self.nodes[a.0].data.clone();
                add_into(&mut self.nodes[a.0].grad, a_len, |buf| {
                    for (i, s) in g.iter().enumerate() {
                        buf[i] += s * bd[if b_len == a_len { i } else { i % b_len }];
                    }
                });
                add_into(&mut self.nodes[b.0].grad, b_len, |buf| {
                    for (i, s) in g.iter().enumerate() {
                        buf[if b_len == a_len { i } else { i % b_len }] += s * ad[i];
                    }
                });
            }
            Op::Max2 { a, b } => {
                let ad = self.nodes[a.0].data.clone();
                let bd = self.nodes[b.0].data.clone();
                let len = ad.len();
                add_into(&mut self.nodes[a.0].grad, len, |buf| {
                    for i in 0..len {
                        if ad[i] >= bd[i] {
                            buf[i] += g[i];
                        }
                    }
                });
                add_into(&mut self.nodes[b.0].grad, len, |buf| {
                    for i in 0..len {
                        if ad[i] < bd[i] {
                            buf[i] += g[i];
                        }
                    }
                });
            }
            Op::Relu { x } => {
                let xd = self.nodes[x.0].data.clone();
                add_into(&mut self.nodes[x.0].grad, xd.len(), |buf| {
                    for (i, s) in g.iter().enumerate() {
                        if xd[i] > 0.0 {
                            buf[i] += s;
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let od = self.nodes[out].data.clone();
                add_into(&mut self.nodes[x.0].grad, od.len(), |buf| {
                    for (i, s) in g.iter().enumerate() {
                        buf[i] += s * od[i] * (1.0 - od[i]);
                    }
                });
            }
            Op::Tanh { x } => {
                let od = self.nodes[out].data.clone();
                add_into(&mut self.nodes[x.0].grad, od.len(), |buf| {
                    for (i, s) in g.iter().enumerate() {
                        buf[i] += s * (1.0 - od[i] * od[i]);
                    }
                });
            }
            Op::Scale { x, c } => {
                let len = self.nodes[x.0].numel();
                add_into(&mut self.nodes[x.0].grad, len, |buf| {
                    for (t, s) in buf.iter_mut().zip(g) {
                        *t += c * s;
                    }
                });
            }
            Op::RowScale { x, factors } => {
                let (rows, cols) = self.nodes[x.0].rows_cols();
                add_into(&mut self.nodes[x.0].grad, rows * cols, |buf| {
                    for r in 0..rows {
                        for j in 0..cols {
                            buf[r * cols + j] += g[r * cols + j] * factors[r];
                        }
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                if inputs.len() == 1 {
                    let len = self.nodes[inputs[0].0].numel();
                    add_into(&mut self.nodes[inputs[0].0].grad, len, |buf| {
                        for (t, s) in buf.iter_mut().zip(g) {
                            *t += s;
                        }
                    });
                } else if *axis == 0 {
                    let mut offset = 0;
                    for &inp in inputs {
                        let len = self.nodes[inp.0].numel();
                        add_into(&mut self.nodes[inp.0].grad, len, |buf| {
                            for (t, s) in buf.iter_mut().zip(&g[offset..offset + len]) {
                                *t += s;
                            }
                        });
                        offset += len;
                    }
                } else {
                    let rows = self.nodes[out].shape[0];
                    let total_cols = self.nodes[out].shape[1];
                    let mut offset = 0;
                    for &inp in inputs {
                        let w = self.nodes[inp.0].shape[1];
                        add_into(&mut self.nodes[inp.0].grad, rows * w, |buf| {
                            for r in 0..rows {
                                for j in 0..w {
                                    buf[r * w + j] += g[r * total_cols + offset + j];
                                }
                            }
                        });
                        offset += w;
                    }
                }
            }
            Op::GatherRows { x, ids } => {
                let (rows, cols) = self.nodes[x.0].rows_cols();
                add_into(&mut self.nodes[x.0].grad, rows * cols, |buf| {
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..cols {
                            buf[id * cols + j] += g[i * cols + j];
                        }
                    }
                });
            }
            Op::ScatterAddRows { src, dst } => {
                let (rows, cols) = self.nodes[src.0].rows_cols();
                add_into(&mut self.nodes[src.0].grad, rows * cols, |buf| {
                    for (i, &d) in dst.iter().enumerate() {
                        for j in 0..cols {
                            buf[i * cols + j] += g[d * cols + j];
                        }
                    }
                });
            }
            Op::SegmentMaxRows { src, argmax } => {
                let (rows, cols) = self.nodes[src.0].rows_cols();
                add_into(&mut self.nodes[src.0].grad, rows * cols, |buf| {
                    for (slot, am) in argmax.iter().enumerate() {
                        if let Some(i) = am {
                            buf[i * cols + slot % cols] += g[slot];
                        }
                    }
                });
            }
            Op::RowwiseDotHeads { a, b, heads } => {
                let (rows, cols) = self.nodes[a.0].rows_cols();
                let hd = cols / heads;
                let ad = self.nodes[a.0].data.clone();
                let bd = self.nodes[b.0].data.clone();
                add_into(&mut self.nodes[a.0].grad, rows * cols, |buf| {
                    for r in 0..rows {
                        for h in 0..*heads {
                            let gs = g[r * heads + h];
                            for j in h * hd..(h + 1) * hd {
                                buf[r * cols + j] += gs * bd[r * cols + j];
                            }
                        }
                    }
                });
                add_into(&mut self.nodes[b.0].grad, rows * cols, |buf| {
                    for r in 0..rows {
                        for h in 0..*heads {
                            let gs = g[r * heads + h];
                            for j in h * hd..(h + 1) * hd {
                                buf[r * cols + j] += gs * ad[r * cols + j];
                            }
                        }
                    }
                });
            }
            Op::SegmentSoftmax { scores, seg } => {
                let (rows, cols) = self.nodes[out].rows_cols();
                let od = self.nodes[out].data.clone();
                add_into(&mut self.nodes[scores.0].grad, rows * cols, |buf| {
                    let mut start = 0;
                    while start < rows {
                        let mut end = start + 1;
                        while end < rows && seg[end] == seg[start] {
                            end += 1;
                        }
                        for j in 0..cols {
                            let mut dot = 0.0;
                            for r in start..end {
                                dot += g[r * cols + j] * od[r * cols + j];
                            }
                            for r in start..end {
                                buf[r * cols + j] += od[r * cols + j] * (g[r * cols + j] - dot);
                            }
                        }
                        start = end;
                    }
                });
            }
            Op::MulHeadScale { v, alpha, heads } => {
                let (rows, cols) = self.nodes[v.0].rows_cols();
                let hd = cols / heads;
                let vd = self.nodes[v.0].data.clone();
                let ad = self.nodes[alpha.0].data.clone();
                add_into(&mut self.nodes[v.0].grad, rows * cols, |buf| {
                    for r in 0..rows {
                        for h in 0..*heads {
                            let a = ad[r * heads + h];
                            for j in h * hd..(h + 1) * hd {
                                buf[r * cols + j] += g[r * cols + j] * a;
                            }
                        }
                    }
                });
                add_into(&mut self.nodes[alpha.0].grad, rows * heads, |buf| {
                    for r in 0..rows {
                        for h in 0..*heads {
                            let mut s = 0.0;
                            for j in h * hd..(h + 1) * hd {
                                s += g[r * cols + j] * vd[r * cols + j];
                            }
                            buf[r * heads + h] += s;
                        }
                    }
                });
            }
            Op::BatchNorm { x, gamma, beta, mean, inv_std, train } => {
                let (rows, cols) = self.nodes[x.0].rows_cols();
                let xd = self.nodes[x.0].data.clone();
                let gd = self.nodes[gamma.0].data.clone();
                // xhat, and the per-column reductions the train-mode rule needs.
                let mut xhat = vec![0.0; rows * cols];
                for r in 0..rows {
                    for j in 0..cols {
                        xhat[r * cols + j] = (xd[r * cols + j] - mean[j]) * inv_std[j];
                    }
                }
                add_into(&mut self.nodes[gamma.0].grad, cols, |buf| {
                    for r in 0..rows {
                        for j in 0..cols {
                            buf[j] += g[r * cols + j] * xhat[r * cols + j];
                        }
                    }
                });
                add_into(&mut self.nodes[beta.0].grad, cols, |buf| {
                    for r in 0..rows {
                        for j in 0..cols {
                            buf[j] += g[r * cols + j];
                        }
                    }
                });
                if *train {
                    let n = rows as f64;
                    let mut sum_dy = vec![0.0; cols];
                    let mut sum_dy_xhat = vec![0.0; cols];
                    for r in 0..rows {
                        for j in 0..cols {
                            sum_dy[j] += g[r * cols + j];
                            sum_dy_xhat[j] += g[r * cols + j] * xhat[r * cols + j];
                        }
                    }
                    add_into(&mut self.nodes[x.0].grad, rows * cols, |buf| {
                        for r in 0..rows {
                            for j in 0..cols {
                                let dxhat = g[r * cols + j] * gd[j];
                                buf[r * cols + j] += inv_std[j]
                                    * (dxhat
                                        - gd[j] * sum_dy[j] / n
                                        - xhat[r * cols + j] * gd[j] * sum_dy_xhat[j] / n);
                            }
                        }
                    });
                } else {
                    add_into(&mut self.nodes[x.0].grad, rows * cols, |buf| {
                        for r in 0..rows {
                            for j in 0..cols {
                                buf[r * cols + j] += g[r * cols + j] * gd[j] * inv_std[j];
                            }
                        }
                    });
                }
            }
            Op::SumAll { x } => {
                let len = self.nodes[x.0].numel();
                add_into(&mut self.nodes[x.0].grad, len, |buf| {
                    for t in buf.iter_mut() {
                        *t += g[0];
                    }
                });
            }
            Op::CrossEntropy { logits, labels } => {
                let (rows, cols) = self.nodes[logits.0].rows_cols();
                let ld = self.nodes[logits.0].data.clone();
                add_into(&mut self.nodes[logits.0].grad, rows * cols, |buf| {
                    for (r, &label) in labels.iter().enumerate() {
                        let row = &ld[r * cols..(r + 1) * cols];
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|&v| (v - mx).exp()).sum();
                        for j in 0..cols {
                            let p = (row[j] - mx).exp() / denom;
                            let y = if j == label { 1.0 } else { 0.0 };
                            buf[r * cols + j] += g[0] * (p - y) / rows as f64;
                        }
                    }
                });
            }
        }
    }
}

/// Row-wise softmax of plain data, for eval-time score extraction.
pub fn softmax_rows(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - mx).exp();
            out[r * cols + j] = e;
            denom += e;
        }
        for j in 0..cols {
            out[r * cols + j] /= denom;
        }
    }
    out
}

#[cfg(test)]
mod tests;
