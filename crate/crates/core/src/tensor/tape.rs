//! Append-only record of tensor operations for reverse-mode differentiation.
//!
//! Every operation evaluates eagerly, stores its output on the tape and returns
//! a [`Var`] handle. [`Tape::backward`] walks the record from the loss back to
//! the leaves, so a forward pass written as ordinary code is differentiable as
//! long as it only uses tape operations.

use alloc::vec::Vec;

use super::{matmul_nt_acc, matmul_tn_acc, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Norms below this are treated as zero by [`Tape::l2_normalize_rows`].
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ColSlice(Var, usize),
    Gather(Vec<(Var, usize)>),
    SegmentSum(Var, Vec<Vec<usize>>),
    SegmentMean(Var, Vec<Vec<usize>>),
    Sum(Var),
    Mean(Var),
    L2NormalizeRows(Var, Vec<f64>),
    SoftmaxRows(Var),
    LayerNormRows(Var, Vec<f64>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
        scale: f64,
    },
    SegmentAttention {
        q: Var,
        k: Var,
        v: Var,
        lists: Vec<Vec<usize>>,
        weights: Vec<Vec<f64>>,
        scale: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape. Single-threaded; build one per forward/backward pair.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears the record so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(
        &mut self,
        op: &'static str,
        value: Tensor,
        kind: Op,
        inputs: &[Var],
    ) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: kind,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a value that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a value whose gradient is wanted (parameters, inputs under test).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = av.matmul(bv)?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(op, av, bv));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor {
            rows: av.rows,
            cols: av.cols,
            data,
        })
    }

    fn zip_row(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rows != 1 || bv.cols != av.cols {
            return Err(mismatch(op, av, bv));
        }
        let mut out = av.clone();
        for r in 0..out.rows {
            for (o, &y) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o = f(*o, y);
            }
        }
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    /// Adds the `1 × n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_row("add_row", a, b, |x, y| x + y)?;
        self.push("add_row", out, Op::AddRow(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Multiplies every row of `a` elementwise by the `1 × n` row `b`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_row("mul_row", a, b, |x, y| x * y)?;
        self.push("mul_row", out, Op::MulRow(a, b), &[a, b])
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push("affine", out, Op::Affine(a, scale), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push("relu", out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(libm::tanh);
        self.push("tanh", out, Op::Tanh(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(libm::log);
        self.push("log", out, Op::Log(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).transpose();
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: (rows, cols),
                    rhs: v.shape(),
                });
            }
            cols += v.cols;
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Columns `start .. start + len` of `a`.
    pub fn col_slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let av = self.value(a);
        if start + len > av.cols {
            return Err(TensorError::ShapeMismatch {
                op: "col_slice",
                lhs: av.shape(),
                rhs: (start, len),
            });
        }
        let mut out = Tensor::zeros(av.rows, len);
        for r in 0..av.rows {
            out.row_mut(r)
                .copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push("col_slice", out, Op::ColSlice(a, start), &[a])
    }

    /// Row `i` of the output is row `sources[i].1` of `sources[i].0`.
    /// `cols` fixes the width when `sources` is empty.
    pub fn gather(&mut self, sources: &[(Var, usize)], cols: usize) -> Result<Var, TensorError> {
        let mut out = Tensor::zeros(sources.len(), cols);
        let mut inputs: Vec<Var> = Vec::new();
        for (i, &(v, r)) in sources.iter().enumerate() {
            let src = self.value(v);
            if src.cols != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "gather",
                    lhs: (sources.len(), cols),
                    rhs: src.shape(),
                });
            }
            if r >= src.rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather",
                    index: r,
                    len: src.rows,
                });
            }
            out.row_mut(i).copy_from_slice(src.row(r));
            if !inputs.contains(&v) {
                inputs.push(v);
            }
        }
        self.push("gather", out, Op::Gather(sources.to_vec()), &inputs)
    }

    /// Selects rows of a single source.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let sources: Vec<(Var, usize)> = rows.iter().map(|&r| (a, r)).collect();
        let cols = self.shape(a).1;
        self.gather(&sources, cols)
    }

    fn segment_reduce(
        &self,
        op: &'static str,
        a: Var,
        segments: &[Vec<usize>],
        mean: bool,
    ) -> Result<Tensor, TensorError> {
        let av = self.value(a);
        let mut out = Tensor::zeros(segments.len(), av.cols);
        for (i, seg) in segments.iter().enumerate() {
            for &j in seg {
                if j >= av.rows {
                    return Err(TensorError::IndexOutOfRange {
                        op,
                        index: j,
                        len: av.rows,
                    });
                }
                for (o, &x) in out.row_mut(i).iter_mut().zip(av.row(j)) {
                    *o += x;
                }
            }
            if mean && !seg.is_empty() {
                let inv = 1.0 / seg.len() as f64;
                out.row_mut(i).iter_mut().for_each(|o| *o *= inv);
            }
        }
        Ok(out)
    }

    /// Row `i` is the sum of the rows of `a` listed in `segments[i]`.
    pub fn segment_sum(&mut self, a: Var, segments: Vec<Vec<usize>>) -> Result<Var, TensorError> {
        let out = self.segment_reduce("segment_sum", a, &segments, false)?;
        self.push("segment_sum", out, Op::SegmentSum(a, segments), &[a])
    }

    /// Row `i` is the mean of the rows of `a` listed in `segments[i]`; the mean
    /// of an empty segment is the zero row.
    pub fn segment_mean(&mut self, a: Var, segments: Vec<Vec<usize>>) -> Result<Var, TensorError> {
        let out = self.segment_reduce("segment_mean", a, &segments, true)?;
        self.push("segment_mean", out, Op::SegmentMean(a, segments), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push("sum", out, Op::Sum(a), &[a])
    }

    /// Mean of all entries; the mean of an empty tensor is 0.
    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        let n = av.data().len();
        let m = if n == 0 {
            0.0
        } else {
            av.data().iter().sum::<f64>() / n as f64
        };
        self.push("mean", Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// Divides each row by its L2 norm; rows with norm below [`NORM_EPS`]
    /// map to zero with zero gradient.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let mut out = self.value(a).clone();
        let mut norms = Vec::with_capacity(out.rows);
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let n = libm::sqrt(row.iter().map(|x| x * x).sum());
            if n >= NORM_EPS {
                row.iter_mut().for_each(|x| *x /= n);
            } else {
                row.iter_mut().for_each(|x| *x = 0.0);
            }
            norms.push(n);
        }
        self.push("l2_normalize", out, Op::L2NormalizeRows(a, norms), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        self.push("softmax", out, Op::SoftmaxRows(a), &[a])
    }

    /// Normalizes each row to zero mean and unit (biased) variance.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Result<Var, TensorError> {
        let mut out = self.value(a).clone();
        let mut inv_std = Vec::with_capacity(out.rows);
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
            let inv = 1.0 / libm::sqrt(var + eps);
            row.iter_mut().for_each(|x| *x = (*x - mu) * inv);
            inv_std.push(inv);
        }
        self.push("layer_norm", out, Op::LayerNormRows(a, inv_std), &[a])
    }

    /// Cross-entropy of row-wise softmax against integer targets, computed with
    /// max subtraction.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        reduction: Reduction,
    ) -> Result<Var, TensorError> {
        let lv = self.value(logits);
        if lv.rows != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: lv.shape(),
                rhs: (targets.len(), 1),
            });
        }
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= lv.cols {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    len: lv.cols,
                });
            }
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = libm::log(row.iter().map(|x| libm::exp(x - max)).sum::<f64>()) + max;
            loss += lse - row[t];
            softmax_in_place(probs.row_mut(r));
        }
        let scale = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean if targets.is_empty() => 0.0,
            Reduction::Mean => 1.0 / targets.len() as f64,
        };
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
            scale,
        };
        self.push("cross_entropy", Tensor::scalar(loss * scale), op, &[logits])
    }

    /// Scaled dot-product attention where query row `i` attends over the rows
    /// of `k`/`v` listed in `lists[i]`. An empty list yields a zero row.
    pub fn segment_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        lists: Vec<Vec<usize>>,
        scale: f64,
    ) -> Result<Var, TensorError> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.cols != kv.cols || kv.rows != vv.rows || qv.rows != lists.len() {
            return Err(mismatch("segment_attention", qv, kv));
        }
        let mut out = Tensor::zeros(qv.rows, vv.cols);
        let mut weights = Vec::with_capacity(lists.len());
        for (i, list) in lists.iter().enumerate() {
            let mut w: Vec<f64> = Vec::with_capacity(list.len());
            for &j in list {
                if j >= kv.rows {
                    return Err(TensorError::IndexOutOfRange {
                        op: "segment_attention",
                        index: j,
                        len: kv.rows,
                    });
                }
                let dot: f64 = qv.row(i).iter().zip(kv.row(j)).map(|(a, b)| a * b).sum();
                w.push(scale * dot);
            }
            if !w.is_empty() {
                softmax_in_place(&mut w);
            }
            for (&j, &a) in list.iter().zip(&w) {
                for (o, &x) in out.row_mut(i).iter_mut().zip(vv.row(j)) {
                    *o += a * x;
                }
            }
            weights.push(w);
        }
        let op = Op::SegmentAttention {
            q,
            k,
            v,
            lists,
            weights,
            scale,
        };
        self.push("segment_attention", out, op, &[q, k, v])
    }

    /// Propagates gradients from the scalar `loss` to every node that
    /// requires them.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| if n.requires_grad { g } else { None })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b);
                    let da = slot(grads, *a, self.shape(*a));
                    matmul_nt_acc(g, bv, da);
                }
                if self.wants(*b) {
                    let av = self.value(*a);
                    let db = slot(grads, *b, self.shape(*b));
                    matmul_tn_acc(av, g, db);
                }
            }
            Op::Add(a, b) => {
                self.acc_map(grads, *a, g, |x, _| x);
                self.acc_map(grads, *b, g, |x, _| x);
            }
            Op::Sub(a, b) => {
                self.acc_map(grads, *a, g, |x, _| x);
                self.acc_map(grads, *b, g, |x, _| -x);
            }
            Op::AddRow(a, b) => {
                self.acc_map(grads, *a, g, |x, _| x);
                if self.wants(*b) {
                    let db = slot(grads, *b, self.shape(*b));
                    for r in 0..g.rows {
                        for (d, &x) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b);
                    let da = slot(grads, *a, self.shape(*a));
                    for ((d, &x), &w) in da.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *d += x * w;
                    }
                }
                if self.wants(*b) {
                    let av = self.value(*a);
                    let db = slot(grads, *b, self.shape(*b));
                    for ((d, &x), &w) in db.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *d += x * w;
                    }
                }
            }
            Op::MulRow(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let da = slot(grads, *a, av.shape());
                    for r in 0..g.rows {
                        for ((d, &x), &w) in da.row_mut(r).iter_mut().zip(g.row(r)).zip(bv.data()) {
                            *d += x * w;
                        }
                    }
                }
                if self.wants(*b) {
                    let db = slot(grads, *b, bv.shape());
                    for r in 0..g.rows {
                        for ((d, &x), &w) in db.data_mut().iter_mut().zip(g.row(r)).zip(av.row(r)) {
                            *d += x * w;
                        }
                    }
                }
            }
            Op::Affine(a, s) => self.acc_map(grads, *a, g, |x, _| s * x),
            Op::Relu(a) => {
                let av = self.value(*a);
                self.acc_zip(grads, *a, g, av, |x, inp| if inp > 0.0 { x } else { 0.0 });
            }
            Op::Sigmoid(a) => self.acc_zip(grads, *a, g, y, |x, s| x * s * (1.0 - s)),
            Op::Tanh(a) => self.acc_zip(grads, *a, g, y, |x, t| x * (1.0 - t * t)),
            Op::Log(a) => {
                let av = self.value(*a);
                self.acc_zip(grads, *a, g, av, |x, inp| x / inp);
            }
            Op::Transpose(a) => {
                if self.wants(*a) {
                    slot(grads, *a, self.shape(*a)).add_assign(&g.transpose());
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    if self.wants(p) {
                        let dp = slot(grads, p, (rows, cols));
                        for r in 0..rows {
                            for (d, &x) in dp
                                .row_mut(r)
                                .iter_mut()
                                .zip(&g.row(r)[offset..offset + cols])
                            {
                                *d += x;
                            }
                        }
                    }
                    offset += cols;
                }
            }
            Op::ColSlice(a, start) => {
                if self.wants(*a) {
                    let da = slot(grads, *a, self.shape(*a));
                    for r in 0..g.rows {
                        for (d, &x) in da.row_mut(r)[*start..*start + g.cols]
                            .iter_mut()
                            .zip(g.row(r))
                        {
                            *d += x;
                        }
                    }
                }
            }
            Op::Gather(sources) => {
                for (i, &(v, r)) in sources.iter().enumerate() {
                    if self.wants(v) {
                        let dv = slot(grads, v, self.shape(v));
                        for (d, &x) in dv.row_mut(r).iter_mut().zip(g.row(i)) {
                            *d += x;
                        }
                    }
                }
            }
            Op::SegmentSum(a, segs) | Op::SegmentMean(a, segs) => {
                if self.wants(*a) {
                    let mean = matches!(node.op, Op::SegmentMean(..));
                    let da = slot(grads, *a, self.shape(*a));
                    for (i, seg) in segs.iter().enumerate() {
                        let w = if mean { 1.0 / seg.len() as f64 } else { 1.0 };
                        for &j in seg {
                            for (d, &x) in da.row_mut(j).iter_mut().zip(g.row(i)) {
                                *d += w * x;
                            }
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let gv = g.get(0, 0);
                self.acc_map(grads, *a, &Tensor::zeros(0, 0), move |_, _| gv);
            }
            Op::Mean(a) => {
                let n = self.value(*a).data().len().max(1) as f64;
                let gv = g.get(0, 0) / n;
                self.acc_map(grads, *a, &Tensor::zeros(0, 0), move |_, _| gv);
            }
            Op::L2NormalizeRows(a, norms) => {
                if self.wants(*a) {
                    let da = slot(grads, *a, self.shape(*a));
                    for (r, &n) in norms.iter().enumerate() {
                        if n < NORM_EPS {
                            continue;
                        }
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, &gy), &yy) in da.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *d += (gy - yy * dot) / n;
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if self.wants(*a) {
                    let da = slot(grads, *a, self.shape(*a));
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, &gy), &yy) in da.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *d += yy * (gy - dot);
                        }
                    }
                }
            }
            Op::LayerNormRows(a, inv_std) => {
                if self.wants(*a) {
                    let da = slot(grads, *a, self.shape(*a));
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let (xh, gr) = (y.row(r), g.row(r));
                        let n = gr.len() as f64;
                        let gsum: f64 = gr.iter().sum();
                        let gx: f64 = gr.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for ((d, &gy), &xx) in da.row_mut(r).iter_mut().zip(gr).zip(xh) {
                            *d += inv / n * (n * gy - gsum - xx * gx);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                scale,
            } => {
                if self.wants(*logits) {
                    let k = g.get(0, 0) * scale;
                    let dl = slot(grads, *logits, probs.shape());
                    for (r, &t) in targets.iter().enumerate() {
                        for (c, (d, &p)) in dl.row_mut(r).iter_mut().zip(probs.row(r)).enumerate() {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            *d += k * (p - onehot);
                        }
                    }
                }
            }
            Op::SegmentAttention {
                q,
                k,
                v,
                lists,
                weights,
                scale,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut dq = Tensor::zeros(qv.rows, qv.cols);
                let mut dk = Tensor::zeros(kv.rows, kv.cols);
                let mut dv = Tensor::zeros(vv.rows, vv.cols);
                for (i, (list, w)) in lists.iter().zip(weights).enumerate() {
                    let gi = g.row(i);
                    let dw: Vec<f64> = list
                        .iter()
                        .map(|&j| gi.iter().zip(vv.row(j)).map(|(a, b)| a * b).sum())
                        .collect();
                    let mix: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
                    for ((&j, &a), &daj) in list.iter().zip(w).zip(&dw) {
                        for (d, &x) in dv.row_mut(j).iter_mut().zip(gi) {
                            *d += a * x;
                        }
                        let ds = a * (daj - mix) * scale;
                        for (d, &x) in dq.row_mut(i).iter_mut().zip(kv.row(j)) {
                            *d += ds * x;
                        }
                        for (d, &x) in dk.row_mut(j).iter_mut().zip(qv.row(i)) {
                            *d += ds * x;
                        }
                    }
                }
                for (var, d) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if self.wants(var) {
                        slot(grads, var, d.shape()).add_assign(&d);
                    }
                }
            }
        }
    }

    /// `grad[a] += f(g, _)` elementwise; an empty `g` means "use `f` alone".
    fn acc_map(
        &self,
        grads: &mut [Option<Tensor>],
        a: Var,
        g: &Tensor,
        f: impl Fn(f64, f64) -> f64,
    ) {
        if !self.wants(a) {
            return;
        }
        let d = slot(grads, a, self.shape(a));
        if g.data().is_empty() {
            d.data_mut().iter_mut().for_each(|x| *x += f(0.0, 0.0));
        } else {
            for (x, &gv) in d.data_mut().iter_mut().zip(g.data()) {
                *x += f(gv, 0.0);
            }
        }
    }

    /// `grad[a] += f(g, other)` elementwise.
    fn acc_zip(
        &self,
        grads: &mut [Option<Tensor>],
        a: Var,
        g: &Tensor,
        other: &Tensor,
        f: impl Fn(f64, f64) -> f64,
    ) {
        if !self.wants(a) {
            return;
        }
        let d = slot(grads, a, self.shape(a));
        for ((x, &gv), &o) in d.data_mut().iter_mut().zip(g.data()).zip(other.data()) {
            *x += f(gv, o);
        }
    }
}

fn slot(grads: &mut [Option<Tensor>], v: Var, shape: (usize, usize)) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}
