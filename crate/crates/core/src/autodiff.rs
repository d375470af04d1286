//! Dense reverse-mode differentiation over 2-D `f64` tensors.
//!
//! Every operation appends a node to a [`Tape`]; node order is creation
//! order, so the backward pass is a single reverse sweep. Values are plain
//! [`Matrix`] buffers and every produced value is checked for finiteness,
//! so a NaN surfaces as an error naming the operation that made it.
//!
//! ```
//! use specnet::autodiff::Tape;
//! use specnet::Matrix;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Matrix::scalar(3.0)).unwrap();
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap()[(0, 0)], 6.0);
//! ```

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::{Error, Matrix, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// Constant sparse matrix in compressed-row form, used for message passing
/// and pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = entries.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(Error::shape("sparse", format!("entry ({r},{c}) outside {rows}x{cols}")));
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `S · x`
    pub fn apply(&self, x: &Matrix) -> Matrix {
        let d = x.cols();
        let mut out = Matrix::zeros(self.rows, d);
        for r in 0..self.rows {
            let dst = r * d;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let (c, w) = (self.col_idx[k], self.values[k]);
                let src = x.row(c);
                let out_row = &mut out.data_mut()[dst..dst + d];
                for (o, s) in out_row.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        out
    }

    /// `Sᵀ · y`
    pub fn apply_transpose(&self, y: &Matrix) -> Matrix {
        let d = y.cols();
        let mut out = Matrix::zeros(self.cols, d);
        for r in 0..self.rows {
            let src = y.row(r).to_vec();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let (c, w) = (self.col_idx[k], self.values[k]);
                for (o, s) in out.row_mut(c).iter_mut().zip(&src) {
                    *o += w * s;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col_idx[k])] += self.values[k];
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Neg(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    SumAll(Var),
    MeanAll(Var),
    RowSum(Var),
    RowMean(Var),
    L2Normalize(Var, Vec<f64>),
    Concat(Vec<Var>),
    GatherRows(Var, Rc<[usize]>),
    LogSumExpRows(Var),
    SegmentLogSumExp(Var, Rc<[usize]>),
    SegmentMean(Var, Rc<[usize]>),
    Sparse(Rc<SparseMatrix>, Var),
    Dropout(Var, Rc<Matrix>),
    SoftmaxCrossEntropy(Var, Rc<[usize]>, Matrix),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar output, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

fn segment_bounds(offsets: &[usize], len: usize, op: &'static str) -> Result<()> {
    if offsets.first() != Some(&0) || offsets.last() != Some(&len) {
        return Err(Error::shape(op, format!("segment offsets must span 0..{len}")));
    }
    if offsets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::shape(op, "segments must be non-empty and increasing"));
    }
    Ok(())
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    /// Trainable leaf; receives a gradient.
    pub fn param(&mut self, value: Matrix) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::numerical("leaf", "non-finite value at creation"));
        }
        Ok(self.push_unchecked(value, Op::Leaf, requires_grad))
    }

    fn push_unchecked(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn push(&mut self, name: &'static str, value: Matrix, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::numerical(name, "produced a non-finite value"));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.index].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn check(&self, vars: &[Var], op: &'static str) -> Result<()> {
        for v in vars {
            if v.tape != self.id || v.index >= self.nodes.len() {
                return Err(Error::Contract(format!("{op}: operand is detached from this tape")));
            }
        }
        Ok(())
    }

    fn val(&self, v: Var) -> &Matrix {
        &self.nodes[v.index].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b], "matmul")?;
        let out = self.val(a).matmul(self.val(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b], "add")?;
        let out = self.val(a).add(self.val(b))?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b], "sub")?;
        let out = self.val(a).sub(self.val(b))?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// `x + 1·b` for a `1×m` row `b`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(&[x, bias], "add_bias")?;
        let (xv, bv) = (self.val(x), self.val(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape("add_bias", format!("{:?} + {:?}", xv.shape(), bv.shape())));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push("add_bias", out, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b], "mul")?;
        let out = self.val(a).zip_with(self.val(b), "mul", |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.check(&[a], "scale")?;
        let out = self.val(a).scale(s);
        self.push("scale", out, Op::Scale(a, s), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.check(&[a], "neg")?;
        let out = self.val(a).scale(-1.0);
        self.push("neg", out, Op::Neg(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(&[a], "relu")?;
        let out = self.val(a).map(|x| x.max(0.0));
        self.push("relu", out, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.check(&[a], "exp")?;
        let out = self.val(a).map(f64::exp);
        self.push("exp", out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.check(&[a], "log")?;
        let out = self.val(a).map(f64::ln);
        self.push("log", out, Op::Log(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(&[a], "sum")?;
        let out = Matrix::scalar(self.val(a).sum());
        self.push("sum", out, Op::SumAll(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(&[a], "mean")?;
        let v = self.val(a);
        let n = v.rows() * v.cols();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let out = Matrix::scalar(v.sum() / n as f64);
        self.push("mean", out, Op::MeanAll(a), &[a])
    }

    /// `n×m → n×1`
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        self.check(&[a], "row_sum")?;
        let v = self.val(a);
        let out = Matrix::from_fn(v.rows(), 1, |r, _| v.row(r).iter().sum());
        self.push("row_sum", out, Op::RowSum(a), &[a])
    }

    /// `n×m → n×1`
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        self.check(&[a], "row_mean")?;
        let v = self.val(a);
        if v.cols() == 0 {
            return Err(Error::shape("row_mean", "zero columns"));
        }
        let m = v.cols() as f64;
        let out = Matrix::from_fn(v.rows(), 1, |r, _| v.row(r).iter().sum::<f64>() / m);
        self.push("row_mean", out, Op::RowMean(a), &[a])
    }

    /// Scales every row to unit Euclidean norm; a zero row is an error.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        self.check(&[a], "l2_normalize")?;
        let v = self.val(a);
        let norms: Vec<f64> = (0..v.rows())
            .map(|r| v.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        if let Some(r) = norms.iter().position(|&n| n == 0.0 || !n.is_finite()) {
            return Err(Error::numerical("l2_normalize", format!("row {r} has zero norm")));
        }
        let out = Matrix::from_fn(v.rows(), v.cols(), |r, c| v[(r, c)] / norms[r]);
        self.push("l2_normalize", out, Op::L2Normalize(a, norms), &[a])
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.check(parts, "concat")?;
        let rows = parts
            .first()
            .map(|p| self.val(*p).rows())
            .ok_or_else(|| Error::shape("concat", "no operands"))?;
        if parts.iter().any(|p| self.val(*p).rows() != rows) {
            return Err(Error::shape("concat", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|p| self.val(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let src = self.val(*p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        self.push("concat", out, Op::Concat(parts.to_vec()), parts)
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        self.check(&[a], "gather_rows")?;
        let v = self.val(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v.rows()) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {}", v.rows())));
        }
        let mut out = Matrix::zeros(indices.len(), v.cols());
        for (k, &i) in indices.iter().enumerate() {
            out.row_mut(k).copy_from_slice(v.row(i));
        }
        self.push("gather_rows", out, Op::GatherRows(a, indices.into()), &[a])
    }

    /// Row-wise log-sum-exp, `n×m → n×1`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        self.check(&[a], "logsumexp")?;
        let v = self.val(a);
        if v.cols() == 0 {
            return Err(Error::shape("logsumexp", "zero columns"));
        }
        let out = Matrix::from_fn(v.rows(), 1, |r, _| logsumexp(v.row(r).iter().copied()));
        self.push("logsumexp", out, Op::LogSumExpRows(a), &[a])
    }

    /// Log-sum-exp over contiguous segments of a column vector.
    /// `offsets` has one more entry than there are segments.
    pub fn segment_logsumexp(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        self.check(&[a], "segment_logsumexp")?;
        let v = self.val(a);
        if v.cols() != 1 {
            return Err(Error::shape("segment_logsumexp", "expects a column vector"));
        }
        segment_bounds(offsets, v.rows(), "segment_logsumexp")?;
        let data = v.data();
        let out = Matrix::from_fn(offsets.len() - 1, 1, |s, _| {
            logsumexp(data[offsets[s]..offsets[s + 1]].iter().copied())
        });
        self.push("segment_logsumexp", out, Op::SegmentLogSumExp(a, offsets.into()), &[a])
    }

    /// Mean of contiguous row blocks, `n×d → s×d`.
    pub fn segment_mean(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        self.check(&[a], "segment_mean")?;
        let v = self.val(a);
        segment_bounds(offsets, v.rows(), "segment_mean")?;
        let d = v.cols();
        let mut out = Matrix::zeros(offsets.len() - 1, d);
        for s in 0..offsets.len() - 1 {
            let len = (offsets[s + 1] - offsets[s]) as f64;
            for r in offsets[s]..offsets[s + 1] {
                for (o, x) in out.row_mut(s).iter_mut().zip(v.row(r)) {
                    *o += x;
                }
            }
            out.row_mut(s).iter_mut().for_each(|o| *o /= len);
        }
        self.push("segment_mean", out, Op::SegmentMean(a, offsets.into()), &[a])
    }

    /// `S · x` for a constant sparse `S`.
    pub fn sparse_matmul(&mut self, s: Rc<SparseMatrix>, x: Var) -> Result<Var> {
        self.check(&[x], "sparse_matmul")?;
        let v = self.val(x);
        if s.cols != v.rows() {
            return Err(Error::shape("sparse_matmul", format!("{:?} x {:?}", s.shape(), v.shape())));
        }
        let out = s.apply(v);
        self.push("sparse_matmul", out, Op::Sparse(s, x), &[x])
    }

    /// Multiplies by a caller-supplied mask (already scaled by `1/(1-p)`).
    pub fn dropout(&mut self, a: Var, mask: Rc<Matrix>) -> Result<Var> {
        self.check(&[a], "dropout")?;
        let out = self.val(a).zip_with(&mask, "dropout", |x, m| x * m)?;
        self.push("dropout", out, Op::Dropout(a, mask), &[a])
    }

    /// Mean softmax cross-entropy of `n×c` logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(&[logits], "softmax_cross_entropy")?;
        let z = self.val(logits);
        if z.rows() != labels.len() || z.rows() == 0 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{} rows for {} labels", z.rows(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= z.cols()) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for {} classes", z.cols())));
        }
        let mut probs = Matrix::zeros(z.rows(), z.cols());
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let lse = logsumexp(z.row(r).iter().copied());
            total += lse - z[(r, label)];
            for c in 0..z.cols() {
                probs[(r, c)] = (z[(r, c)] - lse).exp();
            }
        }
        let out = Matrix::scalar(total / labels.len() as f64);
        self.push(
            "softmax_cross_entropy",
            out,
            Op::SoftmaxCrossEntropy(logits, labels.into(), probs),
            &[logits],
        )
    }

    /// Hash of the sign pattern of every relu input on the tape. Two forward
    /// passes with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                for &x in self.val(a).data() {
                    (x > 0.0).hash(&mut h);
                }
            }
        }
        h.finish()
    }

    /// Reverse sweep from a `1×1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.check(&[output], "backward")?;
        if self.val(output).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got {:?}",
                self.val(output).shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.index + 1];
        grads[output.index] = Some(Matrix::scalar(1.0));

        for i in (0..=output.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.nodes[v.index].requires_grad {
            return;
        }
        match &mut grads[v.index] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let mut ga = Matrix::zeros(self.val(*a).rows(), self.val(*a).cols());
                    crate::matrix::gemm(g, false, self.val(*b), true, &mut ga, 0.0);
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Matrix::zeros(self.val(*b).rows(), self.val(*b).cols());
                    crate::matrix::gemm(self.val(*a), true, g, false, &mut gb, 0.0);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.wants(*b) {
                    let gb = Matrix::from_fn(1, g.cols(), |_, c| (0..g.rows()).map(|r| g[(r, c)]).sum());
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let ga = g.zip_with(self.val(*b), "mul", |x, y| x * y).unwrap();
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = g.zip_with(self.val(*a), "mul", |x, y| x * y).unwrap();
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::Neg(a) => self.accumulate(grads, *a, g.scale(-1.0)),
            Op::Relu(a) => {
                let ga = g
                    .zip_with(self.val(*a), "relu", |gv, x| if x > 0.0 { gv } else { 0.0 })
                    .unwrap();
                self.accumulate(grads, *a, ga);
            }
            Op::Exp(a) => {
                let ga = g.zip_with(&node.value, "exp", |gv, y| gv * y).unwrap();
                self.accumulate(grads, *a, ga);
            }
            Op::Log(a) => {
                let ga = g.zip_with(self.val(*a), "log", |gv, x| gv / x).unwrap();
                self.accumulate(grads, *a, ga);
            }
            Op::SumAll(a) => {
                let (r, c) = self.val(*a).shape();
                self.accumulate(grads, *a, Matrix::filled(r, c, g[(0, 0)]));
            }
            Op::MeanAll(a) => {
                let (r, c) = self.val(*a).shape();
                self.accumulate(grads, *a, Matrix::filled(r, c, g[(0, 0)] / (r * c) as f64));
            }
            Op::RowSum(a) => {
                let (r, c) = self.val(*a).shape();
                self.accumulate(grads, *a, Matrix::from_fn(r, c, |i, _| g[(i, 0)]));
            }
            Op::RowMean(a) => {
                let (r, c) = self.val(*a).shape();
                self.accumulate(grads, *a, Matrix::from_fn(r, c, |i, _| g[(i, 0)] / c as f64));
            }
            Op::L2Normalize(a, norms) => {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols() {
                        ga[(r, c)] = (g[(r, c)] - y[(r, c)] * dot) / norms[r];
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let (r, c) = self.val(*p).shape();
                    if self.wants(*p) {
                        let gp = Matrix::from_fn(r, c, |i, j| g[(i, off + j)]);
                        self.accumulate(grads, *p, gp);
                    }
                    off += c;
                }
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = self.val(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LogSumExpRows(a) => {
                let x = self.val(*a);
                let ga = Matrix::from_fn(x.rows(), x.cols(), |r, c| {
                    g[(r, 0)] * (x[(r, c)] - node.value[(r, 0)]).exp()
                });
                self.accumulate(grads, *a, ga);
            }
            Op::SegmentLogSumExp(a, offsets) => {
                let x = self.val(*a);
                let mut ga = Matrix::zeros(x.rows(), 1);
                for s in 0..offsets.len() - 1 {
                    for r in offsets[s]..offsets[s + 1] {
                        ga[(r, 0)] = g[(s, 0)] * (x[(r, 0)] - node.value[(s, 0)]).exp();
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SegmentMean(a, offsets) => {
                let (rows, cols) = self.val(*a).shape();
                let mut ga = Matrix::zeros(rows, cols);
                for s in 0..offsets.len() - 1 {
                    let len = (offsets[s + 1] - offsets[s]) as f64;
                    for r in offsets[s]..offsets[s + 1] {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(g.row(s)) {
                            *o = x / len;
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sparse(s, x) => self.accumulate(grads, *x, s.apply_transpose(g)),
            Op::Dropout(a, mask) => {
                let ga = g.zip_with(mask, "dropout", |x, m| x * m).unwrap();
                self.accumulate(grads, *a, ga);
            }
            Op::SoftmaxCrossEntropy(z, labels, probs) => {
                let n = labels.len() as f64;
                let mut gz = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    gz[(r, l)] -= 1.0;
                }
                self.accumulate(grads, *z, gz.scale(g[(0, 0)] / n));
            }
        }
    }
}

/// Outcome of comparing tape gradients to central finite differences.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct GradCheckReport {
    /// Largest `|a − n| / max(|a|, |n|)` among entries whose absolute
    /// error exceeds [`GRADCHECK_ABS_TOL`].
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Entries skipped because the perturbation crossed a relu kink.
    pub skipped_kinks: usize,
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_REL_TOL: f64 = 1e-5;
pub const GRADCHECK_ABS_TOL: f64 = 1e-8;

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRADCHECK_REL_TOL
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
    }
}

/// Checks the gradient of a scalar function of `params` built by `f`.
///
/// `entries` limits the check to the listed `(param, flat index)` pairs;
/// `None` checks every entry.
pub fn check_gradients<F>(params: &[Matrix], entries: Option<&[(usize, usize)]>, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Matrix]| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        let vars = ps.iter().map(|p| tape.param(p.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok((tape.scalar(out), tape.kink_signature()))
    };

    let mut tape = Tape::new();
    let vars = params.iter().map(|p| tape.param(p.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let base_sig = tape.kink_signature();
    let grads = tape.backward(out)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| grads.get_or_zeros(*v, p.shape()))
        .collect();

    let all: Vec<(usize, usize)>;
    let entries = match entries {
        Some(e) => e,
        None => {
            all = params
                .iter()
                .enumerate()
                .flat_map(|(pi, p)| (0..p.data().len()).map(move |k| (pi, k)))
                .collect();
            &all
        }
    };

    let mut report = GradCheckReport::default();
    let mut work = params.to_vec();
    for &(pi, k) in entries {
        let orig = work[pi].data()[k];
        work[pi].data_mut()[k] = orig + GRADCHECK_STEP;
        let (fp, sp) = eval(&work)?;
        work[pi].data_mut()[k] = orig - GRADCHECK_STEP;
        let (fm, sm) = eval(&work)?;
        work[pi].data_mut()[k] = orig;
        if sp != base_sig || sm != base_sig {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * GRADCHECK_STEP);
        let a = analytic[pi].data()[k];
        let abs = (a - numeric).abs();
        report.max_abs_error = report.max_abs_error.max(abs);
        if abs > GRADCHECK_ABS_TOL {
            report.max_rel_error = report.max_rel_error.max(abs / a.abs().max(numeric.abs()));
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn relu_backward() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_vec(1, 2, vec![-1.0, 2.0]).unwrap()).unwrap();
        let y = t.relu(x).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn identity_matmul() {
        let mut t = Tape::new();
        let m = Matrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        let i3 = t.constant(Matrix::identity(3)).unwrap();
        let mv = t.constant(m.clone()).unwrap();
        let out = t.matmul(i3, mv).unwrap();
        assert_eq!(t.value(out), &m);
    }

    #[test]
    fn logsumexp_of_zeros() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(1, 2)).unwrap();
        let y = t.logsumexp_rows(x).unwrap();
        assert!((t.scalar(y) - std::f64::consts::LN_2).abs() < 1e-15);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.param(Matrix::scalar(3.0)).unwrap();
        let y = t.mul(x, x).unwrap();
        assert_eq!(t.backward(y).unwrap().get(x).unwrap()[(0, 0)], 6.0);
    }

    #[test]
    fn cross_entropy_symmetric_logits() {
        let mut t = Tape::new();
        let z = t.param(Matrix::zeros(1, 2)).unwrap();
        let l = t.softmax_cross_entropy(z, &[0]).unwrap();
        assert!((t.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(z).unwrap().data(), &[-0.5, 0.5]);
    }

    #[test]
    fn cross_entropy_is_stable_for_large_logits() {
        let mut t = Tape::new();
        let z = t.param(Matrix::from_vec(1, 2, vec![100.0, -100.0]).unwrap()).unwrap();
        let l = t.softmax_cross_entropy(z, &[0]).unwrap();
        assert!(t.scalar(l) >= 0.0 && t.scalar(l) < 1e-80);
        let bad = t.softmax_cross_entropy(z, &[2]);
        assert!(matches!(bad, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn errors() {
        let mut t = Tape::new();
        let a = t.param(Matrix::zeros(2, 3)).unwrap();
        let b = t.param(Matrix::zeros(2, 3)).unwrap();
        assert!(matches!(t.matmul(a, b), Err(Error::Shape { .. })));
        assert!(matches!(t.backward(a), Err(Error::Contract(_))));
        assert!(t.param(Matrix::scalar(f64::NAN)).is_err());

        let mut other = Tape::new();
        let c = other.param(Matrix::zeros(2, 3)).unwrap();
        assert!(matches!(t.add(a, c), Err(Error::Contract(_))));

        let z = t.param(Matrix::zeros(1, 2)).unwrap();
        let err = t.l2_normalize_rows(z).unwrap_err();
        assert!(matches!(err, Error::Numerical { op: "l2_normalize", .. }));
        let neg = t.constant(Matrix::scalar(-1.0)).unwrap();
        assert!(matches!(t.log(neg), Err(Error::Numerical { op: "log", .. })));
    }

    #[test]
    fn sparse_roundtrip() {
        let s = SparseMatrix::from_triplets(2, 3, vec![(0, 0, 1.0), (1, 2, 2.0), (0, 0, 1.0)]).unwrap();
        assert_eq!(s.nnz(), 2);
        let dense = s.to_dense();
        let x = Matrix::from_fn(3, 2, |i, j| (i + j) as f64);
        assert_eq!(s.apply(&x), dense.matmul(&x).unwrap());
        let y = Matrix::from_fn(2, 2, |i, j| (i * 3 + j) as f64);
        assert_eq!(s.apply_transpose(&y), dense.t_matmul(&y).unwrap());
        assert!(SparseMatrix::from_triplets(1, 1, vec![(1, 0, 1.0)]).is_err());
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = rand_matrix(4, 3, &mut rng);
        let b = rand_matrix(3, 5, &mut rng);
        let c = rand_matrix(4, 5, &mut rng);
        let bias = rand_matrix(1, 5, &mut rng);
        let mask = Rc::new(Matrix::from_fn(4, 5, |i, j| if (i + j) % 3 == 0 { 0.0 } else { 1.0 / 0.7 }));
        let sparse = Rc::new(
            SparseMatrix::from_triplets(3, 4, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 2, 0.5), (2, 3, 1.0), (2, 0, -1.0)])
                .unwrap(),
        );
        let report = check_gradients(&[a, b, c, bias], None, |t, v| {
            let ab = t.matmul(v[0], v[1])?;
            let x = t.add_bias(ab, v[3])?;
            let x = t.mul(x, v[2])?;
            let d = t.sub(x, v[2])?;
            let x = t.add(d, ab)?;
            let x = t.dropout(x, mask.clone())?;
            let e = t.exp(x)?;
            let l = t.log(e)?;
            let n = t.l2_normalize_rows(l)?;
            let cat = t.concat(&[n, v[2]])?;
            let g = t.gather_rows(cat, &[0, 2, 2, 3])?;
            let lse = t.logsumexp_rows(g)?;
            let sm = t.segment_mean(x, &[0, 1, 4])?;
            let sp = t.sparse_matmul(sparse.clone(), x)?;
            let sp = t.scale(sp, 0.3)?;
            let sp = t.neg(sp)?;
            let rs = t.row_sum(sp)?;
            let rm = t.row_mean(sm)?;
            let seg = t.segment_logsumexp(rs, &[0, 2, 3])?;
            let ce = t.softmax_cross_entropy(g, &[0, 1, 4, 2])?;
            let parts = [t.sum(lse)?, t.mean(rm)?, t.sum(seg)?, ce];
            let mut acc = parts[0];
            for p in &parts[1..] {
                acc = t.add(acc, *p)?;
            }
            Ok(acc)
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 12 + 15 + 20 + 5);
    }
}
