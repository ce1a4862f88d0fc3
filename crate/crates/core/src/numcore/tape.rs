//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] is built fresh for every sentence: each op appends a node that
//! holds its forward value and enough information to push gradients back to
//! its inputs. Parameters are borrowed from a [`ParamStore`], never copied,
//! and their gradients are collected into a [`Gradients`] set so that several
//! tapes can run side by side against the same store.

use rand::Rng;

use super::tensor::gemm;
use super::{Gradients, NumError, ParamId, ParamStore, Result, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// How a cross-entropy sum over rows is normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleShift(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Maxout { x: Var, argmax: Vec<usize> },
    Dropout { x: Var, mask: Vec<f64> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, rows: Vec<usize> },
    Unfold { x: Var, width: usize },
    MaxPoolRows { x: Var, argmax: Vec<usize> },
    PairAdd(Var, Var),
    Reshape(Var),
    LogSoftmax(Var),
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor, norm: f64 },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// A computation tape bound to one parameter store.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> NumError {
    NumError::ShapeMismatch {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.store.value(*id),
            (_, Some(t)) => t,
            (_, None) => unreachable!("non-parameter node without a value"),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let n = tb.cols();
        if tb.rows() != k {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), needs))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `[1, n]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let n = ta.cols();
        if tr.len() != n {
            return Err(mismatch("add_row", ta, tr));
        }
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(n.max(1)) {
            for (x, b) in chunk.iter_mut().zip(tr.data()) {
                *x += b;
            }
        }
        let value = Tensor::new(ta.shape(), data)?;
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push(value, Op::AddRow(a, row), needs))
    }

    /// `x · w + b` with `w: [in, out]` and `b: [1, out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    fn scale_shift(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        let needs = self.needs(x);
        self.push(value, Op::ScaleShift(x, scale), needs)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.scale_shift(x, factor, 0.0)
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.scale_shift(x, -1.0, 1.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        let needs = self.needs(x);
        self.push(value, Op::Tanh(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let needs = self.needs(x);
        self.push(value, Op::Sigmoid(x), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let needs = self.needs(x);
        self.push(value, Op::Relu(x), needs)
    }

    /// Maxout over groups of `pieces` consecutive columns.
    pub fn maxout(&mut self, x: Var, pieces: usize) -> Result<Var> {
        let tx = self.value(x);
        let cols = tx.cols();
        if pieces == 0 || cols % pieces != 0 {
            return Err(NumError::ShapeMismatch {
                op: "maxout",
                lhs: tx.shape().to_vec(),
                rhs: vec![pieces],
            });
        }
        let units = cols / pieces;
        let rows = tx.rows();
        let mut out = Vec::with_capacity(rows * units);
        let mut argmax = Vec::with_capacity(rows * units);
        for r in 0..rows {
            let row = tx.row_slice(r);
            for u in 0..units {
                let group = &row[u * pieces..(u + 1) * pieces];
                let (best, val) = argmax_first(group);
                out.push(val);
                argmax.push(r * cols + u * pieces + best);
            }
        }
        let value = Tensor::new(&[rows, units], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Maxout { x, argmax }, needs))
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)` so that
    /// inference needs no rescaling. Identity when not training.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumError::InvalidArgument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let tx = self.value(x);
        let mask: Vec<f64> = (0..tx.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(tx.shape(), data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Dropout { x, mask }, needs))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NumError::InvalidArgument("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(mismatch("concat_cols", self.value(*first), t));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        let value = Tensor::new(&[rows, cols], data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NumError::InvalidArgument("concat of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(mismatch("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        let value = Tensor::new(&[rows, cols], data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), needs))
    }

    /// Rows `start .. start + len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if start + len > tx.rows() {
            return Err(NumError::IndexOutOfRange {
                op: "slice_rows",
                index: start + len,
                bound: tx.rows(),
            });
        }
        let cols = tx.cols();
        let data = tx.data()[start * cols..(start + len) * cols].to_vec();
        let value = Tensor::new(&[len, cols], data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::SliceRows { x, start }, needs))
    }

    /// Columns `start .. start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if start + len > tx.cols() {
            return Err(NumError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                bound: tx.cols(),
            });
        }
        let rows = tx.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&tx.row_slice(r)[start..start + len]);
        }
        let value = Tensor::new(&[rows, len], data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::SliceCols { x, start }, needs))
    }

    /// Row lookup: output row `i` is input row `rows[i]`. Also serves as an
    /// embedding lookup when `x` is an embedding table.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let cols = tx.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= tx.rows() {
                return Err(NumError::IndexOutOfRange {
                    op: "gather_rows",
                    index: r,
                    bound: tx.rows(),
                });
            }
            data.extend_from_slice(tx.row_slice(r));
        }
        let value = Tensor::new(&[rows.len(), cols], data)?;
        let needs = self.needs(x);
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            needs,
        ))
    }

    /// Sliding windows of `width` consecutive rows, each flattened into one
    /// output row: `[len, d] -> [len - width + 1, width * d]`.
    pub fn unfold(&mut self, x: Var, width: usize) -> Result<Var> {
        let tx = self.value(x);
        let (len, d) = (tx.rows(), tx.cols());
        if width == 0 || width > len {
            return Err(NumError::ShapeMismatch {
                op: "unfold",
                lhs: tx.shape().to_vec(),
                rhs: vec![width],
            });
        }
        let out_rows = len - width + 1;
        let mut data = Vec::with_capacity(out_rows * width * d);
        for t in 0..out_rows {
            data.extend_from_slice(&tx.data()[t * d..(t + width) * d]);
        }
        let value = Tensor::new(&[out_rows, width * d], data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Unfold { x, width }, needs))
    }

    /// 1-D convolution over positions (rows) of `x: [len, d]` with a filter
    /// bank `filters: [width * d, count]`; output `[len - width + 1, count]`.
    pub fn conv1d(&mut self, x: Var, filters: Var, width: usize) -> Result<Var> {
        let windows = self.unfold(x, width)?;
        self.matmul(windows, filters)
    }

    /// Column-wise maximum over rows: `[len, c] -> [1, c]`.
    pub fn max_pool_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = (tx.rows(), tx.cols());
        if rows == 0 {
            return Err(NumError::InvalidArgument("max-pool over zero rows".into()));
        }
        let mut best = tx.row_slice(0).to_vec();
        let mut argmax = vec![0usize; cols];
        for r in 1..rows {
            for (c, &v) in tx.row_slice(r).iter().enumerate() {
                if v > best[c] {
                    best[c] = v;
                    argmax[c] = r;
                }
            }
        }
        let value = Tensor::row(best);
        let needs = self.needs(x);
        Ok(self.push(value, Op::MaxPoolRows { x, argmax }, needs))
    }

    /// All pairwise row sums: `a: [m, d]`, `b: [p, d]` gives `[m * p, d]`
    /// where row `i * p + j` is `a_i + b_j`.
    pub fn pair_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(mismatch("pair_add", ta, tb));
        }
        let (m, p, d) = (ta.rows(), tb.rows(), ta.cols());
        let mut data = Vec::with_capacity(m * p * d);
        for i in 0..m {
            let ra = ta.row_slice(i);
            for j in 0..p {
                data.extend(ra.iter().zip(tb.row_slice(j)).map(|(x, y)| x + y));
            }
        }
        let value = Tensor::new(&[m * p, d], data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::PairAdd(a, b), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), needs))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(tx.cols().max(1)) {
            log_softmax_in_place(row);
        }
        let value = Tensor::new(tx.shape(), data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::LogSoftmax(x), needs))
    }

    /// Negative log-likelihood of `targets` (one per row) under a row-wise
    /// softmax of `logits`, summed or averaged over rows. Returns a scalar.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        reduction: Reduction,
    ) -> Result<Var> {
        let tx = self.value(logits);
        let (rows, cols) = (tx.rows(), tx.cols());
        if targets.len() != rows {
            return Err(NumError::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: tx.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = tx.data().to_vec();
        let mut total = 0.0;
        for (row, &t) in probs.chunks_mut(cols.max(1)).zip(targets) {
            if t >= cols {
                return Err(NumError::IndexOutOfRange {
                    op: "softmax_cross_entropy",
                    index: t,
                    bound: cols,
                });
            }
            log_softmax_in_place(row);
            total -= row[t];
            for v in row.iter_mut() {
                *v = v.exp();
            }
        }
        let norm = match reduction {
            Reduction::Mean => rows.max(1) as f64,
            Reduction::Sum => 1.0,
        };
        let probs = Tensor::new(tx.shape(), probs)?;
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(total / norm),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                norm,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(total), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Computes the gradient of the scalar `loss` with respect to every
    /// parameter reachable from it. Parameters that do not influence the
    /// loss are absent from the result (equivalently, zero).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumError::NotScalar(lv.shape().to_vec()));
        }
        if !lv.is_finite() {
            return Err(NumError::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));
        let mut out = Gradients::with_capacity(self.store.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(i, &node.op, g, &mut grads, &mut out)?;
        }
        for (id, g) in out.iter() {
            if !g.is_finite() {
                return Err(NumError::NonFinite(self.store.get(id).name().to_string()));
            }
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.needs(v) {
            return None;
        }
        let shape = self.value(v).shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)))
    }

    fn propagate(
        &self,
        index: usize,
        op: &Op,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) -> Result<()> {
        match op {
            Op::Constant => {}
            Op::Param(id) => out.add(*id, &g),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = self.slot(grads, *a) {
                    gemm(m, n, k, g.data(), false, tb.data(), true, 1.0, ga.data_mut());
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm(k, m, n, ta.data(), true, g.data(), false, 1.0, gb.data_mut());
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(&g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.add_assign(&g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(&g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (x, y) in gb.data_mut().iter_mut().zip(g.data()) {
                        *x -= y;
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let tb = self.value(*b);
                    for ((x, gy), y) in ga.data_mut().iter_mut().zip(g.data()).zip(tb.data()) {
                        *x += gy * y;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let ta = self.value(*a);
                    for ((x, gy), y) in gb.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *x += gy * y;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(&g);
                }
                if let Some(gr) = self.slot(grads, *row) {
                    let n = g.cols().max(1);
                    for chunk in g.data().chunks(n) {
                        for (x, y) in gr.data_mut().iter_mut().zip(chunk) {
                            *x += y;
                        }
                    }
                }
            }
            Op::ScaleShift(x, scale) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (a, b) in gx.data_mut().iter_mut().zip(g.data()) {
                        *a += scale * b;
                    }
                }
            }
            Op::Tanh(x) => {
                let y = self.nodes[index].value.as_ref().expect("tanh value");
                if let Some(gx) = self.slot(grads, *x) {
                    for ((a, gy), y) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *a += gy * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[index].value.as_ref().expect("sigmoid value");
                if let Some(gx) = self.slot(grads, *x) {
                    for ((a, gy), y) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *a += gy * y * (1.0 - y);
                    }
                }
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                if let Some(gx) = self.slot(grads, *x) {
                    for ((a, gy), v) in gx.data_mut().iter_mut().zip(g.data()).zip(tx.data()) {
                        if *v > 0.0 {
                            *a += gy;
                        }
                    }
                }
            }
            Op::Maxout { x, argmax } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let data = gx.data_mut();
                    for (gy, &src) in g.data().iter().zip(argmax) {
                        data[src] += gy;
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for ((a, gy), m) in gx.data_mut().iter_mut().zip(g.data()).zip(mask) {
                        *a += gy * m;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let width = self.value(p).cols();
                    if let Some(gp) = self.slot(grads, p) {
                        for (r, row) in gp.data_mut().chunks_mut(width.max(1)).enumerate() {
                            let src = &g.data()[r * cols + offset..r * cols + offset + width];
                            for (a, b) in row.iter_mut().zip(src) {
                                *a += b;
                            }
                        }
                    }
                    offset += width;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.slot(grads, p) {
                        for (a, b) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + len]) {
                            *a += b;
                        }
                    }
                    offset += len;
                }
            }
            Op::SliceRows { x, start } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let cols = g.cols();
                    let dst = &mut gx.data_mut()[start * cols..start * cols + g.len()];
                    for (a, b) in dst.iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let width = g.cols();
                if let Some(gx) = self.slot(grads, *x) {
                    let cols = gx.cols();
                    for r in 0..g.rows() {
                        let dst = &mut gx.data_mut()[r * cols + start..r * cols + start + width];
                        for (a, b) in dst.iter_mut().zip(g.row_slice(r)) {
                            *a += b;
                        }
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let cols = gx.cols();
                    for (i, &r) in rows.iter().enumerate() {
                        let dst = &mut gx.data_mut()[r * cols..(r + 1) * cols];
                        for (a, b) in dst.iter_mut().zip(g.row_slice(i)) {
                            *a += b;
                        }
                    }
                }
            }
            Op::Unfold { x, width } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let d = gx.cols();
                    let span = width * d;
                    for t in 0..g.rows() {
                        let dst = &mut gx.data_mut()[t * d..t * d + span];
                        for (a, b) in dst.iter_mut().zip(g.row_slice(t)) {
                            *a += b;
                        }
                    }
                }
            }
            Op::MaxPoolRows { x, argmax } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let cols = gx.cols();
                    for (c, (&r, gy)) in argmax.iter().zip(g.data()).enumerate() {
                        gx.data_mut()[r * cols + c] += gy;
                    }
                }
            }
            Op::PairAdd(a, b) => {
                let (m, p) = (self.value(*a).rows(), self.value(*b).rows());
                let d = g.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..m {
                        let dst = &mut ga.data_mut()[i * d..(i + 1) * d];
                        for j in 0..p {
                            for (x, y) in dst.iter_mut().zip(g.row_slice(i * p + j)) {
                                *x += y;
                            }
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for i in 0..m {
                        for j in 0..p {
                            let dst = &mut gb.data_mut()[j * d..(j + 1) * d];
                            for (x, y) in dst.iter_mut().zip(g.row_slice(i * p + j)) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (a, b) in gx.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let y = self.nodes[index].value.as_ref().expect("log_softmax value");
                if let Some(gx) = self.slot(grads, *x) {
                    let cols = y.cols().max(1);
                    for r in 0..y.rows() {
                        let gy = g.row_slice(r);
                        let total: f64 = gy.iter().sum();
                        let dst = &mut gx.data_mut()[r * cols..(r + 1) * cols];
                        for ((a, gv), lp) in dst.iter_mut().zip(gy).zip(y.row_slice(r)) {
                            *a += gv - lp.exp() * total;
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
                norm,
            } => {
                let upstream = g.data()[0] / norm;
                if let Some(gx) = self.slot(grads, *logits) {
                    let cols = probs.cols().max(1);
                    for (r, &t) in targets.iter().enumerate() {
                        let dst = &mut gx.data_mut()[r * cols..(r + 1) * cols];
                        for (c, (a, p)) in dst.iter_mut().zip(probs.row_slice(r)).enumerate() {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            *a += upstream * (p - onehot);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                let gy = g.data()[0];
                if let Some(gx) = self.slot(grads, *x) {
                    for a in gx.data_mut() {
                        *a += gy;
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable in-place log-softmax of one row.
pub fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}

/// Index and value of the first maximum (ties go to the smaller index).
pub(crate) fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    (best, values[best])
}
