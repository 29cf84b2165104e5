//! Reverse-mode differentiation over a linear tape.
//!
//! Every forward op appends one node holding its value and whatever it needs
//! for the backward pass. Nodes are only ever appended, so the tape is in
//! topological order by construction and a single reverse sweep visits each
//! node once.

use super::tensor::{log_sum_exp, softmax, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Norms below this are treated as the zero vector by [`Tape::l2_normalize_rows`].
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    AddRow,
    Gather,
    GatherMean,
    Mean,
    Sum,
    L2Normalize,
    Softmax,
    LogSoftmax,
    Log,
    Exp,
    Tanh,
    Concat,
    Transpose,
    CrossEntropy,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Gather { src: Var, index: Vec<usize> },
    GatherMean { table: Var, seqs: Vec<Vec<usize>> },
    Mean { x: Var, axis: usize },
    Sum(Var),
    L2Normalize { x: Var, norms: Vec<f64> },
    Softmax(Var),
    LogSoftmax(Var),
    Log(Var),
    Exp(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Transpose(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Gather { .. } => OpKind::Gather,
            Op::GatherMean { .. } => OpKind::GatherMean,
            Op::Mean { .. } => OpKind::Mean,
            Op::Sum(_) => OpKind::Sum,
            Op::L2Normalize { .. } => OpKind::L2Normalize,
            Op::Softmax(_) => OpKind::Softmax,
            Op::LogSoftmax(_) => OpKind::LogSoftmax,
            Op::Log(_) => OpKind::Log,
            Op::Exp(_) => OpKind::Exp,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Concat(_) => OpKind::Concat,
            Op::Transpose(_) => OpKind::Transpose,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

/// Gradients produced by [`Tape::backward`], keyed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; a zero tensor when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Whether any gradient reached `v`.
    pub fn contains(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Test hook: scales the backward rule of one op kind by 1.5 so that
    /// gradient checks have something to catch.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Every leaf node, in recording order.
    pub fn leaves(&self) -> Vec<Var> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf))
            .map(Var)
            .collect()
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                self.requires_grad(*a) || self.requires_grad(*b)
            }
            Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::Log(x)
            | Op::Exp(x)
            | Op::Tanh(x)
            | Op::Transpose(x) => self.requires_grad(*x),
            Op::Gather { src, .. } => self.requires_grad(*src),
            Op::GatherMean { table, .. } => self.requires_grad(*table),
            Op::Mean { x, .. } | Op::L2Normalize { x, .. } => self.requires_grad(*x),
            Op::Concat(xs) => xs.iter().any(|x| self.requires_grad(*x)),
            Op::CrossEntropy { logits, .. } => self.requires_grad(*logits),
        };
        if cfg!(debug_assertions) && self.inputs_finite(&op) {
            debug_assert!(
                value.all_finite(),
                "{:?} produced a non-finite value from finite inputs",
                op.kind()
            );
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs_finite(&self, op: &Op) -> bool {
        let fin = |v: &Var| self.nodes[v.0].value.all_finite();
        match op {
            Op::Leaf => true,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                fin(a) && fin(b)
            }
            Op::Scale(x, s) => fin(x) && s.is_finite(),
            // log of a non-positive number is not a finite-input failure
            Op::Log(_) => false,
            Op::Sum(x)
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::Exp(x)
            | Op::Tanh(x)
            | Op::Transpose(x) => fin(x),
            Op::Gather { src, .. } => fin(src),
            Op::GatherMean { table, .. } => fin(table),
            Op::Mean { x, .. } | Op::L2Normalize { x, .. } => fin(x),
            Op::Concat(xs) => xs.iter().all(fin),
            Op::CrossEntropy { logits, .. } => fin(logits),
        }
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Copies the current value of `v` into a new constant leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows() {
            return Err(mismatch("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b)))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * s).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(x, s))
    }

    /// Adds the vector `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tb.rank() != 1 || tx.cols() != tb.len() || tx.rank() == 0 {
            return Err(mismatch("add_row", tx, tb));
        }
        let mut out = tx.clone();
        let c = tb.len();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tb.data()[i % c];
        }
        Ok(self.push(out, Op::AddRow(x, b)))
    }

    /// Selects rows of a matrix: `out[r] = src[index[r]]`.
    pub fn gather(&mut self, src: Var, index: &[usize]) -> Result<Var> {
        let ts = self.value(src);
        if ts.rank() != 2 {
            return Err(mismatch("gather", ts, ts));
        }
        let (rows, cols) = (ts.rows(), ts.cols());
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= rows {
                return Err(Error::IndexOutOfRange {
                    op: "gather",
                    index: i,
                    bound: rows,
                });
            }
            data.extend_from_slice(ts.row(i));
        }
        let t = Tensor::matrix(index.len(), cols, data)?;
        Ok(self.push(
            t,
            Op::Gather {
                src,
                index: index.to_vec(),
            },
        ))
    }

    /// Per sequence, the mean of the table rows it indexes, skipping id 0 (padding).
    pub fn gather_mean(&mut self, table: Var, seqs: &[Vec<usize>]) -> Result<Var> {
        let tt = self.value(table);
        if tt.rank() != 2 {
            return Err(mismatch("gather_mean", tt, tt));
        }
        let (rows, cols) = (tt.rows(), tt.cols());
        let mut data = vec![0.0; seqs.len() * cols];
        for (b, seq) in seqs.iter().enumerate() {
            let out = &mut data[b * cols..(b + 1) * cols];
            let mut count = 0usize;
            for &id in seq {
                if id >= rows {
                    return Err(Error::IndexOutOfRange {
                        op: "gather_mean",
                        index: id,
                        bound: rows,
                    });
                }
                if id == 0 {
                    continue;
                }
                count += 1;
                for (o, v) in out.iter_mut().zip(tt.row(id)) {
                    *o += v;
                }
            }
            if count == 0 {
                return Err(Error::Data(format!("sequence {b} has no non-padding tokens")));
            }
            let inv = 1.0 / count as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        let t = Tensor::matrix(seqs.len(), cols, data)?;
        Ok(self.push(
            t,
            Op::GatherMean {
                table,
                seqs: seqs.to_vec(),
            },
        ))
    }

    /// Mean over `axis` of a matrix (a vector is reduced to a scalar on axis 0).
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        let t = match (tx.rank(), axis) {
            (1, 0) => Tensor::scalar(tx.data().iter().sum::<f64>() / tx.len() as f64),
            (2, 0) => {
                let (r, c) = (tx.rows(), tx.cols());
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, v) in out.iter_mut().zip(tx.row(i)) {
                        *o += v;
                    }
                }
                Tensor::vector(out.into_iter().map(|v| v / r as f64).collect())
            }
            (2, 1) => {
                let c = tx.cols() as f64;
                Tensor::vector((0..tx.rows()).map(|i| tx.row(i).iter().sum::<f64>() / c).collect())
            }
            _ => return Err(mismatch("mean", tx, tx)),
        };
        Ok(self.push(t, Op::Mean { x, axis }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Scales every row to unit Euclidean norm; rows with norm below
    /// [`NORM_EPS`] become zero and pass no gradient.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let mut out = tx.clone();
        let mut norms = Vec::with_capacity(tx.rows());
        for i in 0..tx.rows() {
            let n = super::tensor::l2_norm(tx.row(i));
            norms.push(n);
            let row = out.row_mut(i);
            if n < NORM_EPS {
                row.iter_mut().for_each(|v| *v = 0.0);
            } else {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        self.push(out, Op::L2Normalize { x, norms })
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let mut out = tx.clone();
        for i in 0..tx.rows() {
            let s = softmax(tx.row(i));
            out.row_mut(i).copy_from_slice(&s);
        }
        self.push(out, Op::Softmax(x))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let mut out = tx.clone();
        for i in 0..tx.rows() {
            let lse = log_sum_exp(tx.row(i));
            out.row_mut(i).iter_mut().for_each(|v| *v -= lse);
        }
        self.push(out, Op::LogSoftmax(x))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let tx = self.value(x);
        Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| f(*v)).collect()).expect("same shape")
    }

    pub fn log(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::ln);
        self.push(t, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::exp);
        self.push(t, Op::Exp(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::tanh);
        self.push(t, Op::Tanh(x))
    }

    /// Stacks matrices with equal column counts along the row axis.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Data("concat of zero tensors".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for x in xs {
            let t = self.value(*x);
            if t.rank() != 2 || t.cols() != cols {
                return Err(mismatch("concat", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let t = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(t, Op::Concat(xs.to_vec())))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(mismatch("transpose", tx, tx));
        }
        let t = tx.transpose();
        Ok(self.push(t, Op::Transpose(x)))
    }

    /// Mean softmax cross-entropy of `logits` (B × C) against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        if tl.rank() != 2 || tl.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: tl.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let c = tl.cols();
        let mut probs = tl.clone();
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::IndexOutOfRange {
                    op: "cross_entropy",
                    index: y,
                    bound: c,
                });
            }
            let row = tl.row(i);
            total += log_sum_exp(row) - row[y];
            probs.row_mut(i).copy_from_slice(&softmax(row));
        }
        let n = labels.len().max(1) as f64;
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Gradients of a scalar `loss` w.r.t. every node that requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..n).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let scale = if self.fault == Some(node.op.kind()) { 1.5 } else { 1.0 };
            self.backward_node(node, &g, scale, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backward_node(&self, node: &Node, g: &Tensor, scale: f64, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let delta = if scale != 1.0 {
                let shape = delta.shape().to_vec();
                Tensor::new(shape, delta.into_data().into_iter().map(|d| d * scale).collect()).unwrap()
            } else {
                delta
            };
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |v: Var, data: Vec<f64>| Tensor::new(val(v).shape().to_vec(), data).unwrap();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.nodes[a.0].requires_grad {
                    let bt = tb.transpose();
                    acc(*a, like(*a, matmul_raw(g.data(), bt.data(), m, n, k)));
                }
                if self.nodes[b.0].requires_grad {
                    let at = ta.transpose();
                    acc(*b, like(*b, matmul_raw(at.data(), g.data(), k, m, n)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, like(*b, g.data().iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, like(*a, g.data().iter().zip(tb.data()).map(|(g, y)| g * y).collect()));
                acc(*b, like(*b, g.data().iter().zip(ta.data()).map(|(g, x)| g * x).collect()));
            }
            Op::Scale(x, s) => acc(*x, like(*x, g.data().iter().map(|v| v * s).collect())),
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                let c = val(*b).len();
                let mut db = vec![0.0; c];
                for (i, v) in g.data().iter().enumerate() {
                    db[i % c] += v;
                }
                acc(*b, Tensor::vector(db));
            }
            Op::Gather { src, index } => {
                let ts = val(*src);
                let mut d = Tensor::zeros(ts.shape());
                for (r, &i) in index.iter().enumerate() {
                    for (o, v) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*src, d);
            }
            Op::GatherMean { table, seqs } => {
                let tt = val(*table);
                let mut d = Tensor::zeros(tt.shape());
                for (b, seq) in seqs.iter().enumerate() {
                    let count = seq.iter().filter(|&&id| id != 0).count() as f64;
                    for &id in seq.iter().filter(|&&id| id != 0) {
                        for (o, v) in d.row_mut(id).iter_mut().zip(g.row(b)) {
                            *o += v / count;
                        }
                    }
                }
                acc(*table, d);
            }
            Op::Mean { x, axis } => {
                let tx = val(*x);
                let data = match (tx.rank(), axis) {
                    (1, _) => vec![g.item() / tx.len() as f64; tx.len()],
                    (_, 0) => {
                        let r = tx.rows() as f64;
                        (0..tx.len()).map(|i| g.data()[i % tx.cols()] / r).collect()
                    }
                    _ => {
                        let c = tx.cols();
                        (0..tx.len()).map(|i| g.data()[i / c] / c as f64).collect()
                    }
                };
                acc(*x, like(*x, data));
            }
            Op::Sum(x) => acc(*x, Tensor::full(val(*x).shape(), g.item())),
            Op::L2Normalize { x, norms } => {
                let y = &node.value;
                let mut d = Tensor::zeros(y.shape());
                for (i, &n) in norms.iter().enumerate() {
                    if n < NORM_EPS {
                        continue;
                    }
                    let (yr, gr) = (y.row(i), g.row(i));
                    let proj = super::tensor::dot(yr, gr);
                    for ((o, yv), gv) in d.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *o = (gv - yv * proj) / n;
                    }
                }
                acc(*x, d);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let mut d = Tensor::zeros(y.shape());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let s = super::tensor::dot(yr, gr);
                    for ((o, yv), gv) in d.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - s);
                    }
                }
                acc(*x, d);
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let mut d = Tensor::zeros(y.shape());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let s: f64 = gr.iter().sum();
                    for ((o, yv), gv) in d.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *o = gv - yv.exp() * s;
                    }
                }
                acc(*x, d);
            }
            Op::Log(x) => {
                let tx = val(*x);
                acc(*x, like(*x, g.data().iter().zip(tx.data()).map(|(g, v)| g / v).collect()));
            }
            Op::Exp(x) => {
                let y = &node.value;
                acc(*x, like(*x, g.data().iter().zip(y.data()).map(|(g, v)| g * v).collect()));
            }
            Op::Tanh(x) => {
                let y = &node.value;
                acc(
                    *x,
                    like(*x, g.data().iter().zip(y.data()).map(|(g, v)| g * (1.0 - v * v)).collect()),
                );
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                for x in xs {
                    let n = val(*x).len();
                    acc(*x, like(*x, g.data()[offset..offset + n].to_vec()));
                    offset += n;
                }
            }
            Op::Transpose(x) => acc(*x, g.transpose()),
            Op::CrossEntropy { logits, labels, probs } => {
                let n = labels.len().max(1) as f64;
                let mut d = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    d.row_mut(i)[y] -= 1.0;
                }
                let s = g.item() / n;
                d.data_mut().iter_mut().for_each(|v| *v *= s);
                acc(*logits, d);
            }
        }
    }
}
