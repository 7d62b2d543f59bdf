use std::cell::RefCell;

use super::{Tensor, TensorError};

/// Recorded operation kinds. Inputs are node indices into the owning tape;
/// indices always point at earlier nodes, so tape order is a topological
/// order of the graph.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Conv1d(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Hinge(usize),
    Softmax(usize),
    Ln(usize),
    Abs(usize),
    Sum(usize),
    Mean(usize),
    Dot(usize, usize),
    Norm(usize),
    Concat(Vec<usize>),
    StackRows(Vec<usize>),
    /// Column-wise max over rows; argmax row per column is cached at forward
    /// time (first index wins on ties) so backward routing is deterministic.
    MaxRows(usize, Vec<usize>),
    /// Selects rows of a rank-2 table by index (embedding lookup); backward
    /// scatter-adds into the selected rows.
    GatherRows(usize, Vec<usize>),
    GradReverse(usize, f64),
}

struct TapeInner {
    values: Vec<Tensor>,
    grads: Vec<Vec<f64>>,
    ops: Vec<Op>,
}

/// One computation graph. The lifetime pattern is one tape per minibatch:
/// record the forward pass, call [`Tape::backward`], read gradients, drop.
pub struct Tape {
    inner: RefCell<TapeInner>,
}

/// Handle to a node on a [`Tape`]. Cheap to copy; all arithmetic goes through
/// methods that record onto the owning tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(TapeInner {
                values: Vec::new(),
                grads: Vec::new(),
                ops: Vec::new(),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.values.len();
        inner.grads.push(vec![0.0; value.numel()]);
        inner.values.push(value);
        inner.ops.push(op);
        Var { tape: self, id }
    }

    /// Records an input node that is not differentiated through.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(v))
    }

    pub fn vector(&self, data: Vec<f64>) -> Result<Var<'_>, TensorError> {
        Ok(self.leaf(Tensor::vector(data)?))
    }

    pub fn value(&self, var: Var<'_>) -> Tensor {
        self.inner.borrow().values[var.id].clone()
    }

    /// Gradient of the last `backward` root with respect to `var`.
    pub fn grad(&self, var: Var<'_>) -> Tensor {
        let inner = self.inner.borrow();
        Tensor::new(
            inner.values[var.id].shape().to_vec(),
            inner.grads[var.id].clone(),
        )
        .expect("gradient shape always matches value shape")
    }

    /// Reverse-mode sweep from a scalar root. All gradient accumulators are
    /// reset first, so repeated calls on the same graph give identical
    /// results.
    pub fn backward(&self, root: Var<'_>) -> Result<(), TensorError> {
        let mut inner = self.inner.borrow_mut();
        if !inner.values[root.id].is_scalar() {
            return Err(TensorError::NonScalarRoot {
                shape: inner.values[root.id].shape().to_vec(),
            });
        }
        for g in inner.grads.iter_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        inner.grads[root.id][0] = 1.0;
        inner.propagate(root.id);
        Ok(())
    }

    /// Concatenates rank-1 vectors into one vector.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
        self.join(parts, false)
    }

    /// Stacks equal-length rank-1 vectors as the rows of a matrix.
    pub fn stack_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
        self.join(parts, true)
    }

    fn join<'t>(&'t self, parts: &[Var<'t>], as_rows: bool) -> Result<Var<'t>, TensorError> {
        let op_name = if as_rows { "stack_rows" } else { "concat" };
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: op_name });
        }
        let inner = self.inner.borrow();
        let mut data = Vec::new();
        let first_len = inner.values[parts[0].id].numel();
        for p in parts {
            let t = &inner.values[p.id];
            if t.shape().len() != 1 {
                return Err(TensorError::BadRank {
                    op: op_name,
                    expected: 1,
                    got: t.shape().to_vec(),
                });
            }
            if as_rows && t.numel() != first_len {
                return Err(TensorError::ShapeMismatch {
                    op: op_name,
                    lhs: vec![first_len],
                    rhs: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
        }
        drop(inner);
        let shape = if as_rows {
            vec![parts.len(), first_len]
        } else {
            vec![data.len()]
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let op = if as_rows {
            Op::StackRows(ids)
        } else {
            Op::Concat(ids)
        };
        Ok(self.push(Tensor::new(shape, data)?, op))
    }
}

macro_rules! elementwise_binary {
    ($name:ident, $opname:literal, $op:path, $f:expr) => {
        pub fn $name(self, rhs: Var<'t>) -> Result<Var<'t>, TensorError> {
            let (a, b) = {
                let inner = self.tape.inner.borrow();
                (
                    inner.values[self.id].clone(),
                    inner.values[rhs.id].clone(),
                )
            };
            if a.shape() != b.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: $opname,
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let f = $f;
            let data: Vec<f64> = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            let value = Tensor::new(a.shape().to_vec(), data)?;
            Ok(self.tape.push(value, $op(self.id, rhs.id)))
        }
    };
}

macro_rules! elementwise_unary {
    ($name:ident, $op:path, $f:expr) => {
        pub fn $name(self) -> Var<'t> {
            let a = self.tape.inner.borrow().values[self.id].clone();
            let f = $f;
            let data: Vec<f64> = a.data().iter().map(|&x| f(x)).collect();
            let value = Tensor::new(a.shape().to_vec(), data)
                .expect("unary op preserves shape");
            self.tape.push(value, $op(self.id))
        }
    };
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn value(self) -> Tensor {
        self.tape.value(self)
    }

    pub fn item(self) -> Result<f64, TensorError> {
        self.value().item()
    }

    elementwise_binary!(add, "add", Op::Add, |x: f64, y: f64| x + y);
    elementwise_binary!(sub, "sub", Op::Sub, |x: f64, y: f64| x - y);
    elementwise_binary!(mul, "mul", Op::Mul, |x: f64, y: f64| x * y);
    elementwise_binary!(div, "div", Op::Div, |x: f64, y: f64| x / y);

    elementwise_unary!(sigmoid, Op::Sigmoid, |x: f64| 1.0 / (1.0 + (-x).exp()));
    elementwise_unary!(tanh, Op::Tanh, |x: f64| x.tanh());
    elementwise_unary!(relu, Op::Relu, |x: f64| x.max(0.0));
    elementwise_unary!(hinge, Op::Hinge, |x: f64| x.max(0.0));
    elementwise_unary!(ln, Op::Ln, |x: f64| x.ln());
    elementwise_unary!(abs, Op::Abs, |x: f64| x.abs());

    /// Multiplies every entry by a plain (non-differentiated) scalar.
    pub fn scale(self, c: f64) -> Var<'t> {
        let a = self.tape.inner.borrow().values[self.id].clone();
        let data: Vec<f64> = a.data().iter().map(|&x| c * x).collect();
        let value = Tensor::new(a.shape().to_vec(), data).expect("scale preserves shape");
        self.tape.push(value, Op::Scale(self.id, c))
    }

    /// Adds a plain scalar to every entry.
    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let a = self.tape.inner.borrow().values[self.id].clone();
        let data: Vec<f64> = a.data().iter().map(|&x| x + c).collect();
        let value = Tensor::new(a.shape().to_vec(), data).expect("add_scalar preserves shape");
        self.tape.push(value, Op::AddScalar(self.id))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// Matrix product. Accepts `[m,k] x [k,n] -> [m,n]`, `[m,k] x [k] -> [m]`
    /// and `[k] x [k,n] -> [n]`.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>, TensorError> {
        let (a, b) = {
            let inner = self.tape.inner.borrow();
            (
                inner.values[self.id].clone(),
                inner.values[rhs.id].clone(),
            )
        };
        let value = matmul_forward(&a, &b)?;
        Ok(self.tape.push(value, Op::MatMul(self.id, rhs.id)))
    }

    /// Valid 1-D convolution over a `[t, d]` sequence with a `[out, w, d]`
    /// filter bank, producing `[t-w+1, out]`. Sequences shorter than the
    /// window are zero-padded at the end so there is always one position.
    pub fn conv1d(self, filter: Var<'t>) -> Result<Var<'t>, TensorError> {
        let (x, f) = {
            let inner = self.tape.inner.borrow();
            (
                inner.values[self.id].clone(),
                inner.values[filter.id].clone(),
            )
        };
        let value = conv1d_forward(&x, &f)?;
        Ok(self.tape.push(value, Op::Conv1d(self.id, filter.id)))
    }

    /// Numerically stable softmax of a rank-1 vector.
    pub fn softmax(self) -> Result<Var<'t>, TensorError> {
        let a = self.tape.inner.borrow().values[self.id].clone();
        if a.shape().len() != 1 {
            return Err(TensorError::BadRank {
                op: "softmax",
                expected: 1,
                got: a.shape().to_vec(),
            });
        }
        let max = a.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = a.data().iter().map(|&x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let data: Vec<f64> = exps.iter().map(|&e| e / total).collect();
        Ok(self
            .tape
            .push(Tensor::new(a.shape().to_vec(), data)?, Op::Softmax(self.id)))
    }

    pub fn sum(self) -> Var<'t> {
        let a = self.tape.inner.borrow().values[self.id].clone();
        let s: f64 = a.data().iter().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let a = self.tape.inner.borrow().values[self.id].clone();
        let s: f64 = a.data().iter().sum();
        let m = s / a.numel() as f64;
        self.tape.push(Tensor::scalar(m), Op::Mean(self.id))
    }

    pub fn dot(self, rhs: Var<'t>) -> Result<Var<'t>, TensorError> {
        let (a, b) = {
            let inner = self.tape.inner.borrow();
            (
                inner.values[self.id].clone(),
                inner.values[rhs.id].clone(),
            )
        };
        if a.shape().len() != 1 || a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "dot",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let s: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).sum();
        Ok(self
            .tape
            .push(Tensor::scalar(s), Op::Dot(self.id, rhs.id)))
    }

    /// Euclidean norm of a rank-1 vector.
    pub fn norm(self) -> Result<Var<'t>, TensorError> {
        let a = self.tape.inner.borrow().values[self.id].clone();
        if a.shape().len() != 1 {
            return Err(TensorError::BadRank {
                op: "norm",
                expected: 1,
                got: a.shape().to_vec(),
            });
        }
        let s: f64 = a.data().iter().map(|&x| x * x).sum::<f64>().sqrt();
        Ok(self.tape.push(Tensor::scalar(s), Op::Norm(self.id)))
    }

    /// Column-wise maximum over the rows of a rank-2 tensor.
    pub fn max_rows(self) -> Result<Var<'t>, TensorError> {
        let a = self.tape.inner.borrow().values[self.id].clone();
        if a.shape().len() != 2 {
            return Err(TensorError::BadRank {
                op: "max_rows",
                expected: 2,
                got: a.shape().to_vec(),
            });
        }
        let (rows, cols) = (a.rows(), a.cols());
        let mut out = vec![f64::NEG_INFINITY; cols];
        let mut argmax = vec![0usize; cols];
        for r in 0..rows {
            for c in 0..cols {
                let v = a.data()[r * cols + c];
                if v > out[c] {
                    out[c] = v;
                    argmax[c] = r;
                }
            }
        }
        Ok(self.tape.push(
            Tensor::new(vec![cols], out)?,
            Op::MaxRows(self.id, argmax),
        ))
    }

    /// Gathers `indices` as the rows of a new `[len, cols]` tensor from a
    /// rank-2 table.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'t>, TensorError> {
        let table = self.tape.inner.borrow().values[self.id].clone();
        if table.shape().len() != 2 {
            return Err(TensorError::BadRank {
                op: "gather_rows",
                expected: 2,
                got: table.shape().to_vec(),
            });
        }
        if indices.is_empty() {
            return Err(TensorError::EmptyInput { op: "gather_rows" });
        }
        let (rows, cols) = (table.rows(), table.cols());
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::ShapeMismatch {
                    op: "gather_rows",
                    lhs: table.shape().to_vec(),
                    rhs: vec![i],
                });
            }
            data.extend_from_slice(&table.data()[i * cols..(i + 1) * cols]);
        }
        Ok(self.tape.push(
            Tensor::new(vec![indices.len(), cols], data)?,
            Op::GatherRows(self.id, indices.to_vec()),
        ))
    }

    /// Identity in the forward pass; multiplies the incoming gradient by
    /// `-weight` in the backward pass.
    pub fn grad_reverse(self, weight: f64) -> Var<'t> {
        let a = self.tape.inner.borrow().values[self.id].clone();
        self.tape.push(a, Op::GradReverse(self.id, weight))
    }
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    match (a.shape().len(), b.shape().len()) {
        (2, 2) => {
            let (m, k) = (a.rows(), a.cols());
            let (k2, n) = (b.rows(), b.cols());
            if k != k2 {
                return Err(mismatch());
            }
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let arow = &a.data()[i * k..(i + 1) * k];
                for (p, &av) in arow.iter().enumerate() {
                    let brow = &b.data()[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
            Tensor::new(vec![m, n], out)
        }
        (2, 1) => {
            let (m, k) = (a.rows(), a.cols());
            if k != b.numel() {
                return Err(mismatch());
            }
            let mut out = vec![0.0; m];
            for i in 0..m {
                out[i] = a.data()[i * k..(i + 1) * k]
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| x * y)
                    .sum();
            }
            Tensor::new(vec![m], out)
        }
        (1, 2) => {
            let k = a.numel();
            let (k2, n) = (b.rows(), b.cols());
            if k != k2 {
                return Err(mismatch());
            }
            let mut out = vec![0.0; n];
            for (p, &av) in a.data().iter().enumerate() {
                let brow = &b.data()[p * n..(p + 1) * n];
                for (o, &bv) in out.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
            Tensor::new(vec![n], out)
        }
        _ => Err(mismatch()),
    }
}

fn conv1d_forward(x: &Tensor, f: &Tensor) -> Result<Tensor, TensorError> {
    if x.shape().len() != 2 || f.shape().len() != 3 || x.cols() != f.shape()[2] {
        return Err(TensorError::ShapeMismatch {
            op: "conv1d",
            lhs: x.shape().to_vec(),
            rhs: f.shape().to_vec(),
        });
    }
    let (t, d) = (x.rows(), x.cols());
    let (out_ch, w) = (f.shape()[0], f.shape()[1]);
    let positions = (t.saturating_sub(w) + 1).max(1);
    let mut out = vec![0.0; positions * out_ch];
    for p in 0..positions {
        for o in 0..out_ch {
            let mut s = 0.0;
            for j in 0..w {
                if p + j >= t {
                    continue; // zero padding past the end
                }
                let xrow = &x.data()[(p + j) * d..(p + j + 1) * d];
                let frow = &f.data()[(o * w + j) * d..(o * w + j + 1) * d];
                s += xrow.iter().zip(frow).map(|(&a, &b)| a * b).sum::<f64>();
            }
            out[p * out_ch + o] = s;
        }
    }
    Tensor::new(vec![positions, out_ch], out)
}

impl TapeInner {
    fn propagate(&mut self, root: usize) {
        for idx in (0..=root).rev() {
            let op = self.ops[idx].clone();
            let g = self.grads[idx].clone();
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut self.grads[a], &g, |gi| gi);
                    accumulate(&mut self.grads[b], &g, |gi| gi);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut self.grads[a], &g, |gi| gi);
                    accumulate(&mut self.grads[b], &g, |gi| -gi);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.values[a].clone(), self.values[b].clone());
                    for (i, &gi) in g.iter().enumerate() {
                        self.grads[a][i] += gi * bv.data()[i];
                        self.grads[b][i] += gi * av.data()[i];
                    }
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.values[a].clone(), self.values[b].clone());
                    for (i, &gi) in g.iter().enumerate() {
                        let d = bv.data()[i];
                        self.grads[a][i] += gi / d;
                        self.grads[b][i] += -gi * av.data()[i] / (d * d);
                    }
                }
                Op::Scale(a, c) => {
                    accumulate(&mut self.grads[a], &g, |gi| c * gi);
                }
                Op::AddScalar(a) => {
                    accumulate(&mut self.grads[a], &g, |gi| gi);
                }
                Op::MatMul(a, b) => self.backward_matmul(a, b, &g),
                Op::Conv1d(x, f) => self.backward_conv1d(x, f, &g),
                Op::Sigmoid(a) => {
                    let y = self.values[idx].clone();
                    for (i, &gi) in g.iter().enumerate() {
                        let s = y.data()[i];
                        self.grads[a][i] += gi * s * (1.0 - s);
                    }
                }
                Op::Tanh(a) => {
                    let y = self.values[idx].clone();
                    for (i, &gi) in g.iter().enumerate() {
                        let t = y.data()[i];
                        self.grads[a][i] += gi * (1.0 - t * t);
                    }
                }
                // Subgradient 0 at the kink for both rectifiers.
                Op::Relu(a) | Op::Hinge(a) => {
                    let x = self.values[a].clone();
                    for (i, &gi) in g.iter().enumerate() {
                        if x.data()[i] > 0.0 {
                            self.grads[a][i] += gi;
                        }
                    }
                }
                Op::Softmax(a) => {
                    let y = self.values[idx].clone();
                    let inner_sum: f64 =
                        g.iter().zip(y.data()).map(|(&gi, &yi)| gi * yi).sum();
                    for (i, &gi) in g.iter().enumerate() {
                        self.grads[a][i] += y.data()[i] * (gi - inner_sum);
                    }
                }
                Op::Ln(a) => {
                    let x = self.values[a].clone();
                    for (i, &gi) in g.iter().enumerate() {
                        self.grads[a][i] += gi / x.data()[i];
                    }
                }
                Op::Abs(a) => {
                    let x = self.values[a].clone();
                    for (i, &gi) in g.iter().enumerate() {
                        let v = x.data()[i];
                        if v > 0.0 {
                            self.grads[a][i] += gi;
                        } else if v < 0.0 {
                            self.grads[a][i] -= gi;
                        }
                    }
                }
                Op::Sum(a) => {
                    let gi = g[0];
                    self.grads[a].iter_mut().for_each(|v| *v += gi);
                }
                Op::Mean(a) => {
                    let n = self.grads[a].len() as f64;
                    let gi = g[0] / n;
                    self.grads[a].iter_mut().for_each(|v| *v += gi);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (self.values[a].clone(), self.values[b].clone());
                    let gi = g[0];
                    for i in 0..av.numel() {
                        self.grads[a][i] += gi * bv.data()[i];
                        self.grads[b][i] += gi * av.data()[i];
                    }
                }
                Op::Norm(a) => {
                    let x = self.values[a].clone();
                    let norm = self.values[idx].data()[0];
                    if norm > 0.0 {
                        let gi = g[0];
                        for i in 0..x.numel() {
                            self.grads[a][i] += gi * x.data()[i] / norm;
                        }
                    }
                }
                Op::Concat(parts) | Op::StackRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.grads[p].len();
                        for i in 0..len {
                            self.grads[p][i] += g[offset + i];
                        }
                        offset += len;
                    }
                }
                Op::MaxRows(a, argmax) => {
                    let cols = argmax.len();
                    for (c, &r) in argmax.iter().enumerate() {
                        self.grads[a][r * cols + c] += g[c];
                    }
                }
                Op::GatherRows(a, indices) => {
                    let cols = self.values[a].cols();
                    for (out_row, &src_row) in indices.iter().enumerate() {
                        for c in 0..cols {
                            self.grads[a][src_row * cols + c] += g[out_row * cols + c];
                        }
                    }
                }
                Op::GradReverse(a, weight) => {
                    accumulate(&mut self.grads[a], &g, |gi| -weight * gi);
                }
            }
        }
    }

    fn backward_matmul(&mut self, a: usize, b: usize, g: &[f64]) {
        let av = self.values[a].clone();
        let bv = self.values[b].clone();
        match (av.shape().len(), bv.shape().len()) {
            (2, 2) => {
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * bv.data()[p * n + j];
                        }
                        self.grads[a][i * k + p] += s;
                    }
                }
                for p in 0..k {
                    for j in 0..n {
                        let mut s = 0.0;
                        for i in 0..m {
                            s += av.data()[i * k + p] * g[i * n + j];
                        }
                        self.grads[b][p * n + j] += s;
                    }
                }
            }
            (2, 1) => {
                let (m, k) = (av.rows(), av.cols());
                for i in 0..m {
                    for p in 0..k {
                        self.grads[a][i * k + p] += g[i] * bv.data()[p];
                        self.grads[b][p] += av.data()[i * k + p] * g[i];
                    }
                }
            }
            (1, 2) => {
                let k = av.numel();
                let n = bv.cols();
                for p in 0..k {
                    for j in 0..n {
                        self.grads[a][p] += bv.data()[p * n + j] * g[j];
                        self.grads[b][p * n + j] += av.data()[p] * g[j];
                    }
                }
            }
            _ => unreachable!("matmul forward validated the ranks"),
        }
    }

    fn backward_conv1d(&mut self, x: usize, f: usize, g: &[f64]) {
        let xv = self.values[x].clone();
        let fv = self.values[f].clone();
        let (t, d) = (xv.rows(), xv.cols());
        let (out_ch, w) = (fv.shape()[0], fv.shape()[1]);
        let positions = (t.saturating_sub(w) + 1).max(1);
        for p in 0..positions {
            for o in 0..out_ch {
                let gpo = g[p * out_ch + o];
                if gpo == 0.0 {
                    continue;
                }
                for j in 0..w {
                    if p + j >= t {
                        continue;
                    }
                    for i in 0..d {
                        self.grads[x][(p + j) * d + i] += gpo * fv.data()[(o * w + j) * d + i];
                        self.grads[f][(o * w + j) * d + i] += gpo * xv.data()[(p + j) * d + i];
                    }
                }
            }
        }
    }
}

fn accumulate(dst: &mut [f64], g: &[f64], f: impl Fn(f64) -> f64) {
    for (d, &gi) in dst.iter_mut().zip(g) {
        *d += f(gi);
    }
}
