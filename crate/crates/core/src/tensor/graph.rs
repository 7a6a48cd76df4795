//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, which is
//! already a topological order, so the backward pass is a single reverse sweep.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::{matmul_into, order_invariant_sum, ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    SetMatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    SumRows(Var),
    SumAll(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        scores: Var,
        targets: Vec<usize>,
        length: usize,
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance of the batch.
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, &a.shape(), &b.shape()));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// A constant input.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// The node holding `id`'s current value; one node per parameter per graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Matrix product whose inner reduction is independent of the order of the
    /// inner index: permuting the columns of `a` together with the rows of `b`
    /// gives a bit-identical result, and so does permuting the rows of `a`.
    /// Each output row visits the inner index in its own canonical order,
    /// sorted by (entry of that row of `a`, row of `b`) under `f64::total_cmp`;
    /// indices that tie contribute identical terms.
    pub fn set_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Error::shape("set_matmul", &ta.shape(), &tb.shape()));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Tensor::zeros(m, n);
        let mut order: Vec<usize> = (0..k).collect();
        for i in 0..m {
            let a_row = ta.row(i);
            canonical_order(a_row, tb, &mut order);
            let out_row = &mut out.data_mut()[i * n..(i + 1) * n];
            for &p in &order {
                let av = a_row[p];
                for (o, bv) in out_row.iter_mut().zip(tb.row(p)) {
                    *o += av * bv;
                }
            }
        }
        debug_assert_eq!(order.len(), k);
        Ok(self.push(out, Op::SetMatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    fn zip_with(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        Tensor::from_vec(t.rows(), t.cols(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    fn broadcast_row(&self, op: &'static str, a: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::shape(op, &ta.shape(), &tr.shape()));
        }
        let cols = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tr.data()[i % cols]))
            .collect();
        Tensor::from_vec(ta.rows(), cols, data)
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.broadcast_row("add_row", a, row, |x, r| x + r)?;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` element-wise by a `1 × c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.broadcast_row("mul_row", a, row, |x, r| x * r)?;
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.map(a, |x| k * x);
        self.push(out, Op::Scale(a, k))
    }

    /// `x · w + b` with `w: in × out` and `b: 1 × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| 1.0 / (1.0 + (-x).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// Row-wise softmax. The normalizer of each row is an order-invariant sum.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Column sums as a `1 × c` row, accumulated top to bottom.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(1, t.cols());
        for r in 0..t.rows() {
            for (o, &x) in out.data_mut().iter_mut().zip(t.row(r)) {
                *o += x;
            }
        }
        self.push(out, Op::SumRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_rows of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::shape("concat_rows", &self.shape(*first), &t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::shape("concat_cols", &self.shape(*first), &t.shape()));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                out.data_mut()[r * cols + offset..r * cols + offset + t.cols()].copy_from_slice(t.row(r));
            }
            offset += t.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start > end || end > t.rows() {
            return Err(Error::shape("slice_rows", &t.shape(), &[start, end]));
        }
        let cols = t.cols();
        let out = Tensor::from_vec(end - start, cols, t.data()[start * cols..end * cols].to_vec())?;
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start > end || end > t.cols() {
            return Err(Error::shape("slice_cols", &t.shape(), &[start, end]));
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let out = Tensor::from_vec(t.rows(), end - start, data)?;
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).clone().reshape(rows, cols)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Training-mode batch normalization over rows, per feature column.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let t = self.value(x);
        let (n, c) = (t.rows(), t.cols());
        for p in [gamma, beta] {
            if self.shape(p) != [1, c] {
                return Err(Error::shape("batch_norm", &t.shape(), &self.shape(p)));
            }
        }
        if n == 0 {
            return Err(Error::InvalidArgument("batch_norm over an empty batch".into()));
        }
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(t.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for r in 0..n {
            for ((s, &v), m) in var.iter_mut().zip(t.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(n, c);
        for r in 0..n {
            for j in 0..c {
                xhat.set(r, j, (t.get(r, j) - mean[j]) * inv_std[j]);
            }
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut out = Tensor::zeros(n, c);
        for r in 0..n {
            for j in 0..c {
                out.set(r, j, g.data()[j] * xhat.get(r, j) + b.data()[j]);
            }
        }
        let node = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((node, BatchStats { mean, var }))
    }

    /// Mean token cross-entropy. `scores` is `N × (C·L)`, each row a row-major
    /// `C × L` matrix of class scores per position; `targets` holds `N·L`
    /// class ids in row-major `N × L` order.
    pub fn cross_entropy(&mut self, scores: Var, targets: &[usize], classes: usize, length: usize) -> Result<Var> {
        let t = self.value(scores);
        if t.cols() != classes * length || targets.len() != t.rows() * length {
            return Err(Error::shape(
                "cross_entropy",
                &t.shape(),
                &[targets.len(), classes, length],
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidArgument(format!(
                "target id {bad} outside [0, {classes})"
            )));
        }
        let (probs, loss) = token_cross_entropy(t, targets, classes, length);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                scores,
                targets: targets.to_vec(),
                length,
                probs,
            },
        ))
    }

    /// Back-propagates from a scalar output. Parameter gradients are added to
    /// `store`; gradients of every node are returned.
    pub fn backward(&self, output: Var, store: &mut ParamStore) -> Result<Gradients> {
        let out = self.value(output);
        if out.shape() != [1, 1] {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) | Op::SetMatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = matmul_nt(&g, tb);
                    let gb = matmul_tn(ta, &g);
                    self.accumulate(&mut grads, *a, ga);
                    self.accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => self.accumulate(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate_scaled(&mut grads, *b, g, -1.0);
                }
                Op::Mul(a, b) => {
                    let ga = hadamard(&g, self.value(*b));
                    let gb = hadamard(&g, self.value(*a));
                    self.accumulate(&mut grads, *a, ga);
                    self.accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *row, column_sums(&g));
                }
                Op::MulRow(a, row) => {
                    let (ta, tr) = (self.value(*a), self.value(*row));
                    let cols = ta.cols();
                    let mut ga = g.clone();
                    let mut gr = Tensor::zeros(1, cols);
                    for (k, gv) in ga.data_mut().iter_mut().enumerate() {
                        gr.data_mut()[k % cols] += *gv * ta.data()[k];
                        *gv *= tr.data()[k % cols];
                    }
                    self.accumulate(&mut grads, *a, ga);
                    self.accumulate(&mut grads, *row, gr);
                }
                Op::Scale(a, k) => self.accumulate_scaled(&mut grads, *a, g, *k),
                Op::Relu(a) => {
                    let ga = zip_map(&g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_map(&g, &node.value, |gv, y| gv * y * (1.0 - y));
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = zip_map(&g, &node.value, |gv, y| gv * (1.0 - y * y));
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols() {
                            ga.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::SumRows(a) => {
                    let [rows, cols] = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        ga.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(g.data());
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let [rows, cols] = self.shape(*a);
                    self.accumulate(&mut grads, *a, Tensor::filled(rows, cols, g.item()));
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    let cols = g.cols();
                    for &p in parts {
                        let rows = self.shape(p)[0];
                        let part = Tensor::from_vec(
                            rows,
                            cols,
                            g.data()[offset * cols..(offset + rows) * cols].to_vec(),
                        )?;
                        self.accumulate(&mut grads, p, part);
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let [rows, cols] = self.shape(p);
                        let mut part = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            part.data_mut()[r * cols..(r + 1) * cols]
                                .copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        self.accumulate(&mut grads, p, part);
                        offset += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let [rows, cols] = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, cols);
                    ga.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let [rows, cols] = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        ga.data_mut()[r * cols + start..r * cols + start + g.cols()]
                            .copy_from_slice(g.row(r));
                    }
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Reshape(a) => {
                    let [rows, cols] = self.shape(*a);
                    self.accumulate(&mut grads, *a, g.reshape(rows, cols)?);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (n, c) = (xhat.rows(), xhat.cols());
                    let gam = self.value(*gamma);
                    let mut g_gamma = Tensor::zeros(1, c);
                    let g_beta = column_sums(&g);
                    let mut gx = Tensor::zeros(n, c);
                    for (j, &inv) in inv_std.iter().enumerate() {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for r in 0..n {
                            let d = g.get(r, j) * gam.data()[j];
                            sum_d += d;
                            sum_dx += d * xhat.get(r, j);
                            g_gamma.data_mut()[j] += g.get(r, j) * xhat.get(r, j);
                        }
                        for r in 0..n {
                            let d = g.get(r, j) * gam.data()[j];
                            let v = inv / n as f64
                                * (n as f64 * d - sum_d - xhat.get(r, j) * sum_dx);
                            gx.set(r, j, v);
                        }
                    }
                    self.accumulate(&mut grads, *x, gx);
                    self.accumulate(&mut grads, *gamma, g_gamma);
                    self.accumulate(&mut grads, *beta, g_beta);
                }
                Op::CrossEntropy {
                    scores,
                    targets,
                    length,
                    probs,
                } => {
                    let mut gs = probs.clone();
                    let n = probs.rows();
                    for i in 0..n {
                        for j in 0..*length {
                            let y = targets[i * length + j];
                            let k = i * probs.cols() + y * length + j;
                            gs.data_mut()[k] -= 1.0;
                        }
                    }
                    let k = g.item() / (n * length) as f64;
                    gs.data_mut().iter_mut().for_each(|v| *v *= k);
                    self.accumulate(&mut grads, *scores, gs);
                }
            }
        }

        for (&id, &v) in &self.params {
            if let Some(g) = &grads[v.0] {
                let p = store.get_mut(id);
                for (acc, x) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc += x;
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        self.accumulate_scaled(grads, v, g, 1.0);
    }

    fn accumulate_scaled(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor, k: f64) {
        let slot = &mut grads[v.0];
        match slot {
            Some(acc) => {
                for (a, x) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += k * x;
                }
            }
            None => {
                let mut t = g;
                if k != 1.0 {
                    t.data_mut().iter_mut().for_each(|x| *x *= k);
                }
                *slot = Some(t);
            }
        }
    }
}

/// Gradients of every node with respect to the scalar passed to `backward`.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

pub(crate) fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let cols = t.cols();
    let mut buf = vec![0.0; cols];
    for r in 0..t.rows() {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in row.iter_mut() {
            *v = (*v - max).exp();
        }
        buf.copy_from_slice(row);
        let z = order_invariant_sum(&mut buf);
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Returns per-position class probabilities (same layout as `scores`) and the
/// mean negative log-likelihood of the targets.
pub(crate) fn token_cross_entropy(
    scores: &Tensor,
    targets: &[usize],
    classes: usize,
    length: usize,
) -> (Tensor, f64) {
    let n = scores.rows();
    let mut probs = Tensor::zeros(n, classes * length);
    let mut total = 0.0;
    for i in 0..n {
        let row = scores.row(i);
        for j in 0..length {
            let logit = |c: usize| row[c * length + j];
            let max = (0..classes).map(logit).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..classes).map(|c| (logit(c) - max).exp()).sum();
            let log_z = max + z.ln();
            for c in 0..classes {
                probs.set(i, c * length + j, (logit(c) - log_z).exp());
            }
            total += log_z - logit(targets[i * length + j]);
        }
    }
    (probs, total / (n * length) as f64)
}

/// Inner indices of `a · b` sorted by (column `p` of `a`, row `p` of `b`).
fn canonical_order(a_row: &[f64], b: &Tensor, order: &mut [usize]) {
    order.sort_by(|&p, &q| {
        a_row[p]
            .total_cmp(&a_row[q])
            .then_with(|| {
                b.row(p)
                    .iter()
                    .zip(b.row(q))
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
}

/// `g (m×n) · bᵀ` for `b: k×n`.
fn matmul_nt(g: &Tensor, b: &Tensor) -> Tensor {
    let bt = b.transpose();
    let mut out = Tensor::zeros(g.rows(), b.rows());
    matmul_into(g.data(), bt.data(), g.rows(), g.cols(), b.rows(), out.data_mut());
    out
}

/// `aᵀ · g` for `a: m×k`, `g: m×n`.
fn matmul_tn(a: &Tensor, g: &Tensor) -> Tensor {
    let at = a.transpose();
    let mut out = Tensor::zeros(a.cols(), g.cols());
    matmul_into(at.data(), g.data(), a.cols(), a.rows(), g.cols(), out.data_mut());
    out
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("shape preserved")
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, x) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += x;
        }
    }
    out
}
