//! Tape-based reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node to the [`Tape`];
//! node indices are therefore already in topological order and
//! [`Tape::backward`] is a single reverse sweep. Parameters enter the tape
//! through [`Tape::param`] and receive their gradients back in the
//! [`ParameterStore`] they came from; gradients accumulate until the store
//! is explicitly zeroed.

use std::sync::Arc;

use super::params::{ParamId, ParameterStore};
use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Scalar, Tensor};
use crate::error::{Error, Result};

/// Reference to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for [`Tape::custom_unary`]: `(input, output, upstream) -> input grad`.
pub type CustomBackward<T> = Box<dyn Fn(&[T], &[T], &[T]) -> Vec<T> + Send + Sync>;

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    MeanPoolRows(Var),
    SoftmaxRows(Var),
    LayerNormRows { x: Var, inv_std: Vec<T> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    GradReverse(Var, T),
    Sum(Var),
    Transpose(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    Custom(Var, CustomBackward<T>),
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients left behind by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn shape_err(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A value that takes no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A trainable parameter; its gradient flows back to `store` on backward.
    pub fn param(&mut self, store: &ParameterStore<T>, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.shared_value(id),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2()?;
        let (k2, n) = tb.dims2()?;
        if k != k2 || tb.shape().len() != 2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum of equal shapes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// `a[n x d] + bias[d]`, the bias broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (_, d) = ta.dims2()?;
        if tb.numel() != d {
            return Err(shape_err("add_row", ta, tb));
        }
        let data = ta
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(tb.data()).map(|(&x, &y)| x + y))
            .collect();
        let t = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(&[a, bias]);
        Ok(self.push(t, Op::AddRow(a, bias), rg))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// `a[n x d] * g[d]`, the row vector broadcast over rows.
    pub fn mul_row(&mut self, a: Var, g: Var) -> Result<Var> {
        let (ta, tg) = (self.value(a), self.value(g));
        let (_, d) = ta.dims2()?;
        if tg.numel() != d {
            return Err(shape_err("mul_row", ta, tg));
        }
        let data = ta
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(tg.data()).map(|(&x, &y)| x * y))
            .collect();
        let t = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(&[a, g]);
        Ok(self.push(t, Op::MulRow(a, g), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape(), ta.data().iter().map(|&x| x * c).collect()).unwrap();
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let t = Tensor::new(
            ta.shape(),
            ta.data().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect(),
        )
        .unwrap();
        let rg = self.rg(&[a]);
        self.push(t, Op::Relu(a), rg)
    }

    /// Column means of an `n x d` matrix, shape `[d]`.
    pub fn mean_pool_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (n, d) = ta.dims2()?;
        let mut out = vec![T::zero(); d];
        for row in ta.data().chunks(d) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let inv = T::one() / T::of(n as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(&[d], out)?, Op::MeanPoolRows(a), rg))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (_, d) = ta.dims2()?;
        let mut out = Vec::with_capacity(ta.numel());
        for row in ta.data().chunks(d) {
            softmax_into(row, &mut out);
        }
        let t = Tensor::new(ta.shape(), out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::SoftmaxRows(a), rg))
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)`, no affine part.
    pub fn layer_norm_rows(&mut self, a: Var, eps: T) -> Result<Var> {
        let ta = self.value(a);
        let (_, d) = ta.dims2()?;
        let dn = T::of(d as f64);
        let mut out = Vec::with_capacity(ta.numel());
        let mut inv_std = Vec::new();
        for row in ta.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            out.extend(row.iter().map(|&x| (x - mean) * is));
            inv_std.push(is);
        }
        let t = Tensor::new(ta.shape(), out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::LayerNormRows { x: a, inv_std }, rg))
    }

    /// Mean over rows of `-log softmax(logits)[label]`; shape `[1]`.
    pub fn cross_entropy_with_logits(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (n, c) = tl.dims2()?;
        if labels.len() != n {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
            return Err(Error::LabelOutOfRange { index, label, classes: c });
        }
        let mut probs = Vec::with_capacity(n * c);
        let mut loss = T::zero();
        for (row, &y) in tl.data().chunks(c).zip(labels) {
            // log-sum-exp as max + ln(1 + sum of the others), which keeps
            // precision when one logit dominates
            let (arg, max) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (j, x)| if x > best.1 { (j, x) } else { best });
            let rest: T = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != arg)
                .map(|(_, &x)| (x - max).exp())
                .sum();
            loss += (max - row[y]) + rest.ln_1p();
            softmax_into(row, &mut probs);
        }
        loss /= T::of(n as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Identity forward; multiplies the upstream gradient by `-lambda` on the way back.
    pub fn grad_reverse(&mut self, a: Var, lambda: T) -> Result<Var> {
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("grad_reverse lambda must be finite and >= 0, got {lambda}")));
        }
        let value = Arc::clone(&self.nodes[a.0].value);
        let rg = self.rg(&[a]);
        self.nodes.push(Node {
            value,
            op: Op::GradReverse(a, lambda),
            requires_grad: rg,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Sum of all elements; shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (r, c) = ta.dims2()?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = ta.data()[i * c + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(&[c, r], out)?, Op::Transpose(a), rg))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (r, c) = ta.dims2()?;
        if len == 0 || start + len > c {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: ta.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let out = ta.data().chunks(c).flat_map(|row| row[start..start + len].iter().copied()).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(&[r, len], out)?, Op::SliceCols(a, start), rg))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (r, c) = ta.dims2()?;
        if len == 0 || start + len > r {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: ta.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let out = ta.data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(&[len, c], out)?, Op::SliceRows(a, start), rg))
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::InvalidArgument("concat_cols of nothing".into()))?;
        let (r, _) = self.value(first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pr != r {
                return Err(shape_err("concat_cols", self.value(first), self.value(p)));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(&[r, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Stacks matrices (or rank-1 rows) with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::InvalidArgument("concat_rows of nothing".into()))?;
        let (_, c) = self.value(first).dims2()?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pc != c {
                return Err(shape_err("concat_rows", self.value(first), self.value(p)));
            }
            rows += pr;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(&[rows, c], out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = (*self.nodes[a.0].value).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Rows of `table` selected by `ids`, e.g. an embedding lookup.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (r, c) = tt.dims2()?;
        if ids.is_empty() {
            return Err(Error::InvalidArgument("gather_rows with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::InvalidArgument(format!("gather_rows: id {bad} out of range for {r} rows")));
        }
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(&tt.data()[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(Tensor::new(&[ids.len(), c], out)?, Op::GatherRows(table, ids.to_vec()), rg))
    }

    /// Elementwise op with a caller-supplied backward rule.
    pub fn custom_unary(&mut self, a: Var, forward: impl Fn(T) -> T, backward: CustomBackward<T>) -> Var {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape(), ta.data().iter().map(|&x| forward(x)).collect()).unwrap();
        let rg = self.rg(&[a]);
        self.push(t, Op::Custom(a, backward), rg)
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are added to
    /// `store`; all node gradients are returned for inspection.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore<T>) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            if let Op::Param(id) = node.op {
                store.accumulate_grad(id, &g);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2()?;
                let (_, n) = tb.dims2()?;
                if self.requires_grad(*a) {
                    let mut ga = vec![T::zero(); m * k];
                    gemm_nt_acc(g, tb.data(), &mut ga, m, n, k);
                    self.acc(grads, *a, &ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![T::zero(); k * n];
                    gemm_tn_acc(ta.data(), g, &mut gb, m, k, n);
                    self.acc(grads, *b, &gb);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g);
                self.acc(grads, *b, g);
            }
            Op::AddRow(a, bias) => {
                self.acc(grads, *a, g);
                if self.requires_grad(*bias) {
                    let d = self.value(*bias).numel();
                    let mut gb = vec![T::zero(); d];
                    for row in g.chunks(d) {
                        for (o, &x) in gb.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                    self.acc(grads, *bias, &gb);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let ga: Vec<T> = g.iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
                    self.acc(grads, *a, &ga);
                }
                if self.requires_grad(*b) {
                    let gb: Vec<T> = g.iter().zip(ta.data()).map(|(&x, &y)| x * y).collect();
                    self.acc(grads, *b, &gb);
                }
            }
            Op::MulRow(a, r) => {
                let (ta, tr) = (self.value(*a), self.value(*r));
                let d = tr.numel();
                if self.requires_grad(*a) {
                    let ga: Vec<T> = g
                        .chunks(d)
                        .flat_map(|row| row.iter().zip(tr.data()).map(|(&x, &y)| x * y))
                        .collect();
                    self.acc(grads, *a, &ga);
                }
                if self.requires_grad(*r) {
                    let mut gr = vec![T::zero(); d];
                    for (grow, arow) in g.chunks(d).zip(ta.data().chunks(d)) {
                        for ((o, &x), &y) in gr.iter_mut().zip(grow).zip(arow) {
                            *o += x * y;
                        }
                    }
                    self.acc(grads, *r, &gr);
                }
            }
            Op::Scale(a, c) => {
                let ga: Vec<T> = g.iter().map(|&x| x * *c).collect();
                self.acc(grads, *a, &ga);
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                let ga: Vec<T> = g
                    .iter()
                    .zip(ta.data())
                    .map(|(&x, &v)| if v > T::zero() { x } else { T::zero() })
                    .collect();
                self.acc(grads, *a, &ga);
            }
            Op::MeanPoolRows(a) => {
                let (n, _) = self.value(*a).dims2()?;
                let inv = T::one() / T::of(n as f64);
                let ga: Vec<T> = (0..n).flat_map(|_| g.iter().map(move |&x| x * inv)).collect();
                self.acc(grads, *a, &ga);
            }
            Op::SoftmaxRows(a) => {
                let (_, d) = self.value(*a).dims2()?;
                let mut ga = Vec::with_capacity(g.len());
                for (grow, yrow) in g.chunks(d).zip(out.chunks(d)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&x, &y)| x * y).sum();
                    ga.extend(grow.iter().zip(yrow).map(|(&x, &y)| y * (x - dot)));
                }
                self.acc(grads, *a, &ga);
            }
            Op::LayerNormRows { x, inv_std } => {
                let (_, d) = self.value(*x).dims2()?;
                let dn = T::of(d as f64);
                let mut gx = Vec::with_capacity(g.len());
                for ((grow, yrow), &is) in g.chunks(d).zip(out.chunks(d)).zip(inv_std) {
                    let mean_g = grow.iter().copied().sum::<T>() / dn;
                    let mean_gy = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum::<T>() / dn;
                    gx.extend(grow.iter().zip(yrow).map(|(&gi, &yi)| is * (gi - mean_g - yi * mean_gy)));
                }
                self.acc(grads, *x, &gx);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let n = labels.len();
                let c = probs.len() / n;
                let scale = g[0] / T::of(n as f64);
                let mut gl = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    gl[r * c + y] -= T::one();
                }
                gl.iter_mut().for_each(|v| *v *= scale);
                self.acc(grads, *logits, &gl);
            }
            Op::GradReverse(a, lambda) => {
                let neg = -*lambda;
                let ga: Vec<T> = g.iter().map(|&x| neg * x).collect();
                self.acc(grads, *a, &ga);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                self.acc(grads, *a, &vec![g[0]; n]);
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2()?;
                // g is c x r
                let mut ga = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                self.acc(grads, *a, &ga);
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.value(*a).dims2()?;
                let len = g.len() / r;
                let mut ga = vec![T::zero(); r * c];
                for i in 0..r {
                    ga[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                self.acc(grads, *a, &ga);
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.value(*a).dims2()?;
                let mut ga = vec![T::zero(); r * c];
                ga[start * c..start * c + g.len()].copy_from_slice(g);
                self.acc(grads, *a, &ga);
            }
            Op::ConcatCols(parts) => {
                let (r, total) = node.value.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let (_, w) = self.value(p).dims2()?;
                    if self.requires_grad(p) {
                        let gp: Vec<T> = (0..r)
                            .flat_map(|i| g[i * total + offset..i * total + offset + w].iter().copied())
                            .collect();
                        self.acc(grads, p, &gp);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    self.acc(grads, p, &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::Reshape(a) => self.acc(grads, *a, g),
            Op::GatherRows(table, ids) => {
                if self.requires_grad(*table) {
                    let tt = self.value(*table);
                    let (_, c) = tt.dims2()?;
                    let mut gt = vec![T::zero(); tt.numel()];
                    for (k, &id) in ids.iter().enumerate() {
                        for (o, &x) in gt[id * c..(id + 1) * c].iter_mut().zip(&g[k * c..(k + 1) * c]) {
                            *o += x;
                        }
                    }
                    self.acc(grads, *table, &gt);
                }
            }
            Op::Custom(a, rule) => {
                let ga = rule(self.value(*a).data(), out, g);
                self.acc(grads, *a, &ga);
            }
        }
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, &b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g.to_vec()),
        }
    }
}

fn softmax_into<T: Scalar>(row: &[T], out: &mut Vec<T>) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let start = out.len();
    let mut sum = T::zero();
    for &x in row {
        let e = (x - max).exp();
        sum += e;
        out.push(e);
    }
    out[start..].iter_mut().for_each(|e| *e /= sum);
}
