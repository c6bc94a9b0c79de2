use std::borrow::Cow;

use super::kernels::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::{AutodiffError, Tensor};
use crate::scalar::{lit, Scalar};

/// Lower clamp applied to the argument of [`Graph::log`].
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Relu,
    Gelu,
    Log,
    /// `ln sigmoid(x)`, computed without forming the sigmoid.
    LogSigmoid,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    MatMulT { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<T>),
    Affine(Var, T),
    Unary(Var, Unary),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: T },
    GatherRows(Var, Vec<usize>),
    Concat(Vec<Var>),
    SliceLast { x: Var, start: usize },
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Pick(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of operations recorded during one forward pass.
///
/// Nodes are appended in evaluation order, so the tape is already a
/// topological order and [`Graph::backward`] simply walks it in reverse.
/// Parameter leaves can borrow their tensors for the lifetime `'p`.
#[derive(Debug)]
pub struct Graph<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<'p, T: Scalar> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<S: Into<String>>(msg: S) -> AutodiffError {
    AutodiffError::Shape(msg.into())
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// Borrowed leaf that receives a gradient.
    pub fn param(&mut self, t: &'p Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    /// Owned leaf; `requires_grad` decides whether backward reaches it.
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
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

    /// Gradient accumulated by [`Graph::backward`]; `None` if the node was
    /// not reached or does not require a gradient.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    // ---------------------------------------------------------------- ops

    /// Matrix product. A 1-D left operand is a row vector and a 1-D right
    /// operand a column vector; the corresponding output axis is dropped.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, k, a_vec) = match sa.as_slice() {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            _ => return Err(shape_err(format!("matmul lhs must be 1-D or 2-D, got {sa:?}"))),
        };
        let (k2, n, b_vec) = match sb.as_slice() {
            [k] => (*k, 1, true),
            [k, n] => (*k, *n, false),
            _ => return Err(shape_err(format!("matmul rhs must be 1-D or 2-D, got {sb:?}"))),
        };
        if k != k2 {
            return Err(shape_err(format!("matmul inner dimensions {sa:?} · {sb:?}")));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let mut shape = Vec::new();
        if !a_vec {
            shape.push(m);
        }
        if !b_vec {
            shape.push(n);
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push_op(t, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ([m, k], [n, k2]) = (sa.as_slice(), sb.as_slice()) else {
            return Err(shape_err(format!("matmul_t needs 2-D operands, got {sa:?} and {sb:?}")));
        };
        let (m, k, n) = (*m, *k, *n);
        if k != *k2 {
            return Err(shape_err(format!("matmul_t inner dimensions {sa:?} · {sb:?}ᵀ")));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push_op(t, Op::MatMulT { a, b, m, k, n }, &[a, b]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push_op(t, Op::Add(a, b), &[a, b]))
    }

    /// Adds the vector `row` to every slice along the last dimension of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, AutodiffError> {
        let n = self.value(x).last_dim();
        if self.shape(row) != [n] {
            return Err(shape_err(format!("add_row: {:?} + {:?}", self.shape(x), self.shape(row))));
        }
        let r = self.value(row).data();
        let data = self.value(x).data().iter().enumerate().map(|(i, &v)| v + r[i % n]).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push_op(t, Op::AddRow(x, row), &[x, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push_op(t, Op::Mul(a, b), &[a, b]))
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, x: Var, factor: Vec<T>) -> Result<Var, AutodiffError> {
        if factor.len() != self.value(x).len() {
            return Err(shape_err(format!("mul_const: {} factors for {:?}", factor.len(), self.shape(x))));
        }
        let data = self.value(x).data().iter().zip(&factor).map(|(&v, &f)| v * f).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push_op(t, Op::MulConst(x, factor), &[x]))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let data = self.value(x).data().iter().map(|&v| scale * v + shift).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("shape preserved");
        self.push_op(t, Op::Affine(x, scale), &[x])
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Var {
        let floor = lit::<T>(LOG_CLAMP);
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| match f {
                Unary::Sigmoid => sigmoid(v),
                Unary::Relu => v.max(T::zero()),
                Unary::Gelu => gelu(v).0,
                Unary::Log => v.max(floor).ln(),
                Unary::LogSigmoid => v.min(T::zero()) - (-v.abs()).exp().ln_1p(),
            })
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("shape preserved");
        self.push_op(t, Op::Unary(x, f), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Gelu)
    }

    /// Natural log with the argument clamped to at least [`LOG_CLAMP`].
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }

    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::LogSigmoid)
    }

    /// Log-softmax over the last dimension.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.last_dim();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|v| *v = *v - lse);
        }
        let t = Tensor::new(xv.shape().to_vec(), out).expect("shape preserved");
        self.push_op(t, Op::LogSoftmax(x), &[x])
    }

    /// Softmax over the last dimension, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.last_dim();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let t = Tensor::new(xv.shape().to_vec(), out).expect("shape preserved");
        self.push_op(t, Op::Softmax(x), &[x])
    }

    /// Layer normalisation over the last dimension with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var, AutodiffError> {
        let n = self.value(x).last_dim();
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(shape_err(format!(
                "layer_norm: x {:?}, gamma {:?}, beta {:?}",
                self.shape(x),
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = Vec::with_capacity(self.value(x).len());
        for row in self.value(x).data().chunks(n) {
            let (mean, inv_std) = row_stats(row, eps);
            out.extend(row.iter().enumerate().map(|(c, &v)| (v - mean) * inv_std * g[c] + b[c]));
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push_op(t, Op::LayerNorm { x, gamma, beta, eps }, &[x, gamma, beta]))
    }

    /// Rows `indices` of a 2-D tensor, in order (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var, AutodiffError> {
        let [rows, cols] = *self.shape(x) else {
            return Err(shape_err(format!("gather_rows needs 2-D input, got {:?}", self.shape(x))));
        };
        if indices.is_empty() {
            return Err(shape_err("gather_rows with no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::Index { index: bad, len: rows });
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(xv.row(i));
        }
        let t = Tensor::matrix(indices.len(), cols, out)?;
        Ok(self.push_op(t, Op::GatherRows(x, indices.to_vec()), &[x]))
    }

    /// Concatenation along the last dimension. Scalars count as length-1
    /// vectors; all inputs must share their leading dimensions.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat of nothing"));
        };
        let lead: Vec<usize> = match self.shape(first) {
            [] => Vec::new(),
            s => s[..s.len() - 1].to_vec(),
        };
        let outer = self.value(first).outer_len();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let p_lead = if s.is_empty() { &[][..] } else { &s[..s.len() - 1] };
            if p_lead != lead.as_slice() {
                return Err(shape_err(format!("concat: leading dims {p_lead:?} vs {lead:?}")));
            }
            widths.push(self.value(p).last_dim());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for r in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let t = Tensor::new(shape, out)?;
        Ok(self.push_op(t, Op::Concat(parts.to_vec()), parts))
    }

    /// `x[..., start..start+len]`.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let n = self.value(x).last_dim();
        if len == 0 || start + len > n {
            return Err(shape_err(format!("slice {start}..{} of width {n}", start + len)));
        }
        let mut out = Vec::with_capacity(self.value(x).outer_len() * len);
        for row in self.value(x).data().chunks(n) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().expect("non-scalar") = len;
        let t = Tensor::new(shape, out)?;
        Ok(self.push_op(t, Op::SliceLast { x, start }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push_op(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s: T = xv.data().iter().copied().sum();
        let m = s / lit(xv.len() as f64);
        self.push_op(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// Sum over the last dimension.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.last_dim();
        let out: Vec<T> = xv.data().chunks(n).map(|r| r.iter().copied().sum()).collect();
        let shape = match xv.shape() {
            [] => Vec::new(),
            s => s[..s.len() - 1].to_vec(),
        };
        let t = Tensor::new(shape, out).expect("outer shape");
        self.push_op(t, Op::SumLast(x), &[x])
    }

    /// One entry per row along the last dimension: `out[r] = x[r, indices[r]]`.
    pub fn pick(&mut self, x: Var, indices: &[usize]) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let n = xv.last_dim();
        if indices.len() != xv.outer_len() {
            return Err(shape_err(format!("pick: {} indices for {:?}", indices.len(), xv.shape())));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(AutodiffError::Index { index: bad, len: n });
        }
        let out: Vec<T> = indices.iter().enumerate().map(|(r, &c)| xv.data()[r * n + c]).collect();
        let shape = match xv.shape() {
            [] => Vec::new(),
            s => s[..s.len() - 1].to_vec(),
        };
        let t = Tensor::new(shape, out)?;
        Ok(self.push_op(t, Op::Pick(x, indices.to_vec()), &[x]))
    }

    // ----------------------------------------------------------- backward

    /// Reverse pass from a scalar `loss`. Gradients add onto whatever a
    /// previous call left behind until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !lv.is_finite() {
            return Err(AutodiffError::NonFinite(format!("loss value at node {}", loss.0)));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(gy) = self.grads[id].take() else { continue };
            backprop_node(&self.nodes, &mut self.grads, id, &gy);
            self.grads[id] = Some(gy);
        }
        for (id, g) in self.grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(AutodiffError::NonFinite(format!("gradient at node {id}")));
                }
            }
        }
        Ok(())
    }
}

type Grads<T> = [Option<Vec<T>>];

fn accumulate<T: Scalar>(nodes: &[Node<'_, T>], grads: &mut Grads<T>, v: Var, f: impl FnOnce(&mut [T])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let len = nodes[v.0].value.len();
    f(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]));
}

fn accumulate_with<T: Scalar>(nodes: &[Node<'_, T>], grads: &mut Grads<T>, v: Var, delta: impl Fn(usize) -> T) {
    accumulate(nodes, grads, v, |g| {
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = *gi + delta(i);
        }
    });
}

fn backprop_node<T: Scalar>(nodes: &[Node<'_, T>], grads: &mut Grads<T>, id: usize, gy: &[T]) {
    let val = |v: Var| -> &Tensor<T> { &nodes[v.0].value };
    let rg = |v: Var| nodes[v.0].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::MatMul { a, b, m, k, n } => {
            if rg(a) {
                accumulate(nodes, grads, a, |g| matmul_nt_acc(gy, val(b).data(), g, m, n, k));
            }
            if rg(b) {
                accumulate(nodes, grads, b, |g| matmul_tn_acc(val(a).data(), gy, g, m, k, n));
            }
        }
        &Op::MatMulT { a, b, m, k, n } => {
            if rg(a) {
                accumulate(nodes, grads, a, |g| matmul_acc(gy, val(b).data(), g, m, n, k));
            }
            if rg(b) {
                accumulate(nodes, grads, b, |g| matmul_tn_acc(gy, val(a).data(), g, m, n, k));
            }
        }
        &Op::Add(a, b) => {
            accumulate_with(nodes, grads, a, |i| gy[i]);
            accumulate_with(nodes, grads, b, |i| gy[i]);
        }
        &Op::AddRow(x, row) => {
            accumulate_with(nodes, grads, x, |i| gy[i]);
            let n = val(row).len();
            accumulate(nodes, grads, row, |g| {
                for (i, &v) in gy.iter().enumerate() {
                    g[i % n] = g[i % n] + v;
                }
            });
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (val(a).data(), val(b).data());
            accumulate_with(nodes, grads, a, |i| gy[i] * bv[i]);
            accumulate_with(nodes, grads, b, |i| gy[i] * av[i]);
        }
        Op::MulConst(x, factor) => accumulate_with(nodes, grads, *x, |i| gy[i] * factor[i]),
        &Op::Affine(x, scale) => accumulate_with(nodes, grads, x, |i| gy[i] * scale),
        &Op::Unary(x, f) => {
            let xv = val(x).data();
            let yv = nodes[id].value.data();
            let floor = lit::<T>(LOG_CLAMP);
            accumulate_with(nodes, grads, x, |i| {
                let d = match f {
                    Unary::Sigmoid => yv[i] * (T::one() - yv[i]),
                    Unary::Relu => {
                        if xv[i] > T::zero() {
                            T::one()
                        } else {
                            T::zero()
                        }
                    }
                    Unary::Gelu => gelu(xv[i]).1,
                    Unary::Log => {
                        if xv[i] > floor {
                            T::one() / xv[i]
                        } else {
                            T::zero()
                        }
                    }
                    Unary::LogSigmoid => sigmoid(-xv[i]),
                };
                gy[i] * d
            });
        }
        &Op::Softmax(x) => {
            let y = nodes[id].value.data();
            let n = nodes[id].value.last_dim();
            accumulate(nodes, grads, x, |g| {
                for ((gr, yr), gyr) in g.chunks_mut(n).zip(y.chunks(n)).zip(gy.chunks(n)) {
                    let dot: T = yr.iter().zip(gyr).map(|(&a, &b)| a * b).sum();
                    for c in 0..n {
                        gr[c] = gr[c] + yr[c] * (gyr[c] - dot);
                    }
                }
            });
        }
        &Op::LogSoftmax(x) => {
            let y = nodes[id].value.data();
            let n = nodes[id].value.last_dim();
            accumulate(nodes, grads, x, |g| {
                for ((gr, yr), gyr) in g.chunks_mut(n).zip(y.chunks(n)).zip(gy.chunks(n)) {
                    let total: T = gyr.iter().copied().sum();
                    for c in 0..n {
                        gr[c] = gr[c] + gyr[c] - yr[c].exp() * total;
                    }
                }
            });
        }
        &Op::LayerNorm { x, gamma, beta, eps } => {
            let xv = val(x).data();
            let gv = val(gamma).data();
            let n = gv.len();
            let nt: T = lit(n as f64);
            let mut dx = vec![T::zero(); xv.len()];
            let mut dgamma = vec![T::zero(); n];
            let mut dbeta = vec![T::zero(); n];
            let mut xhat = vec![T::zero(); n];
            for ((row, gyr), dxr) in xv.chunks(n).zip(gy.chunks(n)).zip(dx.chunks_mut(n)) {
                let (mean, inv_std) = row_stats(row, eps);
                for (h, &v) in xhat.iter_mut().zip(row) {
                    *h = (v - mean) * inv_std;
                }
                let mut sum_d = T::zero();
                let mut sum_dx = T::zero();
                for c in 0..n {
                    let d = gyr[c] * gv[c];
                    sum_d = sum_d + d;
                    sum_dx = sum_dx + d * xhat[c];
                    dgamma[c] = dgamma[c] + gyr[c] * xhat[c];
                    dbeta[c] = dbeta[c] + gyr[c];
                }
                let (md, mdx) = (sum_d / nt, sum_dx / nt);
                for c in 0..n {
                    dxr[c] = inv_std * (gyr[c] * gv[c] - md - xhat[c] * mdx);
                }
            }
            accumulate_with(nodes, grads, x, |i| dx[i]);
            accumulate_with(nodes, grads, gamma, |i| dgamma[i]);
            accumulate_with(nodes, grads, beta, |i| dbeta[i]);
        }
        Op::GatherRows(x, indices) => {
            let cols = val(*x).last_dim();
            accumulate(nodes, grads, *x, |g| {
                for (r, &src) in indices.iter().enumerate() {
                    let dst = &mut g[src * cols..(src + 1) * cols];
                    for (d, &v) in dst.iter_mut().zip(&gy[r * cols..(r + 1) * cols]) {
                        *d = *d + v;
                    }
                }
            });
        }
        Op::Concat(parts) => {
            let total: usize = parts.iter().map(|&p| val(p).last_dim()).sum();
            let mut offset = 0;
            for &p in parts {
                let w = val(p).last_dim();
                accumulate(nodes, grads, p, |g| {
                    for (r, gr) in g.chunks_mut(w).enumerate() {
                        let src = &gy[r * total + offset..r * total + offset + w];
                        for (d, &v) in gr.iter_mut().zip(src) {
                            *d = *d + v;
                        }
                    }
                });
                offset += w;
            }
        }
        &Op::SliceLast { x, start } => {
            let n = val(x).last_dim();
            let len = nodes[id].value.last_dim();
            accumulate(nodes, grads, x, |g| {
                for (gr, gyr) in g.chunks_mut(n).zip(gy.chunks(len)) {
                    for (d, &v) in gr[start..start + len].iter_mut().zip(gyr) {
                        *d = *d + v;
                    }
                }
            });
        }
        &Op::Sum(x) => accumulate_with(nodes, grads, x, |_| gy[0]),
        &Op::Mean(x) => {
            let scale = gy[0] / lit(val(x).len() as f64);
            accumulate_with(nodes, grads, x, |_| scale);
        }
        &Op::SumLast(x) => {
            let n = val(x).last_dim();
            accumulate_with(nodes, grads, x, |i| gy[i / n]);
        }
        Op::Pick(x, indices) => {
            let n = val(*x).last_dim();
            accumulate(nodes, grads, *x, |g| {
                for (r, &c) in indices.iter().enumerate() {
                    g[r * n + c] = g[r * n + c] + gy[r];
                }
            });
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// tanh-approximated GELU and its derivative.
fn gelu<T: Scalar>(x: T) -> (T, T) {
    let c: T = lit(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a: T = lit(0.044_715);
    let half: T = lit(0.5);
    let three: T = lit(3.0);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let y = half * x * (T::one() + t);
    let dinner = c * (T::one() + three * a * x * x);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * dinner;
    (y, dy)
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

fn row_stats<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let n: T = lit(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}
