//! Tape-based reverse-mode automatic differentiation over rank-2 tensors.
//!
//! Every operation appends a node holding its forward value. `backward` walks
//! the tape once in reverse and accumulates vector-Jacobian products into the
//! nodes that (transitively) depend on a leaf created with [`Tape::leaf`].
//! Nodes built only from [`Tape::constant`] values carry no gradient.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::math;
use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Const,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    Gelu(Var),
    Exp(Var),
    Log(Var),
    Softmax { a: Var, limits: Option<Vec<usize>> },
    LogSumExp(Var),
    Norm(Box<NormCache>),
    SqDist(Var, Var),
    Slice { a: Var, r0: usize, c0: usize },
    GatherRows { a: Var, idx: Vec<usize> },
    SetCols { a: Var, col: Var, cols: Vec<usize> },
    PickCols { a: Var, cols: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    SumRows(Var),
}

#[derive(Debug)]
struct NormCache {
    x: Var,
    gamma: Var,
    beta: Var,
    center: bool,
    xhat: Tensor,
    inv_std: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A Wengert list of tensor operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that needs one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the root
    /// through any differentiable path.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled when absent.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(rows, cols))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// `c (m×n) = op(a) (m×k) · op(b) (k×n)` with optional accumulation.
///
/// Every output entry is a left-to-right sum over `k` starting from `0.0`,
/// computed without fused multiply-add, and added to `c` only at the end.
/// Identical inputs therefore give identical bits whatever the shapes around
/// them, and a sum whose terms cancel in pairs is exactly zero.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // Pack op(b) as k×n row-major so the inner loop runs over contiguous
    // output columns; each entry still sums over k in order.
    let bt;
    let bm: &[f64] = if tb {
        let mut t = vec![0.0; k * n];
        for j in 0..n {
            for p in 0..k {
                t[p * n + j] = b[j * k + p];
            }
        }
        bt = t;
        &bt
    } else {
        b
    };
    let mut arow = vec![0.0; k];
    let mut row = vec![0.0; n];
    for i in 0..m {
        let ar: &[f64] = if ta {
            for (p, v) in arow.iter_mut().enumerate() {
                *v = a[p * m + i];
            }
            &arow
        } else {
            &a[i * k..(i + 1) * k]
        };
        row.iter_mut().for_each(|v| *v = 0.0);
        for (p, &av) in ar.iter().enumerate() {
            for (r, &bv) in row.iter_mut().zip(&bm[p * n..(p + 1) * n]) {
                *r += av * bv;
            }
        }
        let out = &mut c[i * n..(i + 1) * n];
        if accumulate {
            out.iter_mut().zip(&row).for_each(|(o, &r)| *o += r);
        } else {
            out.copy_from_slice(&row);
        }
    }
}

/// Left-to-right sum starting from `0.0`, matching [`gemm`].
#[inline]
fn seq_sum(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for &x in xs {
        s += x;
    }
    s
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GeLU, tanh approximation: `½x(1 + tanh(√(2/π)(x + 0.044715x³)))`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + math::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

/// Derivative of [`gelu`].
#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = math::tanh(u);
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn shape_err(what: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::invalid(format!(
        "{what}: incompatible shapes {}x{} and {}x{}",
        a.rows(),
        a.cols(),
        b.rows(),
        b.cols()
    ))
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_general(a, b, false, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_general(a, b, false, true)
    }

    /// `aᵀ · b`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_general(a, b, true, false)
    }

    fn matmul_general(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(shape_err("matmul", self.value(a), self.value(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), ta, self.value(b).data(), tb, &mut out, false);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul { a, b, ta, tb }, ng))
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(shape_err(what, va, vb));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::matrix(va.rows(), va.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    /// `a + 1·row`: adds a `1 × C` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(row) != (1, c) {
            return Err(shape_err("add_row", self.value(a), self.value(row)));
        }
        let rv = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..r {
            for (o, &x) in out[i * c..(i + 1) * c].iter_mut().zip(rv) {
                *o += x;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::AddRow(a, row), ng))
    }

    /// `a + col·1ᵀ`: adds the `R × 1` column to every column of `a`.
    pub fn add_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(col) != (r, 1) {
            return Err(shape_err("add_col", self.value(a), self.value(col)));
        }
        let cv = self.value(col).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..r {
            out[i * c..(i + 1) * c].iter_mut().for_each(|o| *o += cv[i]);
        }
        let ng = self.ng(a) || self.ng(col);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::AddCol(a, col), ng))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(col) != (r, 1) {
            return Err(shape_err("mul_col", self.value(a), self.value(col)));
        }
        let cv = self.value(col).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..r {
            out[i * c..(i + 1) * c].iter_mut().for_each(|o| *o *= cv[i]);
        }
        let ng = self.ng(a) || self.ng(col);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::MulCol(a, col), ng))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(gelu);
        let ng = self.ng(a);
        self.push(t, Op::Gelu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(math::exp);
        let ng = self.ng(a);
        self.push(t, Op::Exp(a), ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let t = self.value(a).map(math::ln);
        let ng = self.ng(a);
        self.push(t, Op::Log(a), ng)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).data().to_vec();
        for i in 0..r {
            super::stable::softmax_in_place(&mut out[i * c..(i + 1) * c]);
        }
        let ng = self.ng(a);
        self.push(Tensor::matrix(r, c, out).expect("shape"), Op::Softmax { a, limits: None }, ng)
    }

    /// Row-wise softmax over a prefix: row `i` uses columns `0..limits[i]`
    /// and the remaining entries are exactly zero. Values in masked columns
    /// never touch the result, which is what makes causal attention exact.
    pub fn masked_softmax_rows(&mut self, a: Var, limits: Vec<usize>) -> Result<Var> {
        let (r, c) = self.dims(a);
        if limits.len() != r {
            return Err(Error::DimensionMismatch { expected: r, got: limits.len() });
        }
        if limits.iter().any(|&l| l == 0 || l > c) {
            return Err(Error::invalid("masked_softmax_rows: limits must lie in 1..=cols"));
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let l = limits[i];
            let row = &mut out[i * c..i * c + l];
            row.copy_from_slice(&src[i * c..i * c + l]);
            super::stable::softmax_in_place(row);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::Softmax { a, limits: Some(limits) }, ng))
    }

    /// Row-wise log-sum-exp, producing an `R × 1` column.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let src = self.value(a).data();
        let out: Vec<f64> =
            (0..r).map(|i| super::stable::lse_unchecked(&src[i * c..(i + 1) * c])).collect();
        let ng = self.ng(a);
        self.push(Tensor::column(out), Op::LogSumExp(a), ng)
    }

    /// Row-wise LayerNorm `γ ⊙ (x − mean)/√(var + ε) + δ` with `1 × C`
    /// parameters. With `center = false` the mean is not subtracted and the
    /// second moment replaces the variance (RMS norm).
    pub fn layer_norm_rows(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        center: bool,
    ) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(gamma) != (1, c) || self.dims(beta) != (1, c) {
            return Err(shape_err("layer_norm_rows", self.value(x), self.value(gamma)));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; r * c];
        let mut out = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = if center { row.iter().sum::<f64>() / c as f64 } else { 0.0 };
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / math::sqrt(var + eps);
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let cache =
            NormCache { x, gamma, beta, center, xhat: Tensor::matrix(r, c, xhat)?, inv_std };
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::Norm(Box::new(cache)), ng))
    }

    /// Pairwise squared distances between the rows of `a` (N×D) and `b` (K×D).
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self.dims(a);
        let (k, d2) = self.dims(b);
        if d != d2 {
            return Err(shape_err("sq_dist", self.value(a), self.value(b)));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            for j in 0..k {
                out[i * k + j] = super::vec::sq_dist(&va[i * d..(i + 1) * d], &vb[j * d..(j + 1) * d]);
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(n, k, out)?, Op::SqDist(a, b), ng))
    }

    /// Sub-block `rows.0..rows.1 × cols.0..cols.1`.
    pub fn slice(&mut self, a: Var, rows: (usize, usize), cols: (usize, usize)) -> Result<Var> {
        let (r, c) = self.dims(a);
        if rows.0 > rows.1 || rows.1 > r || cols.0 > cols.1 || cols.1 > c {
            return Err(Error::invalid("slice out of bounds"));
        }
        let (nr, nc) = (rows.1 - rows.0, cols.1 - cols.0);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(nr * nc);
        for i in rows.0..rows.1 {
            out.extend_from_slice(&src[i * c + cols.0..i * c + cols.1]);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(nr, nc, out)?, Op::Slice { a, r0: rows.0, c0: cols.0 }, ng))
    }

    /// Rows `idx[0], idx[1], ...` of `a`, repeats allowed.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if idx.iter().any(|&i| i >= r) {
            return Err(Error::invalid("gather_rows: index out of range"));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(idx.len(), c, out)?, Op::GatherRows { a, idx: idx.to_vec() }, ng))
    }

    /// Copy of `a` with entry `(i, cols[i])` replaced by `col[i]`.
    pub fn set_cols(&mut self, a: Var, col: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(col) != (r, 1) {
            return Err(shape_err("set_cols", self.value(a), self.value(col)));
        }
        if cols.len() != r || cols.iter().any(|&j| j >= c) {
            return Err(Error::invalid("set_cols: one in-range column per row"));
        }
        let mut out = self.value(a).data().to_vec();
        let cv = self.value(col).data();
        for (i, &j) in cols.iter().enumerate() {
            out[i * c + j] = cv[i];
        }
        let ng = self.ng(a) || self.ng(col);
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::SetCols { a, col, cols: cols.to_vec() }, ng))
    }

    /// The `R × 1` column of entries `(i, cols[i])`.
    pub fn pick_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if cols.len() != r || cols.iter().any(|&j| j >= c) {
            return Err(Error::invalid("pick_cols: one in-range column per row"));
        }
        let src = self.value(a).data();
        let out = cols.iter().enumerate().map(|(i, &j)| src[i * c + j]).collect();
        let ng = self.ng(a);
        Ok(self.push(Tensor::column(out), Op::PickCols { a, cols: cols.to_vec() }, ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let c = self.dims(*first).1;
        let mut out = Vec::new();
        let mut r = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pc != c {
                return Err(shape_err("concat_rows", self.value(*first), self.value(p)));
            }
            out.extend_from_slice(self.value(p).data());
            r += pr;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let r = self.dims(*first).0;
        let mut c = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pr != r {
                return Err(shape_err("concat_cols", self.value(*first), self.value(p)));
            }
            c += pc;
        }
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Sum of all entries as a `1 × 1` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = seq_sum(self.value(a).data());
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums as an `R × 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let src = self.value(a).data();
        let out = (0..r).map(|i| seq_sum(&src[i * c..(i + 1) * c])).collect();
        let ng = self.ng(a);
        self.push(Tensor::column(out), Op::SumRows(a), ng)
    }

    /// Reverse pass from a `1 × 1` root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if rv.len() != 1 {
            return Err(Error::ContractViolation(format!(
                "backward needs a scalar root, got {}x{}",
                rv.rows(),
                rv.cols()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => t.data_mut().iter_mut().zip(delta.data()).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(delta),
            }
        };
        let gd = g.data();
        let (gr, gc) = (g.rows(), g.cols());
        match &node.op {
            Op::Leaf | Op::Const => {}
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, n) = (gr, gc);
                let k = if *ta { va.rows() } else { va.cols() };
                if self.ng(*a) {
                    // d op(a) = g · op(b)ᵀ; when a is stored transposed, da = op(b) · gᵀ.
                    let mut da = vec![0.0; va.len()];
                    if *ta {
                        gemm(k, n, m, vb.data(), *tb, gd, true, &mut da, false);
                    } else {
                        gemm(m, n, k, gd, false, vb.data(), !*tb, &mut da, false);
                    }
                    acc(*a, Tensor::matrix(va.rows(), va.cols(), da).expect("shape"));
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; vb.len()];
                    if *tb {
                        gemm(n, m, k, gd, true, va.data(), *ta, &mut db, false);
                    } else {
                        gemm(k, m, n, va.data(), !*ta, gd, false, &mut db, false);
                    }
                    acc(*b, Tensor::matrix(vb.rows(), vb.cols(), db).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let d = gd.iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                    acc(*a, Tensor::matrix(gr, gc, d).expect("shape"));
                }
                if self.ng(*b) {
                    let d = gd.iter().zip(va.data()).map(|(x, y)| x * y).collect();
                    acc(*b, Tensor::matrix(gr, gc, d).expect("shape"));
                }
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.ng(*row) {
                    let mut d = vec![0.0; gc];
                    for i in 0..gr {
                        d.iter_mut().zip(&gd[i * gc..(i + 1) * gc]).for_each(|(s, x)| *s += x);
                    }
                    acc(*row, Tensor::row(d));
                }
            }
            Op::AddCol(a, col) => {
                acc(*a, g.clone());
                if self.ng(*col) {
                    let d = (0..gr).map(|i| gd[i * gc..(i + 1) * gc].iter().sum()).collect();
                    acc(*col, Tensor::column(d));
                }
            }
            Op::MulCol(a, col) => {
                let cv = self.value(*col).data();
                if self.ng(*a) {
                    let mut d = gd.to_vec();
                    for i in 0..gr {
                        d[i * gc..(i + 1) * gc].iter_mut().for_each(|x| *x *= cv[i]);
                    }
                    acc(*a, Tensor::matrix(gr, gc, d).expect("shape"));
                }
                if self.ng(*col) {
                    let va = self.value(*a).data();
                    let d = (0..gr)
                        .map(|i| {
                            super::vec::dot(&gd[i * gc..(i + 1) * gc], &va[i * gc..(i + 1) * gc])
                        })
                        .collect();
                    acc(*col, Tensor::column(d));
                }
            }
            Op::Gelu(a) => {
                let va = self.value(*a).data();
                let d = gd.iter().zip(va).map(|(x, &v)| x * gelu_grad(v)).collect();
                acc(*a, Tensor::matrix(gr, gc, d).expect("shape"));
            }
            Op::Exp(a) => {
                let d = gd.iter().zip(node.value.data()).map(|(x, y)| x * y).collect();
                acc(*a, Tensor::matrix(gr, gc, d).expect("shape"));
            }
            Op::Log(a) => {
                let va = self.value(*a).data();
                let d = gd.iter().zip(va).map(|(x, v)| x / v).collect();
                acc(*a, Tensor::matrix(gr, gc, d).expect("shape"));
            }
            Op::Softmax { a, limits } => {
                let y = node.value.data();
                let mut d = vec![0.0; gr * gc];
                for i in 0..gr {
                    let l = limits.as_ref().map_or(gc, |ls| ls[i]);
                    let (yr, gr_) = (&y[i * gc..i * gc + l], &gd[i * gc..i * gc + l]);
                    let s = super::vec::dot(yr, gr_);
                    for j in 0..l {
                        d[i * gc + j] = yr[j] * (gr_[j] - s);
                    }
                }
                acc(*a, Tensor::matrix(gr, gc, d).expect("shape"));
            }
            Op::LogSumExp(a) => {
                let va = self.value(*a);
                let c = va.cols();
                let mut d = va.data().to_vec();
                for i in 0..va.rows() {
                    let row = &mut d[i * c..(i + 1) * c];
                    super::stable::softmax_in_place(row);
                    row.iter_mut().for_each(|x| *x *= gd[i]);
                }
                acc(*a, Tensor::matrix(va.rows(), c, d).expect("shape"));
            }
            Op::Norm(cache) => {
                let NormCache { x, gamma, beta, center, xhat, inv_std } = cache.as_ref();
                let gam = self.value(*gamma).data();
                let xh = xhat.data();
                if self.ng(*gamma) {
                    let mut d = vec![0.0; gc];
                    for i in 0..gr {
                        for j in 0..gc {
                            d[j] += gd[i * gc + j] * xh[i * gc + j];
                        }
                    }
                    acc(*gamma, Tensor::row(d));
                }
                if self.ng(*beta) {
                    let mut d = vec![0.0; gc];
                    for i in 0..gr {
                        d.iter_mut().zip(&gd[i * gc..(i + 1) * gc]).for_each(|(s, v)| *s += v);
                    }
                    acc(*beta, Tensor::row(d));
                }
                if self.ng(*x) {
                    let mut d = vec![0.0; gr * gc];
                    let cf = gc as f64;
                    for i in 0..gr {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..gc {
                            let dh = gd[i * gc + j] * gam[j];
                            m1 += dh;
                            m2 += dh * xh[i * gc + j];
                        }
                        m1 /= cf;
                        m2 /= cf;
                        for j in 0..gc {
                            let dh = gd[i * gc + j] * gam[j];
                            let centered = if *center { dh - m1 } else { dh };
                            d[i * gc + j] = inv_std[i] * (centered - xh[i * gc + j] * m2);
                        }
                    }
                    acc(*x, Tensor::matrix(gr, gc, d).expect("shape"));
                }
            }
            Op::SqDist(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let dd = va.cols();
                let (n, k) = (gr, gc);
                let mut da = vec![0.0; va.len()];
                let mut db = vec![0.0; vb.len()];
                for i in 0..n {
                    for j in 0..k {
                        let w = 2.0 * gd[i * k + j];
                        if w == 0.0 {
                            continue;
                        }
                        for t in 0..dd {
                            let diff = va.data()[i * dd + t] - vb.data()[j * dd + t];
                            da[i * dd + t] += w * diff;
                            db[j * dd + t] -= w * diff;
                        }
                    }
                }
                acc(*a, Tensor::matrix(n, dd, da).expect("shape"));
                acc(*b, Tensor::matrix(k, dd, db).expect("shape"));
            }
            Op::Slice { a, r0, c0 } => {
                let (ar, ac) = self.dims(*a);
                let mut d = vec![0.0; ar * ac];
                for i in 0..gr {
                    d[(r0 + i) * ac + c0..(r0 + i) * ac + c0 + gc]
                        .copy_from_slice(&gd[i * gc..(i + 1) * gc]);
                }
                acc(*a, Tensor::matrix(ar, ac, d).expect("shape"));
            }
            Op::GatherRows { a, idx } => {
                let (ar, ac) = self.dims(*a);
                let mut d = vec![0.0; ar * ac];
                for (i, &src) in idx.iter().enumerate() {
                    d[src * ac..(src + 1) * ac]
                        .iter_mut()
                        .zip(&gd[i * gc..(i + 1) * gc])
                        .for_each(|(s, v)| *s += v);
                }
                acc(*a, Tensor::matrix(ar, ac, d).expect("shape"));
            }
            Op::SetCols { a, col, cols } => {
                if self.ng(*a) {
                    let mut d = gd.to_vec();
                    for (i, &j) in cols.iter().enumerate() {
                        d[i * gc + j] = 0.0;
                    }
                    acc(*a, Tensor::matrix(gr, gc, d).expect("shape"));
                }
                if self.ng(*col) {
                    let d = cols.iter().enumerate().map(|(i, &j)| gd[i * gc + j]).collect();
                    acc(*col, Tensor::column(d));
                }
            }
            Op::PickCols { a, cols } => {
                let (ar, ac) = self.dims(*a);
                let mut d = vec![0.0; ar * ac];
                for (i, &j) in cols.iter().enumerate() {
                    d[i * ac + j] = gd[i];
                }
                acc(*a, Tensor::matrix(ar, ac, d).expect("shape"));
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (pr, pc) = self.dims(p);
                    let d = gd[off * pc..(off + pr) * pc].to_vec();
                    acc(p, Tensor::matrix(pr, pc, d).expect("shape"));
                    off += pr;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (pr, pc) = self.dims(p);
                    let mut d = Vec::with_capacity(pr * pc);
                    for i in 0..pr {
                        d.extend_from_slice(&gd[i * gc + off..i * gc + off + pc]);
                    }
                    acc(p, Tensor::matrix(pr, pc, d).expect("shape"));
                    off += pc;
                }
            }
            Op::Sum(a) => {
                let (ar, ac) = self.dims(*a);
                acc(*a, Tensor::filled(ar, ac, gd[0]));
            }
            Op::SumRows(a) => {
                let (ar, ac) = self.dims(*a);
                let mut d = vec![0.0; ar * ac];
                for i in 0..ar {
                    d[i * ac..(i + 1) * ac].iter_mut().for_each(|x| *x = gd[i]);
                }
                acc(*a, Tensor::matrix(ar, ac, d).expect("shape"));
            }
        }
    }
}
