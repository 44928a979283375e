//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Values are appended to a [`Tape`] in creation order, which is already a
//! topological order of the computation: every op only references earlier
//! entries. [`Tape::backward`] walks the tape once in reverse and accumulates
//! gradients into every entry that (transitively) depends on a
//! `requires_grad` leaf.
//!
//! Broadcasting is limited to a right-hand operand that is a row vector
//! `[1 × c]`, a column vector `[r × 1]` or a scalar `[1 × 1]`.

use std::sync::Arc;

use super::{Matrix, TensorError};
use crate::rng::Rng;

/// Handle to an entry on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Full,
    Row,
    Col,
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Var, Var),
    RowSelect(Var, Arc<[usize]>),
    Transpose(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Square(Var),
    Recip(Var),
    Mask(Var, Vec<f64>),
    Identity(Var),
    Mean(Var),
    Sum(Var),
    RowSum(Var),
    L2NormRows(Var),
    LogSoftmaxRows(Var),
    SoftmaxRows(Var),
    SegmentSoftmax(Var, Arc<[usize]>),
    ScatterSum(Var, Arc<[usize]>),
    Pick(Var, Arc<[(usize, usize)]>),
    StandardizeCols(Var, Vec<f64>),
    RowCosSq(Var, Var),
    EdgeAttention {
        z: Var,
        attn: Var,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
        slope: f64,
    },
    GatherScatter {
        x: Var,
        coef: Var,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Variance floor used by [`Tape::standardize_cols`].
pub const STANDARDIZE_EPS: f64 = 1e-8;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
    backward_done: bool,
}

fn bcast_kind(op: &'static str, lhs: &Matrix, rhs: &Matrix) -> Result<Bcast, TensorError> {
    let (r, c) = lhs.shape();
    match rhs.shape() {
        s if s == (r, c) => Ok(Bcast::Full),
        (1, cc) if cc == c => Ok(Bcast::Row),
        (rr, 1) if rr == r => Ok(Bcast::Col),
        (1, 1) => Ok(Bcast::Scalar),
        _ => Err(TensorError::Shape {
            op,
            lhs: lhs.shape(),
            rhs: rhs.shape(),
        }),
    }
}

fn broadcast_zip(a: &Matrix, b: &Matrix, kind: Bcast, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let (rows, cols) = a.shape();
    let (av, bv) = (a.as_slice(), b.as_slice());
    let mut out = Vec::with_capacity(rows * cols);
    match kind {
        Bcast::Full => out.extend(av.iter().zip(bv).map(|(&x, &y)| f(x, y))),
        Bcast::Row => {
            for row in av.chunks_exact(cols.max(1)) {
                out.extend(row.iter().zip(bv).map(|(&x, &y)| f(x, y)));
            }
        }
        Bcast::Col => {
            for (row, &y) in av.chunks_exact(cols.max(1)).zip(bv) {
                out.extend(row.iter().map(|&x| f(x, y)));
            }
        }
        Bcast::Scalar => {
            let y = bv[0];
            out.extend(av.iter().map(|&x| f(x, y)));
        }
    }
    Matrix::from_vec(rows, cols, out)
}

/// Sum a full-shape gradient down to the broadcast operand's shape.
fn reduce_to(g: &Matrix, kind: Bcast) -> Matrix {
    match kind {
        Bcast::Full => g.clone(),
        Bcast::Row => {
            let mut out = Matrix::zeros(1, g.cols());
            for r in 0..g.rows() {
                for (o, v) in out.as_mut_slice().iter_mut().zip(g.row(r)) {
                    *o += v;
                }
            }
            out
        }
        Bcast::Col => {
            let sums: Vec<f64> = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
            Matrix::column(&sums)
        }
        Bcast::Scalar => Matrix::scalar(g.sum()),
    }
}

fn row_softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient, `None` for entries that received none.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Clear accumulated gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    // ---- binary ops -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let out = va.matmul(vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let kind = bcast_kind("add", self.value(a), self.value(b))?;
        let out = broadcast_zip(self.value(a), self.value(b), kind, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b, kind), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let kind = bcast_kind("sub", self.value(a), self.value(b))?;
        let out = broadcast_zip(self.value(a), self.value(b), kind, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b, kind), rg))
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let kind = bcast_kind("hadamard", self.value(a), self.value(b))?;
        let out = broadcast_zip(self.value(a), self.value(b), kind, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b, kind), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(TensorError::Shape {
                op: "concat_cols",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let (ca, cb) = (va.cols(), vb.cols());
        let mut out = Matrix::zeros(va.rows(), ca + cb);
        for r in 0..va.rows() {
            let row = out.row_mut(r);
            row[..ca].copy_from_slice(va.row(r));
            row[ca..].copy_from_slice(vb.row(r));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    /// Squared cosine similarity of matching rows, `[r × 1]`. Rows where
    /// either side is the zero vector give 0.
    pub fn row_cos_sq(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::Shape {
                op: "row_cos_sq",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let vals: Vec<f64> = (0..va.rows())
            .map(|r| {
                let (x, y) = (va.row(r), vb.row(r));
                let d: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                let p: f64 = x.iter().map(|v| v * v).sum();
                let q: f64 = y.iter().map(|v| v * v).sum();
                if p == 0.0 || q == 0.0 {
                    0.0
                } else {
                    d * d / (p * q)
                }
            })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Matrix::column(&vals), Op::RowCosSq(a, b), rg))
    }

    // ---- unary ops --------------------------------------------------------

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    /// Gather rows by index (repeats allowed).
    pub fn row_select(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var, TensorError> {
        let va = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= va.rows()) {
            return Err(TensorError::Index {
                op: "row_select",
                index: bad,
                bound: va.rows(),
            });
        }
        let out = va.select_rows(&idx);
        let rg = self.rg(a);
        Ok(self.push(out, Op::RowSelect(a, idx), rg))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(a);
        self.push(out, Op::LeakyRelu(a, slope), rg)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { x.exp_m1() });
        let rg = self.rg(a);
        self.push(out, Op::Elu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(out, Op::Square(a), rg)
    }

    /// Elementwise `1 / a`.
    pub fn recip(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 / x);
        let rg = self.rg(a);
        self.push(out, Op::Recip(a), rg)
    }

    /// Inverted dropout: entries are zeroed with probability `p` and the
    /// survivors scaled by `1/(1-p)`. `p == 0` returns `a` unchanged and
    /// consumes no randomness.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut Rng) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let va = self.value(a);
        let out = Matrix::from_vec(
            va.rows(),
            va.cols(),
            va.as_slice().iter().zip(&mask).map(|(x, m)| x * m).collect(),
        );
        let rg = self.rg(a);
        Ok(self.push(out, Op::Mask(a, mask), rg))
    }

    /// Additive `N(0, sigma²)` noise; the gradient passes straight through.
    /// `sigma == 0` returns `a` unchanged and consumes no randomness.
    pub fn gaussian_noise(&mut self, a: Var, sigma: f64, rng: &mut Rng) -> Result<Var, TensorError> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(TensorError::InvalidArgument(format!(
                "noise sigma {sigma} must be finite and >= 0"
            )));
        }
        if sigma == 0.0 {
            return Ok(a);
        }
        let out = self.value(a).map(|x| x + sigma * rng.normal());
        let rg = self.rg(a);
        Ok(self.push(out, Op::Identity(a), rg))
    }

    /// Mean of all entries, `[1 × 1]`.
    pub fn reduce_mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let m = if va.is_empty() { 0.0 } else { va.sum() / va.len() as f64 };
        let rg = self.rg(a);
        self.push(Matrix::scalar(m), Op::Mean(a), rg)
    }

    /// Sum of all entries, `[1 × 1]`.
    pub fn reduce_sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Matrix::scalar(s), Op::Sum(a), rg)
    }

    /// Per-row sums, `[r × 1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let sums: Vec<f64> = (0..va.rows()).map(|r| va.row(r).iter().sum()).collect();
        let rg = self.rg(a);
        self.push(Matrix::column(&sums), Op::RowSum(a), rg)
    }

    /// Euclidean norm of each row, `[r × 1]`.
    pub fn l2_norm_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let norms: Vec<f64> = (0..va.rows())
            .map(|r| va.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let rg = self.rg(a);
        self.push(Matrix::column(&norms), Op::L2NormRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = va.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmaxRows(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = row_softmax(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// Gather single entries `(row, col)` into a column vector.
    pub fn pick(&mut self, a: Var, idx: Arc<[(usize, usize)]>) -> Result<Var, TensorError> {
        let va = self.value(a);
        let mut vals = Vec::with_capacity(idx.len());
        for &(r, c) in idx.iter() {
            if r >= va.rows() || c >= va.cols() {
                return Err(TensorError::Index {
                    op: "pick",
                    index: r.max(c),
                    bound: va.rows().max(va.cols()),
                });
            }
            vals.push(va.get(r, c));
        }
        let rg = self.rg(a);
        Ok(self.push(Matrix::column(&vals), Op::Pick(a, idx), rg))
    }

    /// Column-wise standardisation `(x - mean) / sqrt(var + eps)` with the
    /// biased (population) variance.
    pub fn standardize_cols(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (n, c) = va.shape();
        let mut out = va.clone();
        let mut inv_std = vec![0.0; c];
        if n > 0 {
            for (j, inv) in inv_std.iter_mut().enumerate() {
                let mean = (0..n).map(|i| va.get(i, j)).sum::<f64>() / n as f64;
                let var = (0..n).map(|i| (va.get(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
                *inv = 1.0 / (var + STANDARDIZE_EPS).sqrt();
                for i in 0..n {
                    out.set(i, j, (va.get(i, j) - mean) * *inv);
                }
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::StandardizeCols(a, inv_std), rg)
    }

    /// Softmax of `logits` (a column vector, one entry per edge) within each
    /// group of entries sharing a target. Max-subtracted per group.
    pub fn segment_softmax(
        &mut self,
        logits: Var,
        targets: Arc<[usize]>,
        num_nodes: usize,
    ) -> Result<Var, TensorError> {
        let vl = self.value(logits);
        if vl.cols() != 1 || vl.rows() != targets.len() {
            return Err(TensorError::Shape {
                op: "segment_softmax",
                lhs: vl.shape(),
                rhs: (targets.len(), 1),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= num_nodes) {
            return Err(TensorError::Index {
                op: "segment_softmax",
                index: bad,
                bound: num_nodes,
            });
        }
        let out = segment_softmax_values(vl.as_slice(), &targets, num_nodes);
        let rg = self.rg(logits);
        Ok(self.push(Matrix::column(&out), Op::SegmentSoftmax(logits, targets), rg))
    }

    /// Row `t` of the output is the sum of message rows whose target is `t`.
    pub fn scatter_sum(
        &mut self,
        messages: Var,
        targets: Arc<[usize]>,
        num_nodes: usize,
    ) -> Result<Var, TensorError> {
        let vm = self.value(messages);
        if vm.rows() != targets.len() {
            return Err(TensorError::Shape {
                op: "scatter_sum",
                lhs: vm.shape(),
                rhs: (targets.len(), vm.cols()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= num_nodes) {
            return Err(TensorError::Index {
                op: "scatter_sum",
                index: bad,
                bound: num_nodes,
            });
        }
        let mut out = Matrix::zeros(num_nodes, vm.cols());
        for (e, &t) in targets.iter().enumerate() {
            for (o, v) in out.row_mut(t).iter_mut().zip(vm.row(e)) {
                *o += v;
            }
        }
        let rg = self.rg(messages);
        Ok(self.push(out, Op::ScatterSum(messages, targets), rg))
    }

    fn check_edges(
        op: &'static str,
        src: &[usize],
        dst: &[usize],
        src_bound: usize,
        dst_bound: usize,
    ) -> Result<(), TensorError> {
        if src.len() != dst.len() {
            return Err(TensorError::Shape {
                op,
                lhs: (src.len(), 1),
                rhs: (dst.len(), 1),
            });
        }
        for (idx, bound) in [(src, src_bound), (dst, dst_bound)] {
            if let Some(&bad) = idx.iter().find(|&&i| i >= bound) {
                return Err(TensorError::Index { op, index: bad, bound });
            }
        }
        Ok(())
    }

    /// Per-edge attention logits `e_k = Σ_j attn_j · leaky(z[dst_k, j] + z[src_k, j])`
    /// as an `[E × 1]` column; `attn` is `[h × 1]`.
    pub fn edge_attention(
        &mut self,
        z: Var,
        attn: Var,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
        slope: f64,
    ) -> Result<Var, TensorError> {
        let (vz, va) = (self.value(z), self.value(attn));
        if va.shape() != (vz.cols(), 1) {
            return Err(TensorError::Shape {
                op: "edge_attention",
                lhs: vz.shape(),
                rhs: va.shape(),
            });
        }
        Self::check_edges("edge_attention", &src, &dst, vz.rows(), vz.rows())?;
        let a = va.as_slice();
        let out: Vec<f64> = src
            .iter()
            .zip(dst.iter())
            .map(|(&s, &d)| {
                vz.row(d)
                    .iter()
                    .zip(vz.row(s))
                    .zip(a)
                    .map(|((&zd, &zs), &aj)| {
                        let p = zd + zs;
                        aj * if p > 0.0 { p } else { slope * p }
                    })
                    .sum()
            })
            .collect();
        let rg = self.rg(z) || self.rg(attn);
        Ok(self.push(
            Matrix::column(&out),
            Op::EdgeAttention {
                z,
                attn,
                src,
                dst,
                slope,
            },
            rg,
        ))
    }

    /// Row `t` of the output is `Σ_{k : dst_k = t} coef_k · x[src_k]`;
    /// `coef` is `[E × 1]`.
    pub fn gather_scatter(
        &mut self,
        x: Var,
        coef: Var,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
        num_nodes: usize,
    ) -> Result<Var, TensorError> {
        let (vx, vc) = (self.value(x), self.value(coef));
        if vc.shape() != (src.len(), 1) {
            return Err(TensorError::Shape {
                op: "gather_scatter",
                lhs: vx.shape(),
                rhs: vc.shape(),
            });
        }
        Self::check_edges("gather_scatter", &src, &dst, vx.rows(), num_nodes)?;
        let mut out = Matrix::zeros(num_nodes, vx.cols());
        for ((&s, &d), &c) in src.iter().zip(dst.iter()).zip(vc.as_slice()) {
            for (o, v) in out.row_mut(d).iter_mut().zip(vx.row(s)) {
                *o += c * v;
            }
        }
        let rg = self.rg(x) || self.rg(coef);
        Ok(self.push(out, Op::GatherScatter { x, coef, src, dst }, rg))
    }

    // ---- backward ---------------------------------------------------------

    /// Accumulate `d loss / d v` for every entry that depends on a trainable
    /// leaf. Errors on a non-scalar loss or a second call without
    /// [`reset_grads`](Self::reset_grads).
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss {
                rows: shape.0,
                cols: shape.1,
            });
        }
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(Matrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Matrix) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, i: usize, g: &Matrix) {
        let nodes = &self.nodes;
        let y = &nodes[i].value;
        let mut out: Vec<(Var, Matrix)> = Vec::with_capacity(2);
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if nodes[a.0].requires_grad {
                    out.push((*a, g.matmul_nt(&nodes[b.0].value)));
                }
                if nodes[b.0].requires_grad {
                    out.push((*b, nodes[a.0].value.matmul_tn(g)));
                }
            }
            Op::Add(a, b, kind) => {
                out.push((*a, g.clone()));
                if nodes[b.0].requires_grad {
                    out.push((*b, reduce_to(g, *kind)));
                }
            }
            Op::Sub(a, b, kind) => {
                out.push((*a, g.clone()));
                if nodes[b.0].requires_grad {
                    out.push((*b, reduce_to(g, *kind).map(|x| -x)));
                }
            }
            Op::Mul(a, b, kind) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                if nodes[a.0].requires_grad {
                    out.push((*a, broadcast_zip(g, vb, *kind, |gv, bv| gv * bv)));
                }
                if nodes[b.0].requires_grad {
                    out.push((*b, reduce_to(&g.zip_map(va, |gv, av| gv * av), *kind)));
                }
            }
            Op::Scale(a, s) => out.push((*a, g.map(|x| x * s))),
            Op::AddScalar(a) | Op::Identity(a) => out.push((*a, g.clone())),
            Op::ConcatCols(a, b) => {
                let ca = nodes[a.0].value.cols();
                let cb = nodes[b.0].value.cols();
                let mut ga = Matrix::zeros(g.rows(), ca);
                let mut gb = Matrix::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::RowSelect(a, idx) => {
                let va = &nodes[a.0].value;
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                for (k, &src) in idx.iter().enumerate() {
                    for (o, v) in ga.row_mut(src).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                out.push((*a, ga));
            }
            Op::Transpose(a) => out.push((*a, g.transpose())),
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                out.push((*a, g.zip_map(&nodes[a.0].value, |gv, x| if x > 0.0 { gv } else { s * gv })));
            }
            Op::Elu(a) => {
                let ga = g.zip_map(&nodes[a.0].value, |gv, x| if x > 0.0 { gv } else { gv * x.exp() });
                out.push((*a, ga));
            }
            Op::Sigmoid(a) => out.push((*a, g.zip_map(y, |gv, s| gv * s * (1.0 - s)))),
            Op::Tanh(a) => out.push((*a, g.zip_map(y, |gv, t| gv * (1.0 - t * t)))),
            Op::Square(a) => out.push((*a, g.zip_map(&nodes[a.0].value, |gv, x| 2.0 * x * gv))),
            Op::Recip(a) => out.push((*a, g.zip_map(y, |gv, r| -gv * r * r))),
            Op::Mask(a, mask) => {
                let ga = Matrix::from_vec(
                    g.rows(),
                    g.cols(),
                    g.as_slice().iter().zip(mask).map(|(gv, m)| gv * m).collect(),
                );
                out.push((*a, ga));
            }
            Op::Mean(a) => {
                let (r, c) = nodes[a.0].value.shape();
                let n = (r * c).max(1) as f64;
                out.push((*a, Matrix::filled(r, c, g.item() / n)));
            }
            Op::Sum(a) => {
                let (r, c) = nodes[a.0].value.shape();
                out.push((*a, Matrix::filled(r, c, g.item())));
            }
            Op::RowSum(a) => {
                let (r, c) = nodes[a.0].value.shape();
                let mut ga = Matrix::zeros(r, c);
                for row in 0..r {
                    ga.row_mut(row).fill(g.get(row, 0));
                }
                out.push((*a, ga));
            }
            Op::L2NormRows(a) => {
                let va = &nodes[a.0].value;
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                for r in 0..va.rows() {
                    let n = y.get(r, 0);
                    if n > 0.0 {
                        let s = g.get(r, 0) / n;
                        for (o, x) in ga.row_mut(r).iter_mut().zip(va.row(r)) {
                            *o = s * x;
                        }
                    }
                }
                out.push((*a, ga));
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = g.clone();
                for r in 0..y.rows() {
                    let gs: f64 = g.row(r).iter().sum();
                    for (o, ly) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                        *o -= ly.exp() * gs;
                    }
                }
                out.push((*a, ga));
            }
            Op::SoftmaxRows(a) => {
                let mut ga = g.clone();
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum();
                    for (o, s) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                        *o = s * (*o - dot);
                    }
                }
                out.push((*a, ga));
            }
            Op::Pick(a, idx) => {
                let (r, c) = nodes[a.0].value.shape();
                let mut ga = Matrix::zeros(r, c);
                for (k, &(row, col)) in idx.iter().enumerate() {
                    let cur = ga.get(row, col);
                    ga.set(row, col, cur + g.get(k, 0));
                }
                out.push((*a, ga));
            }
            Op::StandardizeCols(a, inv_std) => {
                let (n, c) = y.shape();
                let mut ga = Matrix::zeros(n, c);
                let nf = n as f64;
                for (j, &inv) in inv_std.iter().enumerate() {
                    let mean_g = (0..n).map(|i| g.get(i, j)).sum::<f64>() / nf;
                    let mean_gz = (0..n).map(|i| g.get(i, j) * y.get(i, j)).sum::<f64>() / nf;
                    for i in 0..n {
                        ga.set(i, j, inv * (g.get(i, j) - mean_g - y.get(i, j) * mean_gz));
                    }
                }
                out.push((*a, ga));
            }
            Op::RowCosSq(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                for r in 0..va.rows() {
                    let (x, z) = (va.row(r), vb.row(r));
                    let d: f64 = x.iter().zip(z).map(|(p, q)| p * q).sum();
                    let p: f64 = x.iter().map(|v| v * v).sum();
                    let q: f64 = z.iter().map(|v| v * v).sum();
                    if p == 0.0 || q == 0.0 {
                        continue;
                    }
                    let s = g.get(r, 0) * 2.0 * d / (p * q);
                    for k in 0..x.len() {
                        ga.set(r, k, s * (z[k] - d / p * x[k]));
                        gb.set(r, k, s * (x[k] - d / q * z[k]));
                    }
                }
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::SegmentSoftmax(l, targets) => {
                let num_groups = targets.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; num_groups];
                for (e, &t) in targets.iter().enumerate() {
                    dot[t] += g.get(e, 0) * y.get(e, 0);
                }
                let gl: Vec<f64> = targets
                    .iter()
                    .enumerate()
                    .map(|(e, &t)| y.get(e, 0) * (g.get(e, 0) - dot[t]))
                    .collect();
                out.push((*l, Matrix::column(&gl)));
            }
            Op::EdgeAttention {
                z,
                attn,
                src,
                dst,
                slope,
            } => {
                let (vz, va) = (&nodes[z.0].value, &nodes[attn.0].value);
                let a = va.as_slice();
                let h = a.len();
                let want_z = nodes[z.0].requires_grad;
                let mut gz = Matrix::zeros(if want_z { vz.rows() } else { 0 }, h);
                let mut ga = vec![0.0; h];
                let mut dz = vec![0.0; h];
                for (k, (&s, &d)) in src.iter().zip(dst.iter()).enumerate() {
                    let gk = g.as_slice()[k];
                    for (j, ((&zd, &zs), &aj)) in vz.row(d).iter().zip(vz.row(s)).zip(a).enumerate() {
                        let p = zd + zs;
                        let (act, slope_at) = if p > 0.0 { (p, 1.0) } else { (slope * p, *slope) };
                        ga[j] += gk * act;
                        dz[j] = gk * aj * slope_at;
                    }
                    if want_z {
                        for (o, v) in gz.row_mut(d).iter_mut().zip(&dz) {
                            *o += v;
                        }
                        for (o, v) in gz.row_mut(s).iter_mut().zip(&dz) {
                            *o += v;
                        }
                    }
                }
                if want_z {
                    out.push((*z, gz));
                }
                out.push((*attn, Matrix::column(&ga)));
            }
            Op::GatherScatter { x, coef, src, dst } => {
                let (vx, vc) = (&nodes[x.0].value, &nodes[coef.0].value);
                if nodes[x.0].requires_grad {
                    let mut gx = Matrix::zeros(vx.rows(), vx.cols());
                    for ((&s, &d), &c) in src.iter().zip(dst.iter()).zip(vc.as_slice()) {
                        for (o, v) in gx.row_mut(s).iter_mut().zip(g.row(d)) {
                            *o += c * v;
                        }
                    }
                    out.push((*x, gx));
                }
                if nodes[coef.0].requires_grad {
                    let gc: Vec<f64> = src
                        .iter()
                        .zip(dst.iter())
                        .map(|(&s, &d)| g.row(d).iter().zip(vx.row(s)).map(|(a, b)| a * b).sum())
                        .collect();
                    out.push((*coef, Matrix::column(&gc)));
                }
            }
            Op::ScatterSum(m, targets) => {
                let mut gm = Matrix::zeros(targets.len(), g.cols());
                for (e, &t) in targets.iter().enumerate() {
                    gm.row_mut(e).copy_from_slice(g.row(t));
                }
                out.push((*m, gm));
            }
        }
        for (v, gv) in out {
            self.accumulate(v, gv);
        }
    }
}

/// Plain-slice segment softmax shared by the tape op and value-only callers.
pub fn segment_softmax_values(logits: &[f64], targets: &[usize], num_nodes: usize) -> Vec<f64> {
    let mut max = vec![f64::NEG_INFINITY; num_nodes];
    for (&l, &t) in logits.iter().zip(targets) {
        if l > max[t] {
            max[t] = l;
        }
    }
    let mut denom = vec![0.0; num_nodes];
    let exps: Vec<f64> = logits
        .iter()
        .zip(targets)
        .map(|(&l, &t)| {
            let e = (l - max[t]).exp();
            denom[t] += e;
            e
        })
        .collect();
    exps.iter().zip(targets).map(|(e, &t)| e / denom[t]).collect()
}
