//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation evaluates eagerly and appends a node holding its value and
//! the inputs it needs for the backward rule. Nodes are stored in creation
//! order, which is already a topological order, so [`Tape::backward`] is a
//! single reverse sweep.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulTn(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    MulCol(Var, Var),
    SubCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Powf(Var, f64),
    Abs(Var),
    Recip(Var),
    ClampMin(Var, f64),
    AcosClamped(Var, f64),
    Gather(Var, Rc<[usize]>),
    SegmentSum(Var, Rc<[usize]>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    RowNorm(Var),
    RowSum(Var),
    RowMin(Var, Vec<usize>),
    ColMax(Var, Vec<usize>),
    Sum(Var),
    Cross(Var, Var),
    Select(Rc<[bool]>, Var, Var),
    QuatToMat(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulTn(..) => "matmul_tn",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::SubRow(..) => "sub_row",
            Op::MulCol(..) => "mul_col",
            Op::SubCol(..) => "sub_col",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Powf(..) => "powf",
            Op::Abs(..) => "abs",
            Op::Recip(..) => "recip",
            Op::ClampMin(..) => "clamp_min",
            Op::AcosClamped(..) => "acos",
            Op::Gather(..) => "gather",
            Op::SegmentSum(..) => "segment_sum",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::RowNorm(..) => "row_norm",
            Op::RowSum(..) => "row_sum",
            Op::RowMin(..) => "row_min",
            Op::ColMax(..) => "col_max",
            Op::Sum(..) => "sum",
            Op::Cross(..) => "cross",
            Op::Select(..) => "select",
            Op::QuatToMat(..) => "quat_to_mat",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to every node that required one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    non_finite: Option<(usize, &'static str)>,
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// First node whose value contained NaN or ±∞.
    pub fn ensure_finite(&self) -> Result<()> {
        match self.non_finite {
            Some((node, op)) => Err(Error::NonFinite { op, node }),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let id = self.nodes.len();
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some((id, op.name()));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Var(id)
    }

    fn ng(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.val(a), self.val(b));
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `aᵀ · b`
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        let v = matmul_tn(self.val(a), self.val(b));
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMulTn(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = matmul_nt(self.val(a), self.val(b));
        let ng = self.ng(&[a, b]);
        self.push(v, Op::MatMulNt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a).zip_map(self.val(b), |x, y| x + y);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a).zip_map(self.val(b), |x, y| x - y);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.val(a).zip_map(self.val(b), |x, y| x * y);
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Mul(a, b), ng)
    }

    fn row_broadcast(&self, x: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (xv, bv) = (self.val(x), self.val(b));
        assert!(bv.rows() == 1 && bv.cols() == xv.cols(), "row broadcast shape mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, &bb) in out.row_slice_mut(r).iter_mut().zip(bv.data()) {
                *o = f(*o, bb);
            }
        }
        out
    }

    fn col_broadcast(&self, x: Var, s: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (xv, sv) = (self.val(x), self.val(s));
        assert!(sv.cols() == 1 && sv.rows() == xv.rows(), "column broadcast shape mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let s = sv.data()[r];
            for o in out.row_slice_mut(r) {
                *o = f(*o, s);
            }
        }
        out
    }

    /// `x + b` with `b` a `1×c` row added to every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let v = self.row_broadcast(x, b, |p, q| p + q);
        let ng = self.ng(&[x, b]);
        self.push(v, Op::AddRow(x, b), ng)
    }

    pub fn sub_row(&mut self, x: Var, b: Var) -> Var {
        let v = self.row_broadcast(x, b, |p, q| p - q);
        let ng = self.ng(&[x, b]);
        self.push(v, Op::SubRow(x, b), ng)
    }

    /// Scales row `r` of `x` by `s[r]` (`s` is `n×1`).
    pub fn mul_col(&mut self, x: Var, s: Var) -> Var {
        let v = self.col_broadcast(x, s, |p, q| p * q);
        let ng = self.ng(&[x, s]);
        self.push(v, Op::MulCol(x, s), ng)
    }

    pub fn sub_col(&mut self, x: Var, s: Var) -> Var {
        let v = self.col_broadcast(x, s, |p, q| p - q);
        let ng = self.ng(&[x, s]);
        self.push(v, Op::SubCol(x, s), ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.val(x).map(|p| p * c);
        let ng = self.ng(&[x]);
        self.push(v, Op::Scale(x, c), ng)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = self.val(x).map(|p| p + c);
        let ng = self.ng(&[x]);
        self.push(v, Op::AddScalar(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.val(x).map(|p| if p > 0.0 { p } else { 0.0 });
        let ng = self.ng(&[x]);
        self.push(v, Op::Relu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.val(x).map(libm::tanh);
        let ng = self.ng(&[x]);
        self.push(v, Op::Tanh(x), ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.val(x).map(libm::exp);
        let ng = self.ng(&[x]);
        self.push(v, Op::Exp(x), ng)
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        let v = self.val(x).map(|a| libm::pow(a, p));
        let ng = self.ng(&[x]);
        self.push(v, Op::Powf(x, p), ng)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.powf(x, 0.5)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.val(x).map(libm::fabs);
        let ng = self.ng(&[x]);
        self.push(v, Op::Abs(x), ng)
    }

    pub fn recip(&mut self, x: Var) -> Var {
        let v = self.val(x).map(|a| 1.0 / a);
        let ng = self.ng(&[x]);
        self.push(v, Op::Recip(x), ng)
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        let v = self.val(x).map(|a| a.max(floor));
        let ng = self.ng(&[x]);
        self.push(v, Op::ClampMin(x, floor), ng)
    }

    /// `acos` of `x` clamped to `[-1 + margin, 1 - margin]`.
    pub fn acos_clamped(&mut self, x: Var, margin: f64) -> Var {
        let (lo, hi) = (-1.0 + margin, 1.0 - margin);
        let v = self.val(x).map(|a| libm::acos(a.clamp(lo, hi)));
        let ng = self.ng(&[x]);
        self.push(v, Op::AcosClamped(x, margin), ng)
    }

    /// Rows of `x` picked by `idx`.
    pub fn gather(&mut self, x: Var, idx: Rc<[usize]>) -> Var {
        let v = self.val(x).select_rows(&idx);
        let ng = self.ng(&[x]);
        self.push(v, Op::Gather(x, idx), ng)
    }

    /// Sums row `e` of `x` into output row `seg[e]`; output has `n` rows.
    pub fn segment_sum(&mut self, x: Var, seg: Rc<[usize]>, n: usize) -> Var {
        let xv = self.val(x);
        assert_eq!(seg.len(), xv.rows(), "segment ids must cover every row");
        let mut out = Tensor::zeros(n, xv.cols());
        for (e, &s) in seg.iter().enumerate() {
            let src = xv.row_slice(e);
            for (o, &a) in out.row_slice_mut(s).iter_mut().zip(src) {
                *o += a;
            }
        }
        let ng = self.ng(&[x]);
        self.push(out, Op::SegmentSum(x, seg), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.val(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.val(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let pv = self.val(p);
                assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
                out.row_slice_mut(r)[c0..c0 + pv.cols()].copy_from_slice(pv.row_slice(r));
                c0 += pv.cols();
            }
        }
        let ng = self.ng(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.val(x);
        assert!(start + len <= xv.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_slice_mut(r).copy_from_slice(&xv.row_slice(r)[start..start + len]);
        }
        let ng = self.ng(&[x]);
        self.push(out, Op::SliceCols(x, start), ng)
    }

    /// Euclidean norm of every row, as an `n×1` column.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let xv = self.val(x);
        let v: Vec<f64> = (0..xv.rows())
            .map(|r| libm::sqrt(xv.row_slice(r).iter().map(|a| a * a).sum()))
            .collect();
        let ng = self.ng(&[x]);
        self.push(Tensor::column(&v), Op::RowNorm(x), ng)
    }

    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.val(x);
        let v: Vec<f64> = (0..xv.rows()).map(|r| xv.row_slice(r).iter().sum()).collect();
        let ng = self.ng(&[x]);
        self.push(Tensor::column(&v), Op::RowSum(x), ng)
    }

    /// Row minima; ties resolve to the lowest column.
    pub fn row_min(&mut self, x: Var) -> Var {
        let xv = self.val(x);
        let mut arg = Vec::with_capacity(xv.rows());
        let mut v = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row_slice(r);
            let mut best = 0;
            for (c, &a) in row.iter().enumerate() {
                if a < row[best] {
                    best = c;
                }
            }
            arg.push(best);
            v.push(row[best]);
        }
        let ng = self.ng(&[x]);
        self.push(Tensor::column(&v), Op::RowMin(x, arg), ng)
    }

    /// Column maxima over the rows where `mask` is set; `1×c` output.
    pub fn col_max_masked(&mut self, x: Var, mask: &[bool]) -> Var {
        let xv = self.val(x);
        assert_eq!(mask.len(), xv.rows(), "mask length");
        let first = mask.iter().position(|&m| m).expect("col_max_masked needs a selected row");
        let mut arg = vec![first; xv.cols()];
        for (r, _) in mask.iter().enumerate().skip(first + 1).filter(|(_, &m)| m) {
            for (c, a) in arg.iter_mut().enumerate() {
                if xv.get(r, c) > xv.get(*a, c) {
                    *a = r;
                }
            }
        }
        let v: Vec<f64> = (0..xv.cols()).map(|c| xv.get(arg[c], c)).collect();
        let ng = self.ng(&[x]);
        self.push(Tensor::row(&v), Op::ColMax(x, arg), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.val(x).data().iter().sum();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Row-wise cross product of two `n×3` tensors.
    pub fn cross(&mut self, a: Var, b: Var) -> Var {
        let v = cross_rows(self.val(a), self.val(b));
        let ng = self.ng(&[a, b]);
        self.push(v, Op::Cross(a, b), ng)
    }

    /// Row `r` from `a` where `mask[r]`, otherwise from `b`.
    pub fn select(&mut self, mask: Rc<[bool]>, a: Var, b: Var) -> Var {
        let (av, bv) = (self.val(a), self.val(b));
        assert_eq!(av.shape(), bv.shape(), "select shape mismatch");
        assert_eq!(mask.len(), av.rows(), "select mask length");
        let mut out = bv.clone();
        for (r, &m) in mask.iter().enumerate() {
            if m {
                out.row_slice_mut(r).copy_from_slice(av.row_slice(r));
            }
        }
        let ng = self.ng(&[a, b]);
        self.push(out, Op::Select(mask, a, b), ng)
    }

    /// `1×4` quaternion `(w, x, y, z)` to its `1×9` row-major rotation matrix.
    pub fn quat_to_mat(&mut self, q: Var) -> Var {
        let qv = self.val(q);
        assert_eq!(qv.shape(), [1, 4], "quat_to_mat expects 1x4");
        let d = qv.data();
        let (w, x, y, z) = (d[0], d[1], d[2], d[3]);
        let m = [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ];
        let ng = self.ng(&[q]);
        self.push(Tensor::row(&m), Op::QuatToMat(q), ng)
    }

    /// Reverse sweep from a `1×1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.ensure_finite()?;
        let lv = self.val(loss);
        if lv.shape() != [1, 1] {
            return Err(Error::NonScalarLoss {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        let out = Gradients { grads };
        for (id, g) in out.grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        op: self.nodes[id].op.name(),
                        node: id,
                    });
                }
            }
        }
        Ok(out)
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], matmul_nt(g, self.val(*b)));
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], matmul_tn(self.val(*a), g));
                }
            }
            Op::MatMulTn(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], matmul_nt(self.val(*b), g));
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], matmul(self.val(*a), g));
                }
            }
            Op::MatMulNt(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], matmul(g, self.val(*b)));
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], matmul_tn(g, self.val(*a)));
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.zip_map(self.val(*b), |p, q| p * q));
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], g.zip_map(self.val(*a), |p, q| p * q));
                }
            }
            Op::AddRow(x, b) | Op::SubRow(x, b) => {
                let sign = if matches!(node.op, Op::AddRow(..)) { 1.0 } else { -1.0 };
                if wants(*x) {
                    accumulate(&mut grads[x.0], g.clone());
                }
                if wants(*b) {
                    let mut gb = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in gb.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *o += sign * v;
                        }
                    }
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::MulCol(x, s) => {
                let (xv, sv) = (self.val(*x), self.val(*s));
                if wants(*x) {
                    let mut gx = g.clone();
                    for r in 0..gx.rows() {
                        let f = sv.data()[r];
                        gx.row_slice_mut(r).iter_mut().for_each(|v| *v *= f);
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                if wants(*s) {
                    let gs: Vec<f64> = (0..g.rows())
                        .map(|r| g.row_slice(r).iter().zip(xv.row_slice(r)).map(|(a, b)| a * b).sum())
                        .collect();
                    accumulate(&mut grads[s.0], Tensor::column(&gs));
                }
            }
            Op::SubCol(x, s) => {
                if wants(*x) {
                    accumulate(&mut grads[x.0], g.clone());
                }
                if wants(*s) {
                    let gs: Vec<f64> = (0..g.rows()).map(|r| -g.row_slice(r).iter().sum::<f64>()).collect();
                    accumulate(&mut grads[s.0], Tensor::column(&gs));
                }
            }
            Op::Scale(x, c) => {
                if wants(*x) {
                    accumulate(&mut grads[x.0], g.map(|v| v * c));
                }
            }
            Op::AddScalar(x) => {
                if wants(*x) {
                    accumulate(&mut grads[x.0], g.clone());
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    accumulate(&mut grads[x.0], g.zip_map(out, |gv, o| if o > 0.0 { gv } else { 0.0 }));
                }
            }
            Op::Tanh(x) => {
                if wants(*x) {
                    accumulate(&mut grads[x.0], g.zip_map(out, |gv, o| gv * (1.0 - o * o)));
                }
            }
            Op::Exp(x) => {
                if wants(*x) {
                    accumulate(&mut grads[x.0], g.zip_map(out, |gv, o| gv * o));
                }
            }
            Op::Powf(x, p) => {
                if wants(*x) {
                    let p = *p;
                    accumulate(&mut grads[x.0], g.zip_map(self.val(*x), |gv, a| gv * p * libm::pow(a, p - 1.0)));
                }
            }
            Op::Abs(x) => {
                if wants(*x) {
                    accumulate(
                        &mut grads[x.0],
                        g.zip_map(self.val(*x), |gv, a| {
                            if a > 0.0 {
                                gv
                            } else if a < 0.0 {
                                -gv
                            } else {
                                0.0
                            }
                        }),
                    );
                }
            }
            Op::Recip(x) => {
                if wants(*x) {
                    accumulate(&mut grads[x.0], g.zip_map(out, |gv, o| -gv * o * o));
                }
            }
            Op::ClampMin(x, floor) => {
                if wants(*x) {
                    let f = *floor;
                    accumulate(&mut grads[x.0], g.zip_map(self.val(*x), |gv, a| if a > f { gv } else { 0.0 }));
                }
            }
            Op::AcosClamped(x, margin) => {
                if wants(*x) {
                    let (lo, hi) = (-1.0 + margin, 1.0 - margin);
                    accumulate(
                        &mut grads[x.0],
                        g.zip_map(self.val(*x), |gv, a| {
                            if a > lo && a < hi {
                                -gv / libm::sqrt(1.0 - a * a)
                            } else {
                                0.0
                            }
                        }),
                    );
                }
            }
            Op::Gather(x, idx) => {
                if wants(*x) {
                    let xv = self.val(*x);
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    for (e, &i) in idx.iter().enumerate() {
                        for (o, &v) in gx.row_slice_mut(i).iter_mut().zip(g.row_slice(e)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::SegmentSum(x, seg) => {
                if wants(*x) {
                    accumulate(&mut grads[x.0], g.select_rows(seg));
                }
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for p in parts {
                    let w = self.val(*p).cols();
                    if wants(*p) {
                        let mut gp = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_slice_mut(r).copy_from_slice(&g.row_slice(r)[c0..c0 + w]);
                        }
                        accumulate(&mut grads[p.0], gp);
                    }
                    c0 += w;
                }
            }
            Op::SliceCols(x, start) => {
                if wants(*x) {
                    let xv = self.val(*x);
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..g.rows() {
                        gx.row_slice_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row_slice(r));
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::RowNorm(x) => {
                if wants(*x) {
                    let xv = self.val(*x);
                    let mut gx = xv.clone();
                    for r in 0..xv.rows() {
                        let n = out.data()[r];
                        let f = if n > 0.0 { g.data()[r] / n } else { 0.0 };
                        gx.row_slice_mut(r).iter_mut().for_each(|v| *v *= f);
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::RowSum(x) => {
                if wants(*x) {
                    let xv = self.val(*x);
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let f = g.data()[r];
                        gx.row_slice_mut(r).iter_mut().for_each(|v| *v = f);
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::RowMin(x, arg) => {
                if wants(*x) {
                    let xv = self.val(*x);
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    for (r, &c) in arg.iter().enumerate() {
                        gx.set(r, c, g.data()[r]);
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::ColMax(x, arg) => {
                if wants(*x) {
                    let xv = self.val(*x);
                    let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                    for (c, &r) in arg.iter().enumerate() {
                        gx.set(r, c, gx.get(r, c) + g.data()[c]);
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    let xv = self.val(*x);
                    accumulate(&mut grads[x.0], Tensor::filled(xv.rows(), xv.cols(), g.item()));
                }
            }
            Op::Cross(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], cross_rows(self.val(*b), g));
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], cross_rows(g, self.val(*a)));
                }
            }
            Op::Select(mask, a, b) => {
                let mut ga = Tensor::zeros(g.rows(), g.cols());
                let mut gb = g.clone();
                for (r, &m) in mask.iter().enumerate() {
                    if m {
                        ga.row_slice_mut(r).copy_from_slice(g.row_slice(r));
                        gb.row_slice_mut(r).iter_mut().for_each(|v| *v = 0.0);
                    }
                }
                if wants(*a) {
                    accumulate(&mut grads[a.0], ga);
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::QuatToMat(q) => {
                if wants(*q) {
                    let d = self.val(*q).data();
                    let (w, x, y, z) = (d[0], d[1], d[2], d[3]);
                    // rows: d m_k / d (w, x, y, z)
                    let jac: [[f64; 4]; 9] = [
                        [0.0, 0.0, -4.0 * y, -4.0 * z],
                        [-2.0 * z, 2.0 * y, 2.0 * x, -2.0 * w],
                        [2.0 * y, 2.0 * z, 2.0 * w, 2.0 * x],
                        [2.0 * z, 2.0 * y, 2.0 * x, 2.0 * w],
                        [0.0, -4.0 * x, 0.0, -4.0 * z],
                        [-2.0 * x, -2.0 * w, 2.0 * z, 2.0 * y],
                        [-2.0 * y, 2.0 * z, -2.0 * w, 2.0 * x],
                        [2.0 * x, 2.0 * w, 2.0 * z, 2.0 * y],
                        [0.0, -4.0 * x, -4.0 * y, 0.0],
                    ];
                    let mut gq = [0.0; 4];
                    for (k, row) in jac.iter().enumerate() {
                        for (o, &j) in gq.iter_mut().zip(row) {
                            *o += g.data()[k] * j;
                        }
                    }
                    accumulate(&mut grads[q.0], Tensor::row(&gq));
                }
            }
        }
    }
}

fn cross_rows(a: &Tensor, b: &Tensor) -> Tensor {
    assert!(a.cols() == 3 && a.shape() == b.shape(), "cross expects matching n x 3 inputs");
    let mut out = Tensor::zeros(a.rows(), 3);
    for r in 0..a.rows() {
        let (p, q) = (a.row_slice(r), b.row_slice(r));
        let o = out.row_slice_mut(r);
        o[0] = p[1] * q[2] - p[2] * q[1];
        o[1] = p[2] * q[0] - p[0] * q[2];
        o[2] = p[0] * q[1] - p[1] * q[0];
    }
    out
}
