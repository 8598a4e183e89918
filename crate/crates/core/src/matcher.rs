//! Similarity between compressed source and target features, row
//! normalization, the Frobenius rank regularizer and determinant-based
//! verification of each row's best match.

use alloc::rc::Rc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{determinant, singular_values};
use crate::nn::{matmul, matmul_tn, Tape, Tensor, Var};

/// Feature rows shorter than this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;
/// Rows whose shifted sum falls below this cannot be normalized.
pub const ZERO_ROW_SUM: f64 = 1e-12;
/// Default threshold on the scaled window determinant.
pub const DET_TOL: f64 = 1e-6;
/// Smallest rank the fallback search may settle on.
pub const MIN_EFFECTIVE_RANK: usize = 16;
/// Relative singular value below which the valid block counts as rank deficient.
pub const RANK_REL_TOL: f64 = 1e-8;

/// Row-normalized `N′×N′` score matrix with a per-row validity mask.
/// Invalid rows are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Tensor,
    pub row_valid: Vec<bool>,
    pub effective_rank_target: usize,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.values.rows()
    }

    pub fn valid_count(&self) -> usize {
        self.row_valid.iter().filter(|&&v| v).count()
    }

    /// Column of the largest entry in row `i`; ties go to the lowest column.
    pub fn row_argmax(&self, i: usize) -> usize {
        argmax(self.values.row_slice(i))
    }

    fn invalidate(&mut self, i: usize) {
        self.row_valid[i] = false;
        self.values.row_slice_mut(i).iter_mut().for_each(|v| *v = 0.0);
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Tape handles for a similarity computation.
pub struct SimilarityVars {
    /// Row-normalized scores before verification; invalid rows are zero.
    pub normalized: Var,
    /// Rows that survived feature and sum checks.
    pub row_valid: Vec<bool>,
}

/// Cosine scores `S = ĥ_s ĥ_tᵀ`, shifted by each row's minimum and divided
/// by the row sum. Source rows with zero norm or zero shifted sum are
/// invalid and come out as zero rows with no gradient.
pub fn record_similarity(tape: &mut Tape, hs: Var, ht: Var) -> Result<SimilarityVars> {
    let (sv, tv) = (tape.value(hs), tape.value(ht));
    if sv.rows() != tv.rows() || sv.cols() != tv.cols() {
        return Err(crate::error::shape_err(
            alloc::format!("{}x{}", sv.rows(), sv.cols()),
            alloc::format!("{}x{}", tv.rows(), tv.cols()),
        ));
    }
    let n = sv.rows();
    let hs_n = unit_rows(tape, hs);
    let ht_n = unit_rows(tape, ht);
    let mut valid: Vec<bool> = tape.value(hs).data().chunks(tape.value(hs).cols().max(1)).map(|r| norm(r) >= ZERO_NORM).collect();
    let s = tape.matmul_nt(hs_n, ht_n);
    let m = tape.row_min(s);
    let shifted = tape.sub_col(s, m);
    let rs = tape.row_sum(shifted);
    for (v, &sum) in valid.iter_mut().zip(tape.value(rs).data()) {
        *v = *v && sum >= ZERO_ROW_SUM;
    }
    let ones = tape.constant(Tensor::filled(n, 1, 1.0));
    let invalid: Rc<[bool]> = valid.iter().map(|v| !v).collect();
    let safe = tape.select(invalid.clone(), ones, rs);
    let inv = tape.recip(safe);
    let normalized = tape.mul_col(shifted, inv);
    let keep = tape.constant(mask_column(&valid));
    let normalized = tape.mul_col(normalized, keep);
    Ok(SimilarityVars { normalized, row_valid: valid })
}

fn norm(r: &[f64]) -> f64 {
    libm::sqrt(r.iter().map(|v| v * v).sum())
}

fn unit_rows(tape: &mut Tape, x: Var) -> Var {
    let n = tape.row_norm(x);
    let n = tape.clamp_min(n, ZERO_NORM);
    let inv = tape.recip(n);
    tape.mul_col(x, inv)
}

pub(crate) fn mask_column(valid: &[bool]) -> Tensor {
    Tensor::column(&valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect::<Vec<_>>())
}

/// Plain-value similarity (see [`record_similarity`]).
pub fn compute_similarity(hs: &Tensor, ht: &Tensor, rank_target: usize) -> Result<SimilarityMatrix> {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(hs.clone()), tape.constant(ht.clone()));
    let sim = record_similarity(&mut tape, a, b)?;
    tape.ensure_finite()?;
    Ok(SimilarityMatrix {
        values: tape.value(sim.normalized).clone(),
        row_valid: sim.row_valid,
        effective_rank_target: rank_target,
    })
}

/// `|‖Ŝ‖_F − target|`; `trace(ŜᵀŜ)` is the sum of squared entries.
pub fn rank_regularizer(s_hat: &Tensor, target: f64) -> f64 {
    libm::fabs(libm::sqrt(s_hat.data().iter().map(|v| v * v).sum()) - target)
}

pub fn record_rank_regularizer(tape: &mut Tape, s_hat: Var, target: f64) -> Var {
    let sq = tape.mul(s_hat, s_hat);
    let tr = tape.sum(sq);
    let fro = tape.sqrt(tr);
    let d = tape.add_scalar(fro, -target);
    tape.abs(d)
}

/// Square window checked for row `i` whose best column is `j`:
/// `(row_start, col_start, size)`. A 7×7 window is centered when both
/// indices are at least three away from the border, otherwise a 5×5 window
/// is centered as far as the border allows.
pub fn verification_window(i: usize, j: usize, n: usize) -> (usize, usize, usize) {
    let interior = |c: usize| c >= 3 && c + 3 < n;
    if interior(i) && interior(j) {
        (i - 3, j - 3, 7)
    } else {
        let start = |c: usize| c.saturating_sub(2).min(n - 5);
        (start(i), start(j), 5)
    }
}

pub fn window(values: &Tensor, (r0, c0, size): (usize, usize, usize)) -> Tensor {
    let mut w = Tensor::zeros(size, size);
    for r in 0..size {
        w.row_slice_mut(r).copy_from_slice(&values.row_slice(r0 + r)[c0..c0 + size]);
    }
    w
}

/// Whether the window passes the scaled determinant test.
pub fn window_passes(w: &Tensor, det_tol: f64) -> bool {
    let scale = w.max_abs();
    if !(scale > 0.0) {
        return false;
    }
    libm::fabs(determinant(&w.map(|v| v / scale))) >= det_tol
}

/// Invalidates every row whose window around its best match is singular.
/// All windows are read from the input matrix.
pub fn verify_submatrices(s: &SimilarityMatrix, det_tol: f64) -> Result<SimilarityMatrix> {
    let n = s.size();
    if n < 7 {
        return Err(Error::InvalidArgument(alloc::format!("verification needs at least 7 rows, got {n}")));
    }
    let mut out = s.clone();
    for i in 0..n {
        if !s.row_valid[i] {
            continue;
        }
        let w = window(&s.values, verification_window(i, s.row_argmax(i), n));
        if !window_passes(&w, det_tol) {
            out.invalidate(i);
        }
    }
    Ok(out)
}

/// Outcome of the rank fallback search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankFallback {
    pub rank: usize,
    pub registrable: bool,
}

/// Starts from `min(r, valid rows)` and lowers the rank while the
/// corresponding singular value of the valid block is negligible. The
/// floor is 16 (or `r` when `r` is smaller); failing it, or having fewer
/// valid rows than the floor, flags the pair unregistrable.
pub fn effective_rank_fallback(s: &SimilarityMatrix, r: usize) -> RankFallback {
    let floor = MIN_EFFECTIVE_RANK.min(r).max(1);
    let valid: Vec<usize> = (0..s.size()).filter(|&i| s.row_valid[i]).collect();
    let v = valid.len();
    if v < floor {
        return RankFallback { rank: v, registrable: false };
    }
    let sv = singular_values(&s.values.select_rows(&valid));
    let max = sv[0];
    let ok = |k: usize| max > 0.0 && sv.get(k - 1).is_some_and(|&x| x / max > RANK_REL_TOL);
    let mut rank = r.min(v);
    while rank > floor && !ok(rank) {
        rank -= 1;
    }
    RankFallback {
        rank,
        registrable: ok(rank),
    }
}

/// `(Ŝᵀ Ĥ_src, Ŝ Ĥ_tar)`.
pub fn project_features(s_hat: &Tensor, hs: &Tensor, ht: &Tensor) -> Result<(Tensor, Tensor)> {
    let n = s_hat.rows();
    if s_hat.cols() != n || hs.rows() != n || ht.rows() != n {
        return Err(crate::error::shape_err(
            alloc::format!("{n}x{n} scores with {n}-row features"),
            alloc::format!("{}x{} scores, {} and {} rows", s_hat.rows(), s_hat.cols(), hs.rows(), ht.rows()),
        ));
    }
    Ok((matmul_tn(s_hat, hs), matmul(s_hat, ht)))
}

pub fn record_projection(tape: &mut Tape, s_hat: Var, hs: Var, ht: Var) -> (Var, Var) {
    (tape.matmul_tn(s_hat, hs), tape.matmul(s_hat, ht))
}
