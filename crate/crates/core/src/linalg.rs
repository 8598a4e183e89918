//! Small dense linear algebra: singular values, numerical rank and
//! determinants.

use alloc::vec::Vec;

use crate::nn::Tensor;

/// Singular values in descending order (one-sided Jacobi).
pub fn singular_values(a: &Tensor) -> Vec<f64> {
    let work = if a.rows() >= a.cols() { a.clone() } else { a.transpose() };
    let (m, n) = (work.rows(), work.cols());
    // column-major copy so rotations touch contiguous memory
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| work.get(i, j)).collect()).collect();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || libm::fabs(gamma) <= 1e-15 * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = libm::copysign(1.0, zeta) / (libm::fabs(zeta) + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| libm::sqrt(c.iter().map(|v| v * v).sum())).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(a: &Tensor, rel_tol: f64) -> usize {
    let sv = singular_values(a);
    match sv.first() {
        Some(&max) if max > 0.0 => sv.iter().filter(|&&s| s > rel_tol * max).count(),
        _ => 0,
    }
}

/// Determinant by LU factorization with partial pivoting.
pub fn determinant(a: &Tensor) -> f64 {
    assert_eq!(a.rows(), a.cols(), "determinant of a non-square matrix");
    let n = a.rows();
    let mut m = a.clone();
    let mut det = 1.0;
    for k in 0..n {
        let mut piv = k;
        for r in k + 1..n {
            if libm::fabs(m.get(r, k)) > libm::fabs(m.get(piv, k)) {
                piv = r;
            }
        }
        let pv = m.get(piv, k);
        if pv == 0.0 {
            return 0.0;
        }
        if piv != k {
            for c in 0..n {
                let tmp = m.get(k, c);
                m.set(k, c, m.get(piv, c));
                m.set(piv, c, tmp);
            }
            det = -det;
        }
        det *= pv;
        for r in k + 1..n {
            let f = m.get(r, k) / pv;
            if f == 0.0 {
                continue;
            }
            for c in k..n {
                m.set(r, c, m.get(r, c) - f * m.get(k, c));
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn to_na(t: &Tensor) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
    }

    #[test]
    fn singular_values_match_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for &(r, c) in &[(5, 3), (3, 7), (20, 20), (64, 10)] {
            let a = random(&mut rng, r, c);
            let mine = singular_values(&a);
            let mut oracle: Vec<f64> = to_na(&a).singular_values().iter().copied().collect();
            oracle.sort_by(|a, b| b.total_cmp(a));
            for (x, y) in mine.iter().zip(&oracle) {
                assert!((x - y).abs() < 1e-10 * oracle[0], "{x} vs {y}");
            }
        }
    }

    #[test]
    fn rank_of_low_rank_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, 30, 4);
        let b = random(&mut rng, 4, 25);
        assert_eq!(numerical_rank(&a.matmul(&b), 1e-10), 4);
        assert_eq!(numerical_rank(&Tensor::zeros(3, 3), 1e-10), 0);
        assert_eq!(numerical_rank(&Tensor::identity(3), 1e-10), 3);
    }

    #[test]
    fn determinant_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in 1..8 {
            let a = random(&mut rng, n, n);
            let d = determinant(&a);
            let o = to_na(&a).determinant();
            assert!((d - o).abs() < 1e-12 * (1.0 + o.abs()));
        }
        assert_eq!(determinant(&Tensor::filled(4, 4, 0.25)), 0.0);
    }
}
