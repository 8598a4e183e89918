//! Low-rank feature transformation: compresses `N` stacked node features to
//! `N′` rows through a rank-`r` bottleneck `(AB)ᵀH = Bᵀ(AᵀH)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::numerical_rank;
use crate::nn::{matmul_tn, Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Width of stacked features: 32 hidden channels plus 3 coordinate channels.
pub const STACKED_DIM: usize = 35;
/// Constant initial value of every `B` entry.
pub const B_INIT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lrft {
    /// `N×r`
    pub a: ParamId,
    /// `r×N′`
    pub b: ParamId,
    pub n: usize,
    pub rank: usize,
    pub n_out: usize,
}

fn check_rank(n: usize, rank: usize, n_out: usize) -> Result<()> {
    if rank == 0 || rank > n.min(n_out) {
        return Err(Error::InvalidArgument(alloc::format!("rank {rank} must be in 1..={}", n.min(n_out))));
    }
    Ok(())
}

impl Lrft {
    /// `A ~ N(0, std²)`, `B = 1e-4`. The customary `std` is `√r`.
    pub fn init<R: Rng>(store: &mut ParamStore, n: usize, rank: usize, n_out: usize, std: f64, rng: &mut R) -> Result<Self> {
        check_rank(n, rank, n_out)?;
        let normal = Normal::new(0.0, std).map_err(|_| Error::InvalidArgument(alloc::format!("bad std {std}")))?;
        let a = Tensor::from_vec(n, rank, (0..n * rank).map(|_| normal.sample(rng)).collect());
        let b = Tensor::filled(rank, n_out, B_INIT);
        Self::with_values(store, a, b)
    }

    pub fn with_values(store: &mut ParamStore, a: Tensor, b: Tensor) -> Result<Self> {
        if a.cols() != b.rows() {
            return Err(crate::error::shape_err(alloc::format!("B with {} rows", a.cols()), alloc::format!("{}x{}", b.rows(), b.cols())));
        }
        let (n, rank, n_out) = (a.rows(), a.cols(), b.cols());
        check_rank(n, rank, n_out)?;
        Ok(Self {
            a: store.add("lrft.a", a),
            b: store.add("lrft.b", b),
            n,
            rank,
            n_out,
        })
    }

    pub fn record(&self, tape: &mut Tape, params: &Bound, h: Var) -> Result<Var> {
        let rows = tape.value(h).rows();
        if rows != self.n {
            return Err(crate::error::shape_err(alloc::format!("{} rows", self.n), alloc::format!("{rows} rows")));
        }
        let ath = tape.matmul_tn(params.var(self.a), h);
        Ok(tape.matmul_tn(params.var(self.b), ath))
    }

    pub fn apply(&self, store: &ParamStore, h: &Tensor) -> Result<Tensor> {
        apply_lrft(store.get(self.a), store.get(self.b), h)
    }
}

/// `Bᵀ(AᵀH)` on plain tensors.
pub fn apply_lrft(a: &Tensor, b: &Tensor, h: &Tensor) -> Result<Tensor> {
    if h.rows() != a.rows() || a.cols() != b.rows() {
        return Err(crate::error::shape_err(
            alloc::format!("H with {} rows and A.cols = B.rows", a.rows()),
            alloc::format!("H {}x{}, A {}x{}, B {}x{}", h.rows(), h.cols(), a.rows(), a.cols(), b.rows(), b.cols()),
        ));
    }
    Ok(matmul_tn(b, &matmul_tn(a, h)))
}

/// Numerical rank of `AB` (σ > 1e-10·σ_max).
pub fn verify_rank_product(a: &Tensor, b: &Tensor) -> usize {
    numerical_rank(&a.matmul(b), 1e-10)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn init_statistics() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let l = Lrft::init(&mut store, 1024, 35, 128, libm::sqrt(35.0), &mut rng).unwrap();
        let a = store.get(l.a).data();
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        let std = libm::sqrt(a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (a.len() - 1) as f64);
        assert!((std / libm::sqrt(35.0) - 1.0).abs() < 0.1, "{std}");
        assert!(store.get(l.b).data().iter().all(|&v| v == 1e-4));

        let mut s2 = ParamStore::new();
        let l2 = Lrft::init(&mut s2, 1024, 35, 128, libm::sqrt(35.0), &mut ChaCha8Rng::seed_from_u64(30)).unwrap();
        assert_eq!(store.get(l.a), s2.get(l2.a));
        assert!(Lrft::init(&mut s2, 16, 9, 8, 1.0, &mut rng).is_err());
    }

    #[test]
    fn zero_b_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let h = random(&mut rng, 6, STACKED_DIM);
        let a = random(&mut rng, 6, 3);
        assert_eq!(apply_lrft(&a, &Tensor::zeros(3, 4), &h).unwrap(), Tensor::zeros(4, STACKED_DIM));
        let out = apply_lrft(&Tensor::identity(6), &Tensor::identity(6), &h).unwrap();
        assert_eq!(out, h);
        assert!(apply_lrft(&a, &Tensor::zeros(3, 4), &random(&mut rng, 5, 35)).is_err());
    }

    #[test]
    fn factored_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..20 {
            let a = random(&mut rng, 16, 3);
            let b = random(&mut rng, 3, 8);
            let h = random(&mut rng, 16, STACKED_DIM);
            let dense = a.matmul(&b).transpose().matmul(&h);
            let f = apply_lrft(&a, &b, &h).unwrap();
            for (x, y) in f.data().iter().zip(dense.data()) {
                assert!((x - y).abs() < 1e-12);
            }
            assert!(numerical_rank(&f, 1e-10) <= 3);
        }
    }

    #[test]
    fn linear_in_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let a = random(&mut rng, 12, 4);
        let b = random(&mut rng, 4, 6);
        let (h1, h2) = (random(&mut rng, 12, STACKED_DIM), random(&mut rng, 12, STACKED_DIM));
        let (al, be) = (0.7, -1.3);
        let mix = h1.zip_map(&h2, |x, y| al * x + be * y);
        let lhs = apply_lrft(&a, &b, &mix).unwrap();
        let (r1, r2) = (apply_lrft(&a, &b, &h1).unwrap(), apply_lrft(&a, &b, &h2).unwrap());
        let rhs = r1.zip_map(&r2, |x, y| al * x + be * y);
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_product_bounds() {
        assert_eq!(verify_rank_product(&Tensor::identity(3), &Tensor::identity(3)), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let b = random(&mut rng, 2, 3);
        assert!(verify_rank_product(&Tensor::filled(4, 2, 1.0), &b) <= 1);
        let a = random(&mut rng, 1024, 35);
        let b = random(&mut rng, 35, 128);
        assert_eq!(verify_rank_product(&a, &b), 35);
    }
}
