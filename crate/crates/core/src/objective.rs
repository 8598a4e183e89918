//! Training losses and registration metrics.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{Mat3, RigidTransform, Vec3};
use crate::nn::{Tape, Tensor, Var};

/// Margin keeping the arccos argument away from ±1.
pub const ACOS_MARGIN: f64 = 1e-9;
/// Default weight of the rank regularizer.
pub const DEFAULT_BETA: f64 = 0.05;

fn check_rotation(m: &Mat3) -> Result<()> {
    let dev = m.rotation_deviation();
    if !(dev <= 1e-6) {
        return Err(Error::NotARotation(dev));
    }
    Ok(())
}

fn clamped_acos(x: f64) -> f64 {
    libm::acos(x.clamp(-1.0 + ACOS_MARGIN, 1.0 - ACOS_MARGIN))
}

/// Geodesic angle `arccos((tr(R̂ᵀR*) − 1)/2)` in radians, with the argument
/// clamped to `[−1 + 1e-9, 1 − 1e-9]`.
pub fn rotation_loss(r_hat: &Mat3, r_star: &Mat3) -> Result<f64> {
    check_rotation(r_hat)?;
    check_rotation(r_star)?;
    let tr = r_hat.transpose().mul_mat(r_star).trace();
    Ok(clamped_acos((tr - 1.0) / 2.0))
}

/// Tape version; `r_hat` is a `1×9` row-major matrix.
pub fn record_rotation_loss(tape: &mut Tape, r_hat: Var, r_star: &Mat3) -> Var {
    let target = tape.constant(Tensor::row(&r_star.row_major()));
    let prod = tape.mul(r_hat, target);
    let tr = tape.sum(prod);
    let arg = tape.add_scalar(tr, -1.0);
    let arg = tape.scale(arg, 0.5);
    tape.acos_clamped(arg, ACOS_MARGIN)
}

/// `‖t̂ − t*‖²`
pub fn translation_loss(t_hat: Vec3, t_star: Vec3) -> f64 {
    (t_hat - t_star).norm_squared()
}

/// Tape version; `t_hat` is `1×3`.
pub fn record_translation_loss(tape: &mut Tape, t_hat: Var, t_star: Vec3) -> Var {
    let target = tape.constant(Tensor::row(&t_star.to_array()));
    let d = tape.sub(t_hat, target);
    let sq = tape.mul(d, d);
    tape.sum(sq)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub rot: f64,
    pub trans: f64,
    pub reg: f64,
    pub beta: f64,
    pub total: f64,
}

/// `rot + trans + β·reg`.
pub fn total_loss(rot: f64, trans: f64, reg: f64, beta: f64) -> Result<LossBreakdown> {
    for (name, v) in [("rotation", rot), ("translation", trans), ("regularizer", reg), ("beta", beta)] {
        if !(v >= 0.0) {
            return Err(Error::InvalidArgument(alloc::format!("{name} loss component {v} is negative")));
        }
    }
    Ok(LossBreakdown {
        rot,
        trans,
        reg,
        beta,
        total: rot + trans + beta * reg,
    })
}

/// Rotation error in degrees.
pub fn rotation_error_deg(estimate: &RigidTransform, gt: &RigidTransform) -> f64 {
    let tr = estimate.matrix().transpose().mul_mat(&gt.matrix()).trace();
    libm::acos(((tr - 1.0) / 2.0).clamp(-1.0, 1.0)).to_degrees()
}

/// Translation error (Euclidean distance).
pub fn translation_error(estimate: &RigidTransform, gt: &RigidTransform) -> f64 {
    (estimate.translation - gt.translation).norm()
}

/// Success thresholds and inlier radius of an evaluation profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdProfile {
    pub re_deg: f64,
    pub te: f64,
    pub tau: f64,
}

impl ThresholdProfile {
    pub const INDOOR: ThresholdProfile = ThresholdProfile {
        re_deg: 15.0,
        te: 0.30,
        tau: 0.10,
    };
    pub const OUTDOOR: ThresholdProfile = ThresholdProfile {
        re_deg: 5.0,
        te: 0.60,
        tau: 0.60,
    };

    pub fn success(&self, estimate: &RigidTransform, gt: &RigidTransform) -> bool {
        rotation_error_deg(estimate, gt) < self.re_deg && translation_error(estimate, gt) < self.te
    }
}

/// One registered pair as seen by the metrics.
#[derive(Debug, Clone, Copy)]
pub struct PairEvaluation<'a> {
    pub src: &'a [Vec3],
    pub tar: &'a [Vec3],
    pub correspondences: &'a [(usize, usize)],
    pub estimate: RigidTransform,
    pub ground_truth: RigidTransform,
}

fn check_correspondences(p: &PairEvaluation<'_>) -> Result<()> {
    if p.correspondences.is_empty() {
        return Err(Error::InvalidArgument("empty correspondence set".into()));
    }
    if p.correspondences.iter().any(|&(i, j)| i >= p.src.len() || j >= p.tar.len()) {
        return Err(Error::InvalidArgument("correspondence index out of range".into()));
    }
    Ok(())
}

/// `sqrt(mean 1[‖R̂x_i + t̂ − y_j‖² < τ])` over the correspondences. The
/// squared residual is compared against `τ` as written.
pub fn inlier_delta(p: &PairEvaluation<'_>, tau: f64) -> Result<f64> {
    check_correspondences(p)?;
    let hits = p
        .correspondences
        .iter()
        .filter(|&&(i, j)| (p.estimate.apply(p.src[i]) - p.tar[j]).norm_squared() < tau)
        .count();
    Ok(libm::sqrt(hits as f64 / p.correspondences.len() as f64))
}

/// `sqrt(mean ‖R̂x_i + t̂ − y_j‖²)` over the correspondences.
pub fn correspondence_rmse(p: &PairEvaluation<'_>) -> Result<f64> {
    check_correspondences(p)?;
    let s: f64 = p
        .correspondences
        .iter()
        .map(|&(i, j)| (p.estimate.apply(p.src[i]) - p.tar[j]).norm_squared())
        .sum();
    Ok(libm::sqrt(s / p.correspondences.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    /// `δ` per pair.
    pub deltas: Vec<f64>,
    /// Mean `δ` in percent.
    pub delta_rr: f64,
    /// Percentage of pairs within the RE/TE thresholds.
    pub threshold_rr: f64,
    /// Mean correspondence RMSE.
    pub rmse: f64,
}

pub fn registration_recall(pairs: &[PairEvaluation<'_>], profile: &ThresholdProfile) -> Result<RecallReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no pairs to evaluate".into()));
    }
    let mut deltas = Vec::with_capacity(pairs.len());
    let mut rmse = 0.0;
    let mut ok = 0usize;
    for p in pairs {
        deltas.push(inlier_delta(p, profile.tau)?);
        rmse += correspondence_rmse(p)?;
        ok += profile.success(&p.estimate, &p.ground_truth) as usize;
    }
    let n = pairs.len() as f64;
    Ok(RecallReport {
        delta_rr: 100.0 * deltas.iter().sum::<f64>() / n,
        deltas,
        threshold_rr: 100.0 * ok as f64 / n,
        rmse: rmse / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `2PR/(P + R)`, zero when both are zero.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Predicted matches count as true positives when the ground truth maps
/// the source point within `tau` of the matched target point.
pub fn f1_score(
    predicted: &[(usize, usize)],
    gt_count: usize,
    src: &[Vec3],
    tar: &[Vec3],
    gt: &RigidTransform,
    tau: f64,
) -> Result<F1Score> {
    if predicted.iter().any(|&(i, j)| i >= src.len() || j >= tar.len()) {
        return Err(Error::InvalidArgument("predicted match index out of range".into()));
    }
    let tp = predicted.iter().filter(|&&(i, j)| gt.apply(src[i]).distance(tar[j]) < tau).count() as f64;
    let precision = if predicted.is_empty() { 0.0 } else { tp / predicted.len() as f64 };
    let recall = if gt_count == 0 { 0.0 } else { (tp / gt_count as f64).min(1.0) };
    Ok(F1Score {
        precision,
        recall,
        f1: f1_from(precision, recall),
    })
}

/// Per-split summary written by evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// Mean rotation error over successful pairs, degrees.
    pub re_deg: f64,
    /// Mean translation error over successful pairs, in hundredths of a unit.
    pub te_cm: f64,
    pub median_re_deg: f64,
    pub median_te: f64,
    /// Threshold-based registration recall, percent.
    pub rr_percent: f64,
    /// Mean `δ`, percent.
    pub delta_rr_percent: f64,
    pub f1_percent: f64,
    pub rmse: f64,
    pub runtime_s: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quaternion;
    use core::f64::consts::{FRAC_PI_2, PI};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rot(rng: &mut ChaCha8Rng) -> RigidTransform {
        let q = Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        RigidTransform::new(q, Vec3::ZERO).unwrap()
    }

    #[test]
    fn rotation_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let a = random_rot(&mut rng).matrix();
        assert!(rotation_loss(&a, &a).unwrap() < 1e-4);
        for axis in [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.3, -0.4, 0.8)] {
            let r = RigidTransform::new(Quaternion::from_axis_angle(axis, FRAC_PI_2).unwrap(), Vec3::ZERO).unwrap();
            assert!((rotation_loss(&Mat3::IDENTITY, &r.matrix()).unwrap() - FRAC_PI_2).abs() < 1e-12);
        }
        for _ in 0..100 {
            let (p, q) = (random_rot(&mut rng), random_rot(&mut rng));
            let rel = p.rotation.conjugate().mul(&q.rotation);
            let oracle = rel.angle();
            let got = rotation_loss(&p.matrix(), &q.matrix()).unwrap();
            let l = random_rot(&mut rng).matrix();
            if oracle < 1e-3 || oracle > PI - 1e-3 {
                continue;
            }
            assert!((got - oracle).abs() < 1e-9, "{got} {oracle}");
            assert!((got - rotation_loss(&q.matrix(), &p.matrix()).unwrap()).abs() < 1e-9);
            let left = rotation_loss(&l.mul_mat(&p.matrix()), &l.mul_mat(&q.matrix())).unwrap();
            assert!((left - got).abs() < 1e-9);
        }
        let mut bad = Mat3::IDENTITY;
        bad.0[0][0] = 2.0;
        assert!(rotation_loss(&bad, &Mat3::IDENTITY).is_err());
    }

    #[test]
    fn tape_rotation_loss_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let (p, q) = (random_rot(&mut rng).matrix(), random_rot(&mut rng).matrix());
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::row(&p.row_major()));
        let l = record_rotation_loss(&mut tape, v, &q);
        assert!((tape.value(l).item() - rotation_loss(&p, &q).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn translation_loss_cases() {
        let a = Vec3::new(0.3, -1.0, 2.0);
        assert_eq!(translation_loss(a, a), 0.0);
        assert_eq!(translation_loss(Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0)), 1.0);
        let b = Vec3::new(-0.7, 0.5, 0.25);
        let oracle = (0.3f64 + 0.7).powi(2) + (-1.0f64 - 0.5).powi(2) + (2.0f64 - 0.25).powi(2);
        assert!((translation_loss(a, b) - oracle).abs() < 1e-15);
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::row(&a.to_array()));
        let l = record_translation_loss(&mut tape, v, b);
        assert!((tape.value(l).item() - oracle).abs() < 1e-15);
    }

    #[test]
    fn total_loss_cases() {
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.05).unwrap().total, 0.0);
        assert!((total_loss(1.0, 1.0, 1.0, 0.05).unwrap().total - 2.05).abs() < 1e-15);
        assert!((total_loss(0.2, 0.3, 2.0, 0.05).unwrap().total - 0.6).abs() < 1e-15);
        assert!(total_loss(-0.1, 0.0, 0.0, 0.05).is_err());
    }

    fn line_pair(n: usize) -> (Vec<Vec3>, Vec<(usize, usize)>) {
        let pts: Vec<Vec3> = (0..n).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        (pts, (0..n).map(|i| (i, i)).collect())
    }

    #[test]
    fn delta_cases() {
        let (src, omega) = line_pair(100);
        let eval = |tar: &[Vec3], omega: &[(usize, usize)]| {
            let p = PairEvaluation {
                src: &src,
                tar,
                correspondences: omega,
                estimate: RigidTransform::IDENTITY,
                ground_truth: RigidTransform::IDENTITY,
            };
            (inlier_delta(&p, 0.1), correspondence_rmse(&p))
        };
        let mut tar = src.clone();
        let (d, r) = eval(&tar, &omega);
        assert_eq!((d.unwrap(), r.unwrap()), (1.0, 0.0));

        for y in tar.iter_mut().skip(50) {
            y.y += 1.0;
        }
        let d = eval(&tar, &omega).0.unwrap();
        assert!((d - 0.70711).abs() < 1e-5);
        assert!((d - libm::sqrt(0.5)).abs() < 1e-15);

        for y in tar.iter_mut() {
            y.z += 1.0;
        }
        assert_eq!(eval(&tar, &omega).0.unwrap(), 0.0);
        assert!(eval(&tar, &[]).0.is_err());
    }

    #[test]
    fn recall_monotone_in_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let (src, omega) = line_pair(40);
        let tar: Vec<Vec3> = src.iter().map(|p| *p + Vec3::new(0.0, rng.random_range(0.0..0.5), 0.0)).collect();
        let pair = PairEvaluation {
            src: &src,
            tar: &tar,
            correspondences: &omega,
            estimate: RigidTransform::IDENTITY,
            ground_truth: RigidTransform::translation(Vec3::new(0.0, 0.1, 0.0)),
        };
        let mut last = -1.0;
        for k in 0..20 {
            let tau = k as f64 * 0.02;
            let r = registration_recall(&[pair], &ThresholdProfile { tau, ..ThresholdProfile::INDOOR }).unwrap();
            assert!(r.delta_rr >= last && (0.0..=100.0).contains(&r.delta_rr));
            assert_eq!(r.threshold_rr, 100.0);
            last = r.delta_rr;
        }
    }

    #[test]
    fn f1_cases() {
        assert_eq!(f1_from(1.0, 1.0), 1.0);
        assert_eq!(f1_from(1.0, 0.0), 0.0);
        assert_eq!(f1_from(0.0, 0.0), 0.0);
        assert!((f1_from(0.8, 0.5) - 0.8 / 1.3).abs() < 1e-15);

        let (src, _) = line_pair(10);
        let mut tar = src.clone();
        tar[9].y = 5.0;
        let pred: Vec<(usize, usize)> = (0..5).map(|i| (i, i)).chain([(9, 9)]).collect();
        let s = f1_score(&pred, 10, &src, &tar, &RigidTransform::IDENTITY, 0.1).unwrap();
        assert!((s.precision - 5.0 / 6.0).abs() < 1e-15 && (s.recall - 0.5).abs() < 1e-15);
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
