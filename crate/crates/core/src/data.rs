//! Synthetic scene pairs with exact ground truth, correspondence recovery
//! and row provenance through the feature compression.

use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Quaternion, RigidTransform, Vec3};
use crate::matcher::SimilarityMatrix;
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub num_points: usize,
    /// Fraction of target points copied from the source.
    pub overlap: f64,
    /// Fraction of target points drawn uniformly in the scene bounding box.
    pub outlier_ratio: f64,
    /// Per-axis standard deviation of the noise on copied points; each
    /// noise vector is truncated to length `3σ`.
    pub noise_sigma: f64,
    pub max_angle_deg: f64,
    /// Radius of the ball the translation is drawn from.
    pub max_translation: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_points: 1024,
            overlap: 0.8,
            outlier_ratio: 0.1,
            noise_sigma: 0.005,
            max_angle_deg: 45.0,
            max_translation: 0.5,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.num_points < 64 {
            return bad("num_points must be at least 64");
        }
        if !(self.overlap > 0.0 && self.overlap <= 1.0) {
            return bad("overlap must lie in (0, 1]");
        }
        if !(self.outlier_ratio >= 0.0 && self.outlier_ratio < 1.0) {
            return bad("outlier ratio must lie in [0, 1)");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be finite and non-negative");
        }
        if !(self.max_angle_deg >= 0.0 && self.max_angle_deg <= 180.0) {
            return bad("max angle must lie in [0, 180] degrees");
        }
        if !(self.max_translation >= 0.0 && self.max_translation.is_finite()) {
            return bad("max translation must be finite and non-negative");
        }
        Ok(())
    }

    /// Copied, fresh-surface and outlier point counts of the target.
    pub fn target_counts(&self) -> (usize, usize, usize) {
        let n = self.num_points;
        let copies = libm::round(self.overlap * n as f64) as usize;
        let outliers = (libm::round(self.outlier_ratio * n as f64) as usize).min(n - copies);
        (copies, n - copies - outliers, outliers)
    }

    /// Distance within which a copied point stays of its transformed source.
    pub fn match_radius(&self) -> f64 {
        3.0 * self.noise_sigma + 1e-9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub src: PointCloud,
    pub tar: PointCloud,
    /// Maps `src` onto `tar`.
    pub gt: RigidTransform,
    /// `(source index, target index)`.
    pub gt_correspondences: Vec<(usize, usize)>,
    pub overlap_ratio: f64,
    pub outlier_ratio: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    Plane { center: Vec3, u: Vec3, v: Vec3, half: (f64, f64) },
    Sphere { center: Vec3, radius: f64 },
    Cuboid { center: Vec3, axes: [Vec3; 3], half: [f64; 3] },
}

fn uniform_vec<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Vec3 {
    Vec3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi))
}

fn unit_vec<R: Rng>(rng: &mut R) -> Vec3 {
    Vec3::from_array(UnitSphere.sample(rng))
}

fn random_rotation<R: Rng>(rng: &mut R, max_angle: f64) -> Quaternion {
    let angle = if max_angle > 0.0 { rng.random_range(0.0..=max_angle) } else { 0.0 };
    Quaternion::from_axis_angle(unit_vec(rng), angle).expect("unit axis")
}

impl Primitive {
    fn random<R: Rng>(rng: &mut R) -> Self {
        let center = uniform_vec(rng, -0.6, 0.6);
        match rng.random_range(0..3) {
            0 => {
                let u = unit_vec(rng);
                let helper = if libm::fabs(u.x) < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
                let v = u.cross(helper);
                let v = v.scale(1.0 / v.norm());
                Primitive::Plane {
                    center,
                    u,
                    v,
                    half: (rng.random_range(0.2..0.6), rng.random_range(0.2..0.6)),
                }
            }
            1 => Primitive::Sphere {
                center,
                radius: rng.random_range(0.15..0.4),
            },
            _ => {
                let q = random_rotation(rng, core::f64::consts::PI);
                let axes = [
                    q.rotate(Vec3::new(1.0, 0.0, 0.0)),
                    q.rotate(Vec3::new(0.0, 1.0, 0.0)),
                    q.rotate(Vec3::new(0.0, 0.0, 1.0)),
                ];
                Primitive::Cuboid {
                    center,
                    axes,
                    half: [rng.random_range(0.1..0.4), rng.random_range(0.1..0.4), rng.random_range(0.1..0.4)],
                }
            }
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec3 {
        match *self {
            Primitive::Plane { center, u, v, half } => {
                center + u.scale(rng.random_range(-half.0..=half.0)) + v.scale(rng.random_range(-half.1..=half.1))
            }
            Primitive::Sphere { center, radius } => center + unit_vec(rng).scale(radius),
            Primitive::Cuboid { center, axes, half } => {
                // face chosen with probability proportional to its area
                let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random_range(0.0..total);
                let mut axis = 2;
                for (a, &area) in areas.iter().enumerate() {
                    if pick < area {
                        axis = a;
                        break;
                    }
                    pick -= area;
                }
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let mut local = [0.0; 3];
                for (c, l) in local.iter_mut().enumerate() {
                    *l = if c == axis { sign * half[c] } else { rng.random_range(-half[c]..=half[c]) };
                }
                center + axes[0].scale(local[0]) + axes[1].scale(local[1]) + axes[2].scale(local[2])
            }
        }
    }
}

fn truncated_noise<R: Rng>(rng: &mut R, sigma: f64) -> Vec3 {
    if sigma == 0.0 {
        return Vec3::ZERO;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    loop {
        let n = Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        if n.norm() <= 3.0 * sigma {
            return n;
        }
    }
}

/// One synthetic pair. The target lists the transformed, noisy copies of a
/// sorted random source subset first, then fresh surface samples, then
/// uniform outliers from the source bounding box.
pub fn generate_scene_pair(config: &GeneratorConfig, seed: u64) -> Result<ScenePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with(config, &mut rng)
}

/// Pair `i` of a dataset drawn from `master_seed`; each pair uses its own
/// ChaCha stream so pairs can be generated independently.
pub fn generate_dataset_pair(config: &GeneratorConfig, master_seed: u64, i: u64) -> Result<ScenePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(i);
    generate_with(config, &mut rng)
}

fn generate_with(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<ScenePair> {
    config.validate()?;
    let n = config.num_points;
    let prims: Vec<Primitive> = (0..rng.random_range(3..=6)).map(|_| Primitive::random(rng)).collect();
    let surface = |rng: &mut ChaCha8Rng| prims[rng.random_range(0..prims.len())].sample(rng);
    let src_pts: Vec<Vec3> = (0..n).map(|_| surface(rng)).collect();

    let gt = RigidTransform::new(
        random_rotation(rng, config.max_angle_deg.to_radians()),
        unit_vec(rng).scale(config.max_translation * libm::cbrt(rng.random_range(0.0..=1.0))),
    )?;

    let (copies, fresh, outliers) = config.target_counts();
    let mut subset = index::sample(rng, n, copies).into_vec();
    subset.sort_unstable();
    let mut tar_pts = Vec::with_capacity(n);
    for &i in &subset {
        tar_pts.push(gt.apply(src_pts[i]) + truncated_noise(rng, config.noise_sigma));
    }
    for _ in 0..fresh {
        let p = surface(rng);
        tar_pts.push(gt.apply(p));
    }
    let (lo, hi) = bounding_box(&src_pts);
    for _ in 0..outliers {
        let p = Vec3::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y), rng.random_range(lo.z..=hi.z));
        tar_pts.push(gt.apply(p));
    }
    Ok(ScenePair {
        src: PointCloud::new(src_pts)?,
        tar: PointCloud::new(tar_pts)?,
        gt,
        gt_correspondences: subset.iter().enumerate().map(|(k, &i)| (i, k)).collect(),
        overlap_ratio: config.overlap,
        outlier_ratio: config.outlier_ratio,
        noise_sigma: config.noise_sigma,
    })
}

fn bounding_box(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    (lo, hi)
}

fn nearest(points: &[Vec3], q: Vec3) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = (*p - q).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Mutual nearest neighbors between `gt·src` and `tar` no further apart than
/// `radius`, ordered by source index.
pub fn recover_correspondences(src: &PointCloud, tar: &PointCloud, gt: &RigidTransform, radius: f64) -> Vec<(usize, usize)> {
    let moved: Vec<Vec3> = src.points().iter().map(|&p| gt.apply(p)).collect();
    let r2 = radius * radius;
    let mut out = Vec::new();
    for (i, &p) in moved.iter().enumerate() {
        let (j, d) = nearest(tar.points(), p);
        if d <= r2 && nearest(&moved, tar.points()[j]).0 == i {
            out.push((i, j));
        }
    }
    out
}

/// For each post-compression row, the pre-compression row with the largest
/// cosine similarity (lowest index on ties; zero rows score 0).
pub fn compute_provenance(pre: &Tensor, post: &Tensor) -> Result<Vec<usize>> {
    if pre.cols() != post.cols() || pre.rows() == 0 {
        return Err(crate::error::shape_err(
            alloc::format!("non-empty matrices with {} columns", post.cols()),
            alloc::format!("{}x{}", pre.rows(), pre.cols()),
        ));
    }
    let unit = |t: &Tensor| {
        let mut u = t.clone();
        for r in 0..u.rows() {
            let row = u.row_slice_mut(r);
            let n = libm::sqrt(row.iter().map(|v| v * v).sum());
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        u
    };
    let scores = crate::nn::matmul_nt(&unit(post), &unit(pre));
    Ok((0..scores.rows()).map(|r| crate::matcher::argmax(scores.row_slice(r))).collect())
}

/// Point-index matches implied by the row argmaxes of the valid rows.
pub fn predicted_matches(s: &SimilarityMatrix, src_provenance: &[usize], tar_provenance: &[usize]) -> Vec<(usize, usize)> {
    (0..s.size())
        .filter(|&i| s.row_valid[i])
        .map(|i| (src_provenance[i], tar_provenance[s.row_argmax(i)]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, overlap: f64, outlier: f64, sigma: f64) -> GeneratorConfig {
        GeneratorConfig {
            num_points: n,
            overlap,
            outlier_ratio: outlier,
            noise_sigma: sigma,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn noiseless_full_overlap_is_exact_copy() {
        let c = cfg(128, 1.0, 0.0, 0.0);
        let p = generate_scene_pair(&c, 7).unwrap();
        for (s, t) in p.src.points().iter().zip(p.tar.points()) {
            assert_eq!(p.gt.apply(*s), *t);
        }
        let ident: Vec<(usize, usize)> = (0..128).map(|i| (i, i)).collect();
        assert_eq!(p.gt_correspondences, ident);
        assert_eq!(recover_correspondences(&p.src, &p.tar, &p.gt, c.match_radius()), ident);
    }

    #[test]
    fn seeds_are_deterministic() {
        let c = GeneratorConfig::default();
        assert_eq!(generate_scene_pair(&c, 3).unwrap(), generate_scene_pair(&c, 3).unwrap());
        assert_ne!(generate_scene_pair(&c, 3).unwrap(), generate_scene_pair(&c, 4).unwrap());
        assert_eq!(generate_dataset_pair(&c, 9, 2).unwrap(), generate_dataset_pair(&c, 9, 2).unwrap());
        assert_ne!(generate_dataset_pair(&c, 9, 2).unwrap(), generate_dataset_pair(&c, 9, 3).unwrap());
    }

    #[test]
    fn correspondences_respect_noise_bound() {
        let c = cfg(256, 0.8, 0.1, 0.01);
        for seed in 0..10 {
            let p = generate_scene_pair(&c, seed).unwrap();
            assert_eq!(p.tar.len(), 256);
            assert_eq!(p.gt_correspondences.len(), 205);
            for &(i, j) in &p.gt_correspondences {
                assert!(p.gt.apply(p.src.points()[i]).distance(p.tar.points()[j]) <= c.match_radius());
            }
            assert!(p.gt.rotation.angle() <= 45f64.to_radians() + 1e-12);
            assert!(p.gt.translation.norm() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn half_overlap_counts() {
        let c = cfg(1024, 0.5, 0.0, 0.005);
        for seed in 0..100 {
            let p = generate_scene_pair(&c, seed).unwrap();
            let k = p.gt_correspondences.len();
            assert!((461..=563).contains(&k), "{k}");
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(generate_scene_pair(&cfg(1024, 1.5, 0.0, 0.0), 0).is_err());
        assert!(generate_scene_pair(&cfg(1024, 0.0, 0.0, 0.0), 0).is_err());
        assert!(generate_scene_pair(&cfg(1024, 0.5, 1.0, 0.0), 0).is_err());
        assert!(generate_scene_pair(&cfg(32, 0.5, 0.0, 0.0), 0).is_err());
    }

    #[test]
    fn provenance_cases() {
        let pre = Tensor::from_vec(10, 4, (0..40).map(|v| libm::sin(v as f64 * 1.7)).collect());
        let post = pre.select_rows(&[0, 1, 2, 3, 4]);
        assert_eq!(compute_provenance(&pre, &post).unwrap(), [0, 1, 2, 3, 4]);
        let same = Tensor::filled(6, 4, 0.5);
        assert_eq!(compute_provenance(&same, &post).unwrap(), [0; 5]);

        let post = Tensor::from_vec(3, 4, (0..12).map(|v| libm::cos(v as f64)).collect());
        let got = compute_provenance(&pre, &post).unwrap();
        for r in 0..3 {
            let mut best = (0, f64::NEG_INFINITY);
            for k in 0..10 {
                let (a, b) = (post.row_slice(r), pre.row_slice(k));
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if dot / (na * nb) > best.1 {
                    best = (k, dot / (na * nb));
                }
            }
            assert_eq!(got[r], best.0);
        }
    }

    #[test]
    fn predicted_matches_follow_provenance() {
        let mut values = Tensor::zeros(3, 3);
        values.set(0, 2, 1.0);
        values.set(2, 1, 1.0);
        let s = SimilarityMatrix {
            values,
            row_valid: alloc::vec![true, false, true],
            effective_rank_target: 3,
        };
        assert_eq!(predicted_matches(&s, &[10, 11, 12], &[20, 21, 22]), [(10, 22), (12, 21)]);
    }
}
