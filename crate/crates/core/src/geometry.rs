//! Rigid-body math and the input preprocessing applied to every scan:
//! voxel filtering, ray-length ordering and canonical normalization.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Descriptor width shared by every learned and ingested feature.
pub const DESCRIPTOR_DIM: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        libm::sqrt(self.norm_squared())
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn column(&self, j: usize) -> Vec3 {
        Vec3::new(self.0[0][j], self.0[1][j], self.0[2][j])
    }

    pub fn row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }

    pub fn from_row_major(v: &[f64]) -> Mat3 {
        Mat3([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    /// Largest entry of |MᵀM − I| together with |det − 1|.
    pub fn rotation_deviation(&self) -> f64 {
        let mtm = self.transpose().mul_mat(self);
        let mut worst = libm::fabs(self.determinant() - 1.0);
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max(libm::fabs(mtm.0[i][j] - target));
            }
        }
        worst
    }
}

/// Scalar-first quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 1e-12) {
            return Err(Error::InvalidArgument("rotation axis has zero length".into()));
        }
        let half = 0.5 * angle;
        let s = libm::sin(half) / n;
        Ok(Self::new(libm::cos(half), axis.x * s, axis.y * s, axis.z * s))
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
    }

    pub fn normalize(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::NonUnitQuaternion(n));
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Same rotation with `w ≥ 0`.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            Self::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            *self
        }
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * o`.
    pub fn mul(&self, o: &Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        quat_to_matrix_unchecked(self).mul_vec(v)
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let vn = libm::sqrt(self.x * self.x + self.y * self.y + self.z * self.z);
        2.0 * libm::atan2(vn, libm::fabs(self.w))
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }
}

fn quat_to_matrix_unchecked(q: &Quaternion) -> Mat3 {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    Mat3([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
}

/// Rotation matrix of a unit quaternion. Inputs further than 1e-6 from unit
/// norm are rejected.
pub fn quat_to_matrix(q: &Quaternion) -> Result<Mat3> {
    let n = q.norm();
    if !(libm::fabs(n - 1.0) <= 1e-6) {
        return Err(Error::NonUnitQuaternion(n));
    }
    Ok(quat_to_matrix_unchecked(q))
}

/// Unit quaternion of a proper rotation matrix (Shepperd's method).
pub fn matrix_to_quat(m: &Mat3) -> Result<Quaternion> {
    let dev = m.rotation_deviation();
    if !(dev <= 1e-6) {
        return Err(Error::NotARotation(dev));
    }
    let r = &m.0;
    let tr = m.trace();
    let q = if tr > 0.0 {
        let s = libm::sqrt(tr + 1.0) * 2.0;
        Quaternion::new(0.25 * s, (r[2][1] - r[1][2]) / s, (r[0][2] - r[2][0]) / s, (r[1][0] - r[0][1]) / s)
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = libm::sqrt(1.0 + r[0][0] - r[1][1] - r[2][2]) * 2.0;
        Quaternion::new((r[2][1] - r[1][2]) / s, 0.25 * s, (r[0][1] + r[1][0]) / s, (r[0][2] + r[2][0]) / s)
    } else if r[1][1] > r[2][2] {
        let s = libm::sqrt(1.0 + r[1][1] - r[0][0] - r[2][2]) * 2.0;
        Quaternion::new((r[0][2] - r[2][0]) / s, (r[0][1] + r[1][0]) / s, 0.25 * s, (r[1][2] + r[2][1]) / s)
    } else {
        let s = libm::sqrt(1.0 + r[2][2] - r[0][0] - r[1][1]) * 2.0;
        Quaternion::new((r[1][0] - r[0][1]) / s, (r[0][2] + r[2][0]) / s, (r[1][2] + r[2][1]) / s, 0.25 * s)
    };
    Ok(q.normalize()?.canonical())
}

/// Rotation followed by translation: `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Quaternion,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Quaternion::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: Quaternion, translation: Vec3) -> Result<Self> {
        if !translation.is_finite() {
            return Err(Error::InvalidArgument("translation is not finite".into()));
        }
        Ok(Self {
            rotation: rotation.normalize()?,
            translation,
        })
    }

    pub fn translation(t: Vec3) -> Self {
        Self {
            rotation: Quaternion::IDENTITY,
            translation: t,
        }
    }

    pub fn matrix(&self) -> Mat3 {
        quat_to_matrix_unchecked(&self.rotation)
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        apply_transform(self, p)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation.mul(&other.rotation),
            translation: self.apply(other.translation),
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rot = self.rotation.conjugate();
        RigidTransform {
            rotation: rot,
            translation: -quat_to_matrix_unchecked(&rot).mul_vec(self.translation),
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation;
        let t = self.translation;
        [q.w, q.x, q.y, q.z, t.x, t.y, t.z]
    }
}

pub fn apply_transform(t: &RigidTransform, p: Vec3) -> Vec3 {
    t.matrix().mul_vec(p) + t.translation
}

/// Ordered points with an optional parallel list of descriptor rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    descriptors: Option<Vec<[f32; DESCRIPTOR_DIM]>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!("point {i} is not finite")));
        }
        Ok(Self {
            points,
            descriptors: None,
        })
    }

    pub fn with_descriptors(mut self, descriptors: Vec<[f32; DESCRIPTOR_DIM]>) -> Result<Self> {
        if descriptors.len() != self.points.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "{} descriptor rows for {} points",
                descriptors.len(),
                self.points.len()
            )));
        }
        self.descriptors = Some(descriptors);
        Ok(self)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn descriptors(&self) -> Option<&[[f32; DESCRIPTOR_DIM]]> {
        self.descriptors.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self.points.iter().fold(Vec3::ZERO, |acc, &p| acc + p);
        sum.scale(1.0 / self.points.len() as f64)
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        let m = t.matrix();
        PointCloud {
            points: self.points.iter().map(|&p| m.mul_vec(p) + t.translation).collect(),
            descriptors: self.descriptors.clone(),
        }
    }

    /// Reorders points (and descriptors) so that output `k` is input `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> PointCloud {
        PointCloud {
            points: perm.iter().map(|&i| self.points[i]).collect(),
            descriptors: self
                .descriptors
                .as_ref()
                .map(|d| perm.iter().map(|&i| d[i]).collect()),
        }
    }
}

fn voxel_key(p: Vec3, voxel: f64) -> (i64, i64, i64) {
    (
        libm::floor(p.x / voxel) as i64,
        libm::floor(p.y / voxel) as i64,
        libm::floor(p.z / voxel) as i64,
    )
}

/// Replaces the members of every occupied voxel cell by their centroid.
/// Cells appear in the order they are first visited. Descriptors are
/// dropped, since a centroid has no measured descriptor.
pub fn voxel_downsample(pc: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0) || !voxel.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!("voxel size must be positive, got {voxel}")));
    }
    if pc.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut cells: BTreeMap<(i64, i64, i64), usize> = BTreeMap::new();
    let mut sums: Vec<(Vec3, usize)> = Vec::new();
    for &p in pc.points() {
        let slot = *cells.entry(voxel_key(p, voxel)).or_insert_with(|| {
            sums.push((Vec3::ZERO, 0));
            sums.len() - 1
        });
        sums[slot].0 = sums[slot].0 + p;
        sums[slot].1 += 1;
    }
    PointCloud::new(sums.into_iter().map(|(s, n)| s.scale(1.0 / n as f64)).collect())
}

/// Permutation sorting points by descending squared distance to
/// `sensor_origin`; equal distances keep their original relative order.
pub fn ray_length_order(pc: &PointCloud, sensor_origin: Vec3) -> Vec<usize> {
    let d2: Vec<f64> = pc.points().iter().map(|&p| (p - sensor_origin).norm_squared()).collect();
    let mut perm: Vec<usize> = (0..pc.len()).collect();
    perm.sort_by(|&a, &b| d2[b].total_cmp(&d2[a]));
    perm
}

pub fn order_by_ray_length(pc: &PointCloud, sensor_origin: Vec3) -> PointCloud {
    pc.permuted(&ray_length_order(pc, sensor_origin))
}

/// Similarity map taking raw source coordinates into the canonical frame:
/// `p ↦ (p − center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, p: Vec3) -> Vec3 {
        (p - self.center).scale(1.0 / self.scale)
    }

    pub fn apply_cloud(&self, pc: &PointCloud) -> PointCloud {
        PointCloud {
            points: pc.points().iter().map(|&p| self.apply(p)).collect(),
            descriptors: pc.descriptors.clone(),
        }
    }

    /// Conjugates a raw-frame transform into the canonical frame.
    pub fn to_canonical(&self, t: &RigidTransform) -> RigidTransform {
        let r = t.matrix();
        let shifted = r.mul_vec(self.center) + t.translation - self.center;
        RigidTransform {
            rotation: t.rotation,
            translation: shifted.scale(1.0 / self.scale),
        }
    }

    /// Inverse of [`Normalization::to_canonical`].
    pub fn to_raw(&self, t: &RigidTransform) -> RigidTransform {
        let r = t.matrix();
        RigidTransform {
            rotation: t.rotation,
            translation: t.translation.scale(self.scale) + self.center - r.mul_vec(self.center),
        }
    }
}

/// Normalization that centers `src` at its centroid and scales its largest
/// radius to one.
pub fn canonical_normalization(src: &PointCloud) -> Result<Normalization> {
    if src.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let center = src.centroid();
    let radius = src.points().iter().map(|&p| (p - center).norm()).fold(0.0, f64::max);
    if !(radius > 1e-12) {
        return Err(Error::Degenerate("all source points coincide"));
    }
    Ok(Normalization { center, scale: radius })
}

/// Expresses both clouds and the ground truth in the source's canonical
/// frame. The returned transform maps the normalized source onto the
/// normalized target.
pub fn normalize_pair(
    src: &PointCloud,
    tar: &PointCloud,
    gt: &RigidTransform,
) -> Result<(PointCloud, PointCloud, RigidTransform, Normalization)> {
    if tar.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let norm = canonical_normalization(src)?;
    Ok((norm.apply_cloud(src), norm.apply_cloud(tar), norm.to_canonical(gt), norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit_quat(rng: &mut ChaCha8Rng) -> Quaternion {
        Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize()
        .unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
        Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    #[test]
    fn identity_quaternion_gives_identity_matrix() {
        assert_eq!(quat_to_matrix(&Quaternion::IDENTITY).unwrap(), Mat3::IDENTITY);
    }

    #[test]
    fn quarter_turn_about_z() {
        let q = Quaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), FRAC_PI_2).unwrap();
        let m = quat_to_matrix(&q).unwrap();
        let c = m.column(0);
        assert!(c.distance(Vec3::new(0.0, 1.0, 0.0)) < 1e-12);
    }

    #[test]
    fn rejects_non_unit_quaternion() {
        assert!(quat_to_matrix(&Quaternion::new(1.0, 0.1, 0.0, 0.0)).is_err());
    }

    #[test]
    fn random_rotations_are_orthonormal_and_sign_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let q = random_unit_quat(&mut rng);
            let m = quat_to_matrix(&q).unwrap();
            assert!(m.rotation_deviation() < 1e-9);
            let neg = Quaternion::new(-q.w, -q.x, -q.y, -q.z);
            assert_eq!(quat_to_matrix(&neg).unwrap(), m);
            let back = matrix_to_quat(&m).unwrap();
            assert!(quat_to_matrix(&back).unwrap().row_major().iter().zip(m.row_major()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn apply_identity_and_translation() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(apply_transform(&RigidTransform::IDENTITY, p), p);
        let t = RigidTransform::translation(Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(apply_transform(&t, Vec3::ZERO), Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let t = RigidTransform::new(random_unit_quat(&mut rng), random_vec(&mut rng, 5.0)).unwrap();
            let p = random_vec(&mut rng, 10.0);
            let round = t.compose(&t.inverse()).apply(p);
            assert!(round.distance(p) < 1e-9);
            assert!(t.inverse().apply(t.apply(p)).distance(p) < 1e-9);
        }
    }

    #[test]
    fn cube_collapses_to_centroid() {
        let mut pts = Vec::new();
        for &x in &[0.0, 1.0] {
            for &y in &[0.0, 1.0] {
                for &z in &[0.0, 1.0] {
                    pts.push(Vec3::new(x, y, z));
                }
            }
        }
        let out = voxel_downsample(&PointCloud::new(pts).unwrap(), 10.0).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out.points()[0].distance(Vec3::new(0.5, 0.5, 0.5)) < 1e-15);
    }

    #[test]
    fn separated_points_survive_downsampling() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64 * 1.0 + 0.5, 0.5, 0.5)).collect();
        let out = voxel_downsample(&PointCloud::new(pts).unwrap(), 1.0).unwrap();
        assert_eq!(out.len(), 10);
    }

    #[test]
    fn voxel_count_matches_cell_hash_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..10_000).map(|_| random_vec(&mut rng, 1.0)).collect();
        let pc = PointCloud::new(pts.clone()).unwrap();
        let out = voxel_downsample(&pc, 0.05).unwrap();
        let mut oracle = std::collections::HashSet::new();
        for p in &pts {
            oracle.insert(((p.x / 0.05).floor() as i64, (p.y / 0.05).floor() as i64, (p.z / 0.05).floor() as i64));
        }
        assert_eq!(out.len(), oracle.len());
    }

    #[test]
    fn voxel_rejects_bad_input() {
        let pc = PointCloud::new(alloc::vec![Vec3::ZERO]).unwrap();
        assert!(voxel_downsample(&pc, 0.0).is_err());
        assert!(PointCloud::new(Vec::new()).is_err());
    }

    #[test]
    fn ray_order_descending_and_stable() {
        let pc = PointCloud::new(alloc::vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(3.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0)
        ])
        .unwrap();
        assert_eq!(ray_length_order(&pc, Vec3::ZERO), alloc::vec![1, 2, 0]);
        let eq = PointCloud::new(alloc::vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, -1.0)
        ])
        .unwrap();
        assert_eq!(ray_length_order(&eq, Vec3::ZERO), alloc::vec![0, 1, 2]);
    }

    #[test]
    fn ray_order_full_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pc = PointCloud::new((0..1024).map(|_| random_vec(&mut rng, 3.0)).collect()).unwrap();
        let ordered = order_by_ray_length(&pc, Vec3::ZERO);
        for w in ordered.points().windows(2) {
            assert!(w[0].norm_squared() >= w[1].norm_squared());
        }
        assert_eq!(order_by_ray_length(&ordered, Vec3::ZERO), ordered);
    }

    #[test]
    fn normalize_centers_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec3> = (0..50).map(|_| random_vec(&mut rng, 1.0) + Vec3::new(5.0, 5.0, 5.0)).collect();
        let src = PointCloud::new(pts).unwrap();
        let (ns, nt, gt, _) = normalize_pair(&src, &src, &RigidTransform::IDENTITY).unwrap();
        assert!(ns.centroid().norm() < 1e-12);
        let max_r = ns.points().iter().map(|p| p.norm()).fold(0.0, f64::max);
        assert!((max_r - 1.0).abs() < 1e-12);
        assert_eq!(ns, nt);
        assert_eq!(gt.rotation, Quaternion::IDENTITY);
        assert!(gt.translation.norm() < 1e-15);
    }

    #[test]
    fn normalize_round_trip_residual_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let src = PointCloud::new((0..100).map(|_| random_vec(&mut rng, 4.0) + Vec3::new(2.0, -1.0, 7.0)).collect()).unwrap();
            let gt = RigidTransform::new(random_unit_quat(&mut rng), random_vec(&mut rng, 3.0)).unwrap();
            let tar = src.transformed(&gt);
            let (ns, nt, ngt, norm) = normalize_pair(&src, &tar, &gt).unwrap();
            let sq: f64 = ns.points().iter().zip(nt.points()).map(|(&a, &b)| (ngt.apply(a) - b).norm_squared()).sum();
            assert!((sq / ns.len() as f64).sqrt() < 1e-9);
            let raw = norm.to_raw(&ngt);
            assert!(raw.translation.distance(gt.translation) < 1e-9);
        }
    }

    #[test]
    fn normalize_rejects_degenerate_cloud() {
        let pc = PointCloud::new(alloc::vec![Vec3::new(1.0, 1.0, 1.0); 4]).unwrap();
        assert!(matches!(normalize_pair(&pc, &pc, &RigidTransform::IDENTITY), Err(Error::Degenerate(_))));
    }

    proptest::proptest! {
        #[test]
        fn transform_is_isometry(
            q in proptest::array::uniform4(-1.0f64..1.0),
            t in proptest::array::uniform3(-10.0f64..10.0),
            a in proptest::array::uniform3(-10.0f64..10.0),
            b in proptest::array::uniform3(-10.0f64..10.0),
        ) {
            let q = Quaternion::new(q[0], q[1], q[2], q[3]);
            proptest::prop_assume!(q.norm() > 1e-3);
            let tr = RigidTransform::new(q, Vec3::from_array(t)).unwrap();
            let (a, b) = (Vec3::from_array(a), Vec3::from_array(b));
            let d0 = a.distance(b);
            let d1 = tr.apply(a).distance(tr.apply(b));
            proptest::prop_assert!((d0 - d1).abs() < 1e-9);
        }
    }
}
