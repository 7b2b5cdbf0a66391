//! Pure geometric primitives: centroids, PCA axes and normals with the
//! positive-component sign convention, Rodrigues rotations, rigid transforms,
//! and pose interpolation.
//!
//! Everything here is a pure function over immutable inputs and safe to call
//! concurrently.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance used when validating unit norms, orthonormality and determinants.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeometryError {
    #[error("point cloud is degenerate: {0}")]
    DegeneratePointCloud(String),
    #[error("point cloud must contain at least one finite point")]
    EmptyPointCloud,
    #[error("non-finite coordinate in point cloud")]
    NonFinite,
    #[error("{name} = {value} out of range {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("matrix is not a rotation (orthonormality or determinant violated)")]
    NotARotation,
    #[error("vector has zero norm")]
    ZeroNorm,
}

/// An ordered, non-empty set of 3D points in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyPointCloud);
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite())) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { points })
    }

    pub fn from_coords(coords: &[[f64; 3]]) -> Result<Self, GeometryError> {
        Self::new(coords.iter().map(|c| Vec3::new(c[0], c[1], c[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: N >= 1
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn centroid(&self) -> Vec3 {
        let sum: Vec3 = self.points.iter().sum();
        sum / self.points.len() as f64
    }

    /// Applies `p ↦ R p + t` to every point, preserving order.
    pub fn transformed(&self, rotation: &RotationMatrix, translation: &Vec3) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| rotation.matrix() * p + translation)
                .collect(),
        }
    }

    pub fn translated(&self, offset: &Vec3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| p + offset).collect(),
        }
    }

    /// Sample covariance (normalized by N-1), the PCA input.
    pub fn covariance(&self) -> Mat3 {
        let mean = self.centroid();
        let mut cov = Mat3::zeros();
        for p in &self.points {
            let d = p - mean;
            cov += d * d.transpose();
        }
        if self.points.len() > 1 {
            cov /= (self.points.len() - 1) as f64;
        }
        cov
    }
}

/// A unit direction normalized so that its largest-magnitude component is
/// non-negative. Ties pick the lowest index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVector {
    direction: Vec3,
}

impl UnitVector {
    /// Normalizes `v` and applies the sign convention.
    pub fn from_vector(v: Vec3) -> Result<Self, GeometryError> {
        let norm = v.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(GeometryError::ZeroNorm);
        }
        let mut d = v / norm;
        let dominant = dominant_component(&d);
        if d[dominant] < 0.0 {
            d = -d;
        }
        Ok(Self { direction: d })
    }

    pub fn vector(&self) -> Vec3 {
        self.direction
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        self.direction.dot(&other.direction)
    }
}

/// Index of the largest-magnitude component; the lowest index wins ties.
fn dominant_component(v: &Vec3) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

/// A proper rotation: R^T R = I, det R = 1 (within [`ORTHONORMAL_TOL`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix {
    m: Mat3,
}

impl RotationMatrix {
    pub fn identity() -> Self {
        Self { m: Mat3::identity() }
    }

    /// Validates orthonormality and determinant before accepting `m`.
    pub fn from_matrix(m: Mat3) -> Result<Self, GeometryError> {
        let gram = m.transpose() * m;
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((gram[(i, j)] - target).abs());
            }
        }
        if err > ORTHONORMAL_TOL || (m.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::NotARotation);
        }
        Ok(Self { m })
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix { m: self.m.transpose() }
    }

    pub fn compose(&self, rhs: &RotationMatrix) -> RotationMatrix {
        RotationMatrix { m: self.m * rhs.m }
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.m * v
    }

    /// Rotation angle in [0, π].
    pub fn angle(&self) -> f64 {
        self.rotation_vector().norm()
    }

    /// Log map: axis-angle vector with angle in [0, π].
    pub fn rotation_vector(&self) -> Vec3 {
        let trace = self.m.trace();
        let cos = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
        let angle = cos.acos();
        if angle < 1e-12 {
            return Vec3::zeros();
        }
        if angle > std::f64::consts::PI - 1e-6 {
            // Near π the antisymmetric part vanishes; recover the axis from
            // the symmetric part R + I = 2(aa^T + cos-term).
            let b = (self.m + Mat3::identity()) / 2.0;
            let mut axis = Vec3::new(b[(0, 0)].max(0.0).sqrt(), b[(1, 1)].max(0.0).sqrt(), b[(2, 2)].max(0.0).sqrt());
            // Fix relative signs using the largest component.
            let k = dominant_component(&axis);
            for i in 0..3 {
                if i != k && b[(k, i)] < 0.0 {
                    axis[i] = -axis[i];
                }
            }
            if axis.norm() < 1e-12 {
                return Vec3::zeros();
            }
            return axis.normalize() * angle;
        }
        let v = Vec3::new(
            self.m[(2, 1)] - self.m[(1, 2)],
            self.m[(0, 2)] - self.m[(2, 0)],
            self.m[(1, 0)] - self.m[(0, 1)],
        );
        v * (angle / (2.0 * angle.sin()))
    }

    /// Exp map from an axis-angle vector.
    pub fn from_rotation_vector(w: &Vec3) -> RotationMatrix {
        let angle = w.norm();
        if angle < 1e-12 {
            return RotationMatrix::identity();
        }
        rodrigues_unchecked(&(w / angle), angle)
    }

    /// Snaps a near-rotation back onto SO(3) by Gram-Schmidt on the columns.
    /// Accumulated compositions drift off the manifold, and feeding a drifted
    /// matrix through transpose-as-inverse doubles the defect each step.
    pub fn orthonormalized(&self) -> RotationMatrix {
        let c0 = self.m.column(0).into_owned().normalize();
        let c1_raw = self.m.column(1).into_owned();
        let c1 = (c1_raw - c0 * c0.dot(&c1_raw)).normalize();
        let c2 = c0.cross(&c1);
        RotationMatrix {
            m: Mat3::from_columns(&[c0, c1, c2]),
        }
    }

    pub fn rot_x(angle: f64) -> RotationMatrix {
        rodrigues_unchecked(&Vec3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> RotationMatrix {
        rodrigues_unchecked(&Vec3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> RotationMatrix {
        rodrigues_unchecked(&Vec3::z(), angle)
    }
}

/// Intrinsic roll-pitch-yaw angles, each wrapped to (−π, π], satisfying
/// `R = Rz(yaw) · Ry(pitch) · Rx(roll)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub fn l1_norm(&self) -> f64 {
        self.roll.abs() + self.pitch.abs() + self.yaw.abs()
    }

    pub fn to_rotation(&self) -> RotationMatrix {
        RotationMatrix::rot_z(self.yaw)
            .compose(&RotationMatrix::rot_y(self.pitch))
            .compose(&RotationMatrix::rot_x(self.roll))
    }
}

/// Rotation plus translation; the gripper pose representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: RotationMatrix,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: RotationMatrix::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: RotationMatrix, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }

    /// The world-frame motion `M` with `M ∘ from = to`, i.e. applying the
    /// returned transform to points rigidly attached at `from` lands them
    /// where `to` carries them.
    pub fn relative_motion(from: &RigidTransform, to: &RigidTransform) -> RigidTransform {
        let rot = to.rotation.compose(&from.rotation.transpose());
        let trans = to.translation - rot.apply(&from.translation);
        RigidTransform::new(rot, trans)
    }

    pub fn compose(&self, rhs: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation.compose(&rhs.rotation),
            self.rotation.apply(&rhs.translation) + self.translation,
        )
    }
}

/// Arithmetic mean of the cloud.
pub fn centroid(pc: &PointCloud) -> Vec3 {
    pc.centroid()
}

fn pca_direction(pc: &PointCloud, largest: bool) -> Result<UnitVector, GeometryError> {
    if pc.len() < 3 {
        return Err(GeometryError::DegeneratePointCloud(format!(
            "need at least 3 points for PCA, got {}",
            pc.len()
        )));
    }
    let cov = pc.covariance();
    if cov.norm() < 1e-18 {
        return Err(GeometryError::DegeneratePointCloud(
            "covariance is identically zero".to_string(),
        ));
    }
    let eig = SymmetricEigen::new(cov);
    let mut idx = 0;
    for i in 1..3 {
        let better = if largest {
            eig.eigenvalues[i] > eig.eigenvalues[idx]
        } else {
            eig.eigenvalues[i] < eig.eigenvalues[idx]
        };
        if better {
            idx = i;
        }
    }
    UnitVector::from_vector(eig.eigenvectors.column(idx).into_owned())
}

/// Unit eigenvector of the covariance with the largest eigenvalue: the
/// heading of long-shaped clouds.
pub fn major_axis(pc: &PointCloud) -> Result<UnitVector, GeometryError> {
    pca_direction(pc, true)
}

/// Unit eigenvector with the smallest eigenvalue: the normal of flat clouds.
pub fn surface_normal(pc: &PointCloud) -> Result<UnitVector, GeometryError> {
    pca_direction(pc, false)
}

fn rodrigues_unchecked(axis: &Vec3, angle: f64) -> RotationMatrix {
    let k = Mat3::new(
        0.0, -axis.z, axis.y, //
        axis.z, 0.0, -axis.x, //
        -axis.y, axis.x, 0.0,
    );
    RotationMatrix {
        m: Mat3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos()),
    }
}

/// `R = I + sin(θ)K + (1−cos(θ))K²` with `K` the skew matrix of `axis`.
pub fn rodrigues(axis: &UnitVector, angle: f64) -> RotationMatrix {
    rodrigues_unchecked(&axis.vector(), angle)
}

/// Rotates every point about `center`: `p ↦ R (p − center) + center`.
pub fn rotate_about_point(pc: &PointCloud, center: &Vec3, rotation: &RotationMatrix) -> PointCloud {
    let points = pc
        .points()
        .iter()
        .map(|p| rotation.apply(&(p - center)) + center)
        .collect();
    PointCloud { points }
}

fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(2.0 * std::f64::consts::PI);
    if x > std::f64::consts::PI {
        x -= 2.0 * std::f64::consts::PI;
    }
    if x == -std::f64::consts::PI {
        x = std::f64::consts::PI;
    }
    x
}

/// Decomposes `R = Rz(yaw) · Ry(pitch) · Rx(roll)`.
///
/// At gimbal lock (|pitch| = π/2) roll is set to 0 and the residual folded
/// into yaw.
pub fn euler_of(r: &RotationMatrix) -> EulerAngles {
    let m = r.matrix();
    let sin_pitch = (-m[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sin_pitch.asin();
    if sin_pitch.abs() > 1.0 - 1e-9 {
        // cos(pitch) ≈ 0: only yaw ∓ roll is observable.
        let yaw = f64::atan2(-m[(0, 1)], m[(1, 1)]);
        return EulerAngles {
            roll: 0.0,
            pitch: wrap_angle(pitch),
            yaw: wrap_angle(yaw),
        };
    }
    EulerAngles {
        roll: wrap_angle(f64::atan2(m[(2, 1)], m[(2, 2)])),
        pitch: wrap_angle(pitch),
        yaw: wrap_angle(f64::atan2(m[(1, 0)], m[(0, 0)])),
    }
}

/// Linear translation blend plus shortest-arc rotation interpolation.
pub fn interpolate_pose(
    a: &RigidTransform,
    b: &RigidTransform,
    s: f64,
) -> Result<RigidTransform, GeometryError> {
    if !(0.0..=1.0).contains(&s) {
        return Err(GeometryError::OutOfRange {
            name: "s",
            value: s,
            range: "[0, 1]",
        });
    }
    let translation = a.translation * (1.0 - s) + b.translation * s;
    let delta = b.rotation.compose(&a.rotation.transpose());
    let w = delta.rotation_vector();
    let rotation = RotationMatrix::from_rotation_vector(&(w * s)).compose(&a.rotation);
    Ok(RigidTransform::new(rotation, translation))
}
