//! Rigid-motion primitives: cross-product matrices, the Rodrigues map and its
//! inverse, composition, and application to point clouds.
//!
//! The 12-vector layout used throughout the gradient code is fixed here:
//! `(R00, R01, R02, R10, …, R22, t0, t1, t2)`, row-major rotation followed by
//! translation.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SVector, Vector3};

use crate::cloud::PointCloud;

/// Below this angle [`rodrigues`] returns the identity.
pub const SMALL_ANGLE: f64 = 1e-12;

/// Cross-product matrix: `skew(w) * v == w.cross(&v)`.
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// Axis-angle vector `a = θ·w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn new(axis: Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return AxisAngle(Vector3::zeros());
        }
        AxisAngle(axis * (angle / n))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    /// Unit axis, or `None` for the zero rotation.
    pub fn axis(&self) -> Option<Vector3<f64>> {
        let theta = self.angle();
        (theta > 0.0).then(|| self.0 / theta)
    }
}

/// A 3×3 rotation matrix.
///
/// Values produced by [`rodrigues`], products of rotations, and
/// [`RotationMatrix::identity`] satisfy `‖RᵀR − I‖_F ≤ 1e-9` and
/// `det R = 1 ± 1e-9`. [`RotationMatrix::from_matrix_unchecked`] exists for
/// gradient code that must evaluate off the manifold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotationMatrix(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    /// Rotation about a coordinate axis (0 = x, 1 = y, 2 = z).
    pub fn about_axis(axis: usize, angle: f64) -> Self {
        let mut w = Vector3::zeros();
        w[axis] = 1.0;
        rodrigues(&AxisAngle(w * angle))
    }

    /// `Rz(yaw)·Ry(pitch)·Rx(roll)`, the intrinsic Z–Y–X convention.
    pub fn from_euler_zyx(yaw: f64, pitch: f64, roll: f64) -> Self {
        let rz = Self::about_axis(2, yaw);
        let ry = Self::about_axis(1, pitch);
        let rx = Self::about_axis(0, roll);
        RotationMatrix(rz.0 * ry.0 * rx.0)
    }

    /// `‖RᵀR − I‖_F`.
    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }
}

impl std::ops::Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

/// `I + sinθ·K(w) + (1 − cosθ)·K(w)²` with `θ = ‖a‖`, `w = a/θ`.
pub fn rodrigues(aa: &AxisAngle) -> RotationMatrix {
    let theta = aa.angle();
    if theta < SMALL_ANGLE {
        return RotationMatrix::identity();
    }
    let k = skew(&(aa.0 / theta));
    RotationMatrix(Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos()))
}

/// Inverse of [`rodrigues`], with θ ∈ [0, π].
pub fn log_rotation(r: &RotationMatrix) -> AxisAngle {
    let m = r.matrix();
    let v = vee(m);
    let sin_theta = v.norm();
    let cos_theta = (m.trace() - 1.0) * 0.5;
    let theta = sin_theta.atan2(cos_theta);
    if theta < 1e-10 {
        // First order: R ≈ I + K(a).
        return AxisAngle(v);
    }
    if theta < PI - 1e-2 {
        return AxisAngle(v * (theta / sin_theta));
    }
    // Near the antipode the antisymmetric part vanishes; read the axis off
    // the symmetric part (R + Rᵀ)/2 = cosθ·I + (1 − cosθ)·wwᵀ, which is
    // (R + I)/2 at θ = π.
    let sym = (m + m.transpose()) * 0.5;
    let wwt = (sym - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
    let k = (0..3)
        .max_by(|&a, &b| wwt[(a, a)].total_cmp(&wwt[(b, b)]))
        .unwrap_or(0);
    let mut w: Vector3<f64> = wwt.column(k).into_owned();
    w /= w.norm();
    if w.dot(&v) < 0.0 {
        w = -w;
    }
    AxisAngle(w * theta)
}

/// Geodesic angle between two rotations, `‖log(aᵀb)‖`.
pub fn geodesic_angle(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    log_rotation(&(a.transpose() * *b)).angle()
}

/// The 12-vector layout of a rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GVector(pub SVector<f64, 12>);

impl GVector {
    pub fn rotation_part(&self) -> Matrix3<f64> {
        let g = &self.0;
        Matrix3::new(g[0], g[1], g[2], g[3], g[4], g[5], g[6], g[7], g[8])
    }

    pub fn translation_part(&self) -> Vector3<f64> {
        Vector3::new(self.0[9], self.0[10], self.0[11])
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Rotation plus translation, mapping `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn identity() -> Self {
        RigidTransform::new(RotationMatrix::identity(), Vector3::zeros())
    }

    pub fn from_axis_angle(aa: &AxisAngle, translation: Vector3<f64>) -> Self {
        RigidTransform::new(rodrigues(aa), translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform::new(rt, -(rt.matrix() * self.translation))
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * v
    }

    pub fn to_g(&self) -> GVector {
        let r = self.rotation.matrix();
        let t = &self.translation;
        let mut g = SVector::<f64, 12>::zeros();
        for row in 0..3 {
            for col in 0..3 {
                g[3 * row + col] = r[(row, col)];
            }
            g[9 + row] = t[row];
        }
        GVector(g)
    }

    /// Rebuilds a transform from its 12-vector without re-orthogonalizing.
    pub fn from_g(g: &GVector) -> Self {
        RigidTransform::new(
            RotationMatrix::from_matrix_unchecked(g.rotation_part()),
            g.translation_part(),
        )
    }

    /// Row-major `[R | t]` rows.
    pub fn to_rows(&self) -> [[f64; 4]; 3] {
        let r = self.rotation.matrix();
        let t = &self.translation;
        std::array::from_fn(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]])
    }

    pub fn from_rows(rows: &[[f64; 4]; 3]) -> Self {
        let r = Matrix3::from_fn(|i, j| rows[i][j]);
        let t = Vector3::new(rows[0][3], rows[1][3], rows[2][3]);
        RigidTransform::new(RotationMatrix::from_matrix_unchecked(r), t)
    }
}

/// `compose(a, b)` applies `b` first: `R = Ra·Rb`, `t = Ra·tb + ta`.
pub fn compose(outer: &RigidTransform, inner: &RigidTransform) -> RigidTransform {
    RigidTransform::new(
        outer.rotation * inner.rotation,
        outer.rotation.matrix() * inner.translation + outer.translation,
    )
}

/// Maps positions by `R·p + t` and normals by `R` alone.
pub fn apply(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    let positions = cloud.positions.iter().map(|p| t.apply_point(p)).collect();
    let normals = cloud
        .normals
        .as_ref()
        .map(|ns| ns.iter().map(|n| t.apply_vector(n)).collect());
    PointCloud { positions, normals }
}
