//! Lie-group and sphere operations used throughout the estimator.
//!
//! Rotations live on SO(3) and are perturbed on the right, `R ← R·Exp(δ)`.
//! Poses live on SE(3) with tangent ordering `[t; ω]`. Gravity directions live
//! on the unit sphere S² and are perturbed through `g ⊞ δ = R_g·Exp_S²(δ)`,
//! where `R_g` is the minimal rotation taking `+z` onto `g`.
//!
//! Every closed-form coefficient switches to a second-order Taylor expansion
//! below [`SMALL_ANGLE`].

use nalgebra::{Matrix3, Matrix3x2, Vector2, Vector3, Vector6};
use std::fmt;
use std::ops::Mul;
use thiserror::Error;

/// Below this angle (radians) the closed forms are replaced by Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Tolerance used when validating orthonormality, skew symmetry and unit norm.
pub const VALIDATION_TOL: f64 = 1e-9;

/// Axis-angle tangent vector of SO(3).
pub type TangentSo3 = Vector3<f64>;

/// Local two-dimensional perturbation on S².
pub type TangentS2 = Vector2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifoldError {
    #[error("matrix is not skew-symmetric (max |M + Mᵀ| = {0:e})")]
    NotSkewSymmetric(f64),
    #[error("matrix is not a rotation (orthonormality error {orthonormality:e}, det {det})")]
    NotRotation { orthonormality: f64, det: f64 },
    #[error("vector is not unit norm (norm {0})")]
    NotUnit(f64),
    #[error("points on S² are antipodal; the difference is undefined")]
    AntipodalPoints,
}

/// Maps `v` to its skew-symmetric matrix so that `hat(a)·b = a × b`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. Fails if `m` is not antisymmetric within [`VALIDATION_TOL`].
pub fn vee(m: &Matrix3<f64>) -> Result<Vector3<f64>, ManifoldError> {
    let asym = (m + m.transpose()).amax();
    if asym > VALIDATION_TOL {
        return Err(ManifoldError::NotSkewSymmetric(asym));
    }
    Ok(vee_unchecked(m))
}

fn vee_unchecked(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `sin θ / θ`
fn sinc(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        1.0 - theta * theta / 6.0
    } else {
        theta.sin() / theta
    }
}

/// `(1 − cos θ) / θ²`, evaluated through `2 sin²(θ/2)` to avoid cancellation.
fn one_minus_cos_over_sq(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        0.5 - theta * theta / 24.0
    } else {
        let s = (0.5 * theta).sin();
        2.0 * s * s / (theta * theta)
    }
}

/// `(θ − sin θ) / θ³`
fn theta_minus_sin_over_cube(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        1.0 / 6.0 - theta * theta / 120.0
    } else {
        (theta - theta.sin()) / (theta * theta * theta)
    }
}

/// `γ = (1 − (θ/2)·cot(θ/2)) / θ²`, shared by `V⁻¹` and `J_r⁻¹`.
fn gamma(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    }
}

/// Element of SO(3) stored as a direction-cosine matrix.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rotation(log = {:?})", self.log().as_slice())
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates `RᵀR = I` and `det R = 1` within [`VALIDATION_TOL`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, ManifoldError> {
        let orthonormality = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if orthonormality > VALIDATION_TOL || (det - 1.0).abs() > VALIDATION_TOL {
            return Err(ManifoldError::NotRotation { orthonormality, det });
        }
        Ok(Rotation(m))
    }

    /// Wraps `m` without validation. Callers guarantee orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Rotation from a unit quaternion given as `(w, x, y, z)`; the input is normalized.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        Rotation(*q.to_rotation_matrix().matrix())
    }

    /// Quaternion `(w, x, y, z)` with non-negative `w`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let r = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&r);
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    pub fn exp(phi: &TangentSo3) -> Self {
        exp_so3(phi)
    }

    pub fn log(&self) -> TangentSo3 {
        log_so3(self)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// Right perturbation `R·Exp(δ)`.
    pub fn retract(&self, delta: &TangentSo3) -> Self {
        *self * exp_so3(delta)
    }

    /// Projects onto SO(3) through the polar decomposition; used after long products.
    pub fn renormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let mut m = u * v_t;
        if m.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            m = u * v_t;
        }
        Rotation(m)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<&Vector3<f64>> for &Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: &Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Rodrigues' formula.
pub fn exp_so3(phi: &TangentSo3) -> Rotation {
    let theta = phi.norm();
    let k = hat(phi);
    Rotation(Matrix3::identity() + sinc(theta) * k + one_minus_cos_over_sq(theta) * k * k)
}

/// Principal logarithm, `‖result‖ ≤ π`.
///
/// The angle comes from `atan2(sin θ, cos θ)` so that it stays accurate near
/// zero; near π the axis is read off the symmetric part of `R` from its
/// largest diagonal entry, where `R − Rᵀ` carries no information.
pub fn log_so3(r: &Rotation) -> TangentSo3 {
    let m = &r.0;
    let skew = 0.5 * vee_unchecked(&(m - m.transpose()));
    let s = skew.norm();
    let c = 0.5 * (m.trace() - 1.0);
    let theta = s.atan2(c.clamp(-1.0, 1.0));

    if theta < SMALL_ANGLE {
        return skew * (1.0 + theta * theta / 6.0);
    }
    if c > -0.99 {
        return skew * (theta / s);
    }

    // (R + Rᵀ)/2 = c·I + (1 − c)·u·uᵀ
    let sym = 0.5 * (m + m.transpose()) - c * Matrix3::identity();
    let (mut best, mut best_val) = (0, sym[(0, 0)]);
    for i in 1..3 {
        if sym[(i, i)] > best_val {
            best = i;
            best_val = sym[(i, i)];
        }
    }
    let mut axis: Vector3<f64> = sym.column(best).into();
    axis /= axis.norm();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Right Jacobian of SO(3).
pub fn right_jacobian_so3(phi: &TangentSo3) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    Matrix3::identity() - one_minus_cos_over_sq(theta) * k + theta_minus_sin_over_cube(theta) * k * k
}

/// Inverse right Jacobian of SO(3), valid for `‖φ‖ < π`.
///
/// `J_r⁻¹(φ) = I + ½φ^∧ + (1/θ² − (1 + cos θ)/(2θ sin θ))·(φ^∧)²`, whose last
/// coefficient is the same `γ` that appears in `V⁻¹`.
pub fn right_jacobian_inv_so3(phi: &TangentSo3) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    Matrix3::identity() + 0.5 * k + gamma(theta) * k * k
}

/// Left Jacobian of SO(3), `J_l(φ) = J_r(−φ)`. This is the `V` matrix of SE(3).
pub fn left_jacobian_so3(phi: &TangentSo3) -> Matrix3<f64> {
    right_jacobian_so3(&-phi)
}

/// `V⁻¹ = I − ½ω^∧ + γ(ω^∧)²`.
pub fn left_jacobian_inv_so3(phi: &TangentSo3) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    Matrix3::identity() - 0.5 * k + gamma(theta) * k * k
}

/// Rigid transform `x ↦ R·x + t`.
#[derive(Clone, Copy, PartialEq, Debug, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Rotation::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * p + self.translation
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.transform_point(&other.translation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt.matrix() * self.translation) }
    }

    /// Right perturbation `T·Exp(ξ)` with `ξ = [t; ω]`.
    pub fn retract(&self, xi: &Vector6<f64>) -> Pose {
        self.compose(&exp_se3(xi))
    }
}

/// `Exp(ξ)` for `ξ = [t; ω]`: rotation `Exp(ω)` and translation `V·t`.
pub fn exp_se3(xi: &Vector6<f64>) -> Pose {
    let t = xi.fixed_rows::<3>(0).into_owned();
    let omega = xi.fixed_rows::<3>(3).into_owned();
    Pose { rotation: exp_so3(&omega), translation: left_jacobian_so3(&omega) * t }
}

/// `Log(T) = [V⁻¹·t; Log(R)]`.
pub fn log_se3(pose: &Pose) -> Vector6<f64> {
    let omega = log_so3(&pose.rotation);
    let t = left_jacobian_inv_so3(&omega) * pose.translation;
    let mut xi = Vector6::zeros();
    xi.fixed_rows_mut::<3>(0).copy_from(&t);
    xi.fixed_rows_mut::<3>(3).copy_from(&omega);
    xi
}

/// Unit vector on S², used for the gravity direction.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct GravityDirection(Vector3<f64>);

impl GravityDirection {
    /// Accepts `v` only if it is unit norm within [`VALIDATION_TOL`].
    pub fn from_unit(v: Vector3<f64>) -> Result<Self, ManifoldError> {
        let n = v.norm();
        if (n - 1.0).abs() > VALIDATION_TOL {
            return Err(ManifoldError::NotUnit(n));
        }
        Ok(GravityDirection(v / n))
    }

    /// Normalizes `v`. Returns `None` for a zero or non-finite vector.
    pub fn from_vector(v: Vector3<f64>) -> Option<Self> {
        let n = v.norm();
        if n.is_finite() && n > 0.0 {
            Some(GravityDirection(v / n))
        } else {
            None
        }
    }

    /// Straight down in a z-up frame.
    pub fn down() -> Self {
        GravityDirection(Vector3::new(0.0, 0.0, -1.0))
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn boxplus(&self, delta: &TangentS2) -> Self {
        s2_boxplus(self, delta)
    }
}

fn s2_exp(delta: &TangentS2) -> Vector3<f64> {
    let theta = delta.norm();
    let s = sinc(theta);
    Vector3::new(s * delta.x, s * delta.y, theta.cos())
}

fn s2_log(y: &Vector3<f64>) -> TangentS2 {
    let planar = Vector2::new(y.x, y.y);
    let r = planar.norm();
    let theta = r.atan2(y.z);
    if r < SMALL_ANGLE {
        planar * (1.0 + theta * theta / 6.0)
    } else {
        planar * (theta / r)
    }
}

/// Minimal rotation with `R·e_z = g`. The antipodal case `g = −e_z` uses a
/// half turn about `e_x`.
pub fn s2_alignment(g: &GravityDirection) -> Rotation {
    let v = g.0;
    let c = v.z;
    let s2 = v.x * v.x + v.y * v.y;
    if c < 0.0 && s2 < f64::MIN_POSITIVE.sqrt() {
        return Rotation(Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0));
    }
    // e_z × g
    let axis = Vector3::new(-v.y, v.x, 0.0);
    let k = hat(&axis);
    // 1/(1 + c) = (1 − c)/s², exact for unit g and free of cancellation when
    // g is close to −e_z, which is where gravity usually points.
    let f = if c >= 0.0 { 1.0 / (1.0 + c) } else { (1.0 - c) / s2 };
    Rotation(Matrix3::identity() + k + k * k * f)
}

/// `g ⊞ δ = R_g·Exp_S²(δ)`.
pub fn s2_boxplus(g: &GravityDirection, delta: &TangentS2) -> GravityDirection {
    let y = s2_alignment(g).matrix() * s2_exp(delta);
    GravityDirection(y / y.norm())
}

/// `g2 ⊟ g1 = Log_S²(R_g1ᵀ·g2)`.
pub fn s2_boxminus(g2: &GravityDirection, g1: &GravityDirection) -> Result<TangentS2, ManifoldError> {
    if g2.0.dot(&g1.0) < -1.0 + VALIDATION_TOL {
        return Err(ManifoldError::AntipodalPoints);
    }
    Ok(s2_log(&(s2_alignment(g1).matrix().transpose() * g2.0)))
}

/// Orthonormal tangent basis `B` at `g` (`gᵀB = 0`, `BᵀB = I₂`).
///
/// These are the first two columns of [`s2_alignment`], which makes `B` the
/// exact derivative of `g ⊞ δ` at `δ = 0`.
pub fn s2_tangent_basis(g: &GravityDirection) -> Matrix3x2<f64> {
    s2_alignment(g).matrix().fixed_columns::<2>(0).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn hat_examples() {
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
        let m = hat(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(m, Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0));
        let cross = hat(&Vector3::x()) * Vector3::y();
        assert_eq!(cross, Vector3::z());
    }

    #[test]
    fn vee_examples() {
        assert_eq!(vee(&Matrix3::zeros()).unwrap(), Vector3::zeros());
        let v = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(vee(&hat(&v)).unwrap(), v);
        let sym = Matrix3::new(1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(vee(&sym), Err(ManifoldError::NotSkewSymmetric(_))));
    }

    #[test]
    fn exp_quarter_turn() {
        let r = exp_so3(&Vector3::new(0.0, 0.0, PI / 2.0));
        assert_relative_eq!(r.rotate(&Vector3::x()), Vector3::y(), epsilon = 1e-15);
        assert_eq!(exp_so3(&Vector3::zeros()), Rotation::identity());
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_so3(&Rotation::identity()), Vector3::zeros());
        let phi = Vector3::new(0.1, -0.2, 0.3);
        assert_relative_eq!(log_so3(&exp_so3(&phi)), phi, epsilon = 1e-10);
    }

    #[test]
    fn log_half_turn_about_x() {
        let r = Rotation::from_matrix(Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)).unwrap();
        let phi = log_so3(&r);
        assert_relative_eq!(phi.x.abs(), PI, epsilon = 1e-12);
        assert_relative_eq!(phi.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(exp_so3(&phi).matrix(), r.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn log_near_half_turn_keeps_sign() {
        let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
        let phi = axis * (PI - 1e-7);
        let back = log_so3(&exp_so3(&phi));
        assert_relative_eq!(back, phi, epsilon = 1e-9);
    }

    #[test]
    fn se3_examples() {
        assert_eq!(exp_se3(&Vector6::zeros()), Pose::identity());
        let xi = Vector6::new(1.0, 2.0, 3.0, 0.0, 0.0, 0.0);
        let pose = exp_se3(&xi);
        assert_eq!(pose.rotation, Rotation::identity());
        assert_eq!(pose.translation, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(log_se3(&pose), xi);
        assert_eq!(log_se3(&Pose::identity()), Vector6::zeros());
    }

    #[test]
    fn jr_inv_small_angle_branch() {
        assert_eq!(right_jacobian_inv_so3(&Vector3::zeros()), Matrix3::identity());
        let phi = Vector3::new(3e-11, -6e-11, 8e-11);
        let expected = Matrix3::identity() + 0.5 * hat(&phi);
        assert_relative_eq!(right_jacobian_inv_so3(&phi), expected, epsilon = 1e-12);
    }

    #[test]
    fn jr_inv_inverts_jr() {
        let phi = Vector3::new(0.7, -1.1, 0.4);
        let prod = right_jacobian_inv_so3(&phi) * right_jacobian_so3(&phi);
        assert_relative_eq!(prod, Matrix3::identity(), epsilon = 1e-8);
    }

    #[test]
    fn s2_identity_and_antipodal() {
        let g = GravityDirection::from_vector(Vector3::new(0.2, -0.4, 0.9)).unwrap();
        assert_relative_eq!(s2_boxplus(&g, &Vector2::zeros()).vector(), g.vector(), epsilon = 1e-15);
        assert_relative_eq!(s2_boxminus(&g, &g).unwrap(), Vector2::zeros(), epsilon = 1e-15);
        let neg = GravityDirection::from_vector(-g.vector()).unwrap();
        assert_eq!(s2_boxminus(&neg, &g), Err(ManifoldError::AntipodalPoints));
    }

    #[test]
    fn s2_first_order_expansion() {
        let g = GravityDirection::from_unit(Vector3::z()).unwrap();
        let b = s2_tangent_basis(&g);
        for scale in [1e-2, 1e-3, 1e-4] {
            let d = Vector2::new(0.6, -0.8) * scale;
            let err = (s2_boxplus(&g, &d).vector() - (g.vector() + b * d)).norm();
            assert!(err <= scale * scale, "err {err} at scale {scale}");
        }
    }

    #[test]
    fn alignment_is_accurate_near_straight_down() {
        for eps in [1e-3, 1e-6, 1e-7, 1e-9, 1e-12] {
            let g = GravityDirection::from_vector(Vector3::new(eps, -0.5 * eps, -1.0)).unwrap();
            let r = s2_alignment(&g);
            assert!((r.matrix().transpose() * r.matrix() - Matrix3::identity()).amax() < 1e-14, "eps {eps}");
            assert!((r.matrix() * Vector3::z() - g.vector()).amax() < 1e-15, "eps {eps}");
            let b = s2_tangent_basis(&g);
            let h = 1e-6;
            for i in 0..2 {
                let mut d = Vector2::zeros();
                d[i] = h;
                let fd = (s2_boxplus(&g, &d).vector() - s2_boxplus(&g, &-d).vector()) / (2.0 * h);
                assert!((fd - b.column(i)).amax() < 1e-9, "eps {eps}, column {i}");
            }
        }
    }

    #[test]
    fn tangent_basis_constraints() {
        for v in [Vector3::z(), Vector3::x(), -Vector3::z(), Vector3::new(0.3, 0.4, -0.866)] {
            let g = GravityDirection::from_vector(v).unwrap();
            let b = s2_tangent_basis(&g);
            assert!((g.vector().transpose() * b).amax() < 1e-10);
            assert_relative_eq!(b.transpose() * b, nalgebra::Matrix2::identity(), epsilon = 1e-10);
        }
        let bx = s2_tangent_basis(&GravityDirection::from_unit(Vector3::x()).unwrap());
        assert!(bx.row(0).amax() < 1e-12);
    }

    #[test]
    fn rotation_validation() {
        assert!(Rotation::from_matrix(Matrix3::identity() * 2.0).is_err());
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Rotation::from_matrix(reflect).is_err());
    }

    #[test]
    fn quaternion_roundtrip() {
        let r = exp_so3(&Vector3::new(0.3, 0.2, -0.9));
        let [w, x, y, z] = r.to_quaternion();
        assert_relative_eq!(Rotation::from_quaternion(w, x, y, z).matrix(), r.matrix(), epsilon = 1e-14);
    }
}
