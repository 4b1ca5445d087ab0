//! Residual terms of the initialization cost and their analytic Jacobians.
//!
//! Every Jacobian is taken with respect to the tangent perturbation used by
//! the solver: `R ← R·Exp(δφ)` for rotations, additive updates for Euclidean
//! variables, `ĝ ← ĝ ⊞ δ` for the gravity direction and `T ← T·Exp(ξ)` for
//! the extrinsic transform.

use crate::manifold::{
    exp_so3, hat, right_jacobian_inv_so3, right_jacobian_so3, s2_alignment, s2_boxplus,
    s2_tangent_basis, GravityDirection, Pose, Rotation, TangentS2,
};
use crate::preintegration::PreintegratedImu;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use thiserror::Error;

/// Known gravity magnitude (m/s²).
pub const GRAVITY_MAGNITUDE: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResidualError {
    #[error("index {index} out of range for {len} {what}")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },
    #[error("a relative GNSS pair must join two different epochs (got {0}, {0})")]
    DegeneratePair(usize),
    #[error("measurement lists are inconsistent: {0}")]
    InconsistentInputs(String),
}

/// Per-epoch platform state.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct KeyframeState {
    pub rotation: Rotation,
    pub position: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

/// Full initialization state: keyframes plus the shared gyroscope bias and
/// gravity direction.
#[derive(Clone, Debug, PartialEq)]
pub struct InitState {
    pub keyframes: Vec<KeyframeState>,
    pub gyro_bias: Vector3<f64>,
    pub gravity_dir: GravityDirection,
    pub gravity_mag: f64,
}

impl InitState {
    pub fn new(keyframes: Vec<KeyframeState>, gyro_bias: Vector3<f64>, gravity_dir: GravityDirection) -> Self {
        InitState { keyframes, gyro_bias, gravity_dir, gravity_mag: GRAVITY_MAGNITUDE }
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity_dir.vector() * self.gravity_mag
    }
}

/// Identifies one estimated variable of the state (plus the extrinsic transform).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateVar {
    Rotation(usize),
    Position(usize),
    AngularVelocity(usize),
    Velocity(usize),
    GyroBias,
    Gravity,
    Extrinsic,
}

impl StateVar {
    pub fn tangent_dim(&self) -> usize {
        match self {
            StateVar::Gravity => 2,
            StateVar::Extrinsic => 6,
            _ => 3,
        }
    }

    pub fn label(&self) -> String {
        match self {
            StateVar::Rotation(k) => format!("R{k}"),
            StateVar::Position(k) => format!("p{k}"),
            StateVar::AngularVelocity(k) => format!("w{k}"),
            StateVar::Velocity(k) => format!("v{k}"),
            StateVar::GyroBias => "bg".into(),
            StateVar::Gravity => "g".into(),
            StateVar::Extrinsic => "T".into(),
        }
    }
}

/// Applies a tangent-space perturbation of `var` to `(state, extrinsic)`.
///
/// # Panics
/// If `delta` does not have the tangent dimension of `var` or the keyframe
/// index is out of range.
pub fn retract_var(state: &mut InitState, extrinsic: &mut Pose, var: StateVar, delta: &[f64]) {
    assert_eq!(delta.len(), var.tangent_dim(), "tangent dimension of {var:?}");
    let v3 = || Vector3::new(delta[0], delta[1], delta[2]);
    match var {
        StateVar::Rotation(k) => {
            let kf = &mut state.keyframes[k];
            kf.rotation = kf.rotation.retract(&v3());
        }
        StateVar::Position(k) => state.keyframes[k].position += v3(),
        StateVar::AngularVelocity(k) => state.keyframes[k].angular_velocity += v3(),
        StateVar::Velocity(k) => state.keyframes[k].velocity += v3(),
        StateVar::GyroBias => state.gyro_bias += v3(),
        StateVar::Gravity => {
            state.gravity_dir = s2_boxplus(&state.gravity_dir, &TangentS2::new(delta[0], delta[1]));
        }
        StateVar::Extrinsic => {
            *extrinsic = extrinsic.retract(&Vector6::from_column_slice(delta));
        }
    }
}

/// GNSS position fix in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GnssMeasurement {
    pub timestamp: f64,
    pub position: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

impl GnssMeasurement {
    pub fn isotropic(timestamp: f64, position: Vector3<f64>, sigma: f64) -> Self {
        GnssMeasurement { timestamp, position, cov: Matrix3::identity() * sigma * sigma }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ResidualKind {
    AngularVelocity,
    PreintRotation,
    PreintVelocity,
    PreintPosition,
    Gravity,
    GnssGlobal,
    GnssRelative,
}

/// One Mahalanobis term `rᵀ·W·r` with its Jacobian blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub kind: ResidualKind,
    pub value: DVector<f64>,
    /// Inverse covariance.
    pub weight: DMatrix<f64>,
    pub jacobians: Vec<(StateVar, DMatrix<f64>)>,
}

impl ResidualBlock {
    pub fn cost(&self) -> f64 {
        (self.value.transpose() * &self.weight * &self.value)[(0, 0)]
    }

    pub fn jacobian(&self, var: StateVar) -> Option<&DMatrix<f64>> {
        self.jacobians.iter().find(|(v, _)| *v == var).map(|(_, j)| j)
    }
}

/// Total cost of a set of blocks.
pub fn total_cost(blocks: &[ResidualBlock]) -> f64 {
    blocks.iter().map(ResidualBlock::cost).sum()
}

fn dvec3(v: Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn dmat<const R: usize, const C: usize>(m: nalgebra::SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

/// Inverse of a symmetric PSD covariance. A relative floor of 1e-12 on the
/// diagonal keeps exactly singular covariances invertible.
pub fn information(cov: &Matrix3<f64>) -> Matrix3<f64> {
    let sym = 0.5 * (cov + cov.transpose());
    let floor = 1e-12 * sym.trace().abs().max(f64::MIN_POSITIVE);
    let reg = sym + Matrix3::identity() * floor;
    let inv = reg.cholesky().map(|c| c.inverse()).or_else(|| reg.try_inverse()).unwrap_or_else(Matrix3::identity);
    0.5 * (inv + inv.transpose())
}

/// A keyframe together with its position in the state.
#[derive(Clone, Copy, Debug)]
pub struct Indexed<'a> {
    pub index: usize,
    pub state: &'a KeyframeState,
}

impl<'a> Indexed<'a> {
    pub fn new(index: usize, state: &'a KeyframeState) -> Self {
        Indexed { index, state }
    }
}

/// `r_ω = ω_k − (ω̃_k − b^g)`.
pub fn angular_velocity(
    k: Indexed<'_>,
    gyro_bias: &Vector3<f64>,
    gyro_meas: &Vector3<f64>,
    gyro_cov: &Matrix3<f64>,
) -> ResidualBlock {
    let r = k.state.angular_velocity - (gyro_meas - gyro_bias);
    ResidualBlock {
        kind: ResidualKind::AngularVelocity,
        value: dvec3(r),
        weight: dmat(information(gyro_cov)),
        jacobians: vec![
            (StateVar::AngularVelocity(k.index), DMatrix::identity(3, 3)),
            (StateVar::GyroBias, DMatrix::identity(3, 3)),
        ],
    }
}

/// `r_ΔR = Log(ΔR̃(b)ᵀ·R_iᵀ·R_j)` with `ΔR̃(b)` corrected to first order in the bias.
pub fn preint_rotation(
    i: Indexed<'_>,
    j: Indexed<'_>,
    pre: &PreintegratedImu,
    gyro_bias: &Vector3<f64>,
) -> ResidualBlock {
    let bias_step = pre.d_r_d_bg * (gyro_bias - pre.gyro_bias_ref);
    let delta_r = pre.delta_r * exp_so3(&bias_step);
    let rel = i.state.rotation.transpose() * j.state.rotation;
    let err = delta_r.transpose() * rel;
    let r = err.log();
    let jr_inv = right_jacobian_inv_so3(&r);
    let d_ri = -jr_inv * rel.transpose().matrix();
    let d_b = -jr_inv * err.transpose().matrix() * right_jacobian_so3(&bias_step) * pre.d_r_d_bg;
    ResidualBlock {
        kind: ResidualKind::PreintRotation,
        value: dvec3(r),
        weight: dmat(information(&pre.cov_rotation())),
        jacobians: vec![
            (StateVar::Rotation(i.index), dmat(d_ri)),
            (StateVar::Rotation(j.index), dmat(jr_inv)),
            (StateVar::GyroBias, dmat(d_b)),
        ],
    }
}

/// `r_Δv = R_iᵀ(v_j − v_i − g·Δt) − Δṽ(b)`.
pub fn preint_velocity(
    i: Indexed<'_>,
    j: Indexed<'_>,
    pre: &PreintegratedImu,
    gyro_bias: &Vector3<f64>,
    gravity_dir: &GravityDirection,
    gravity_mag: f64,
) -> ResidualBlock {
    let dt = pre.delta_t;
    let rt = i.state.rotation.transpose();
    let g = gravity_dir.vector() * gravity_mag;
    let inner = rt.matrix() * (j.state.velocity - i.state.velocity - g * dt);
    let r = inner - pre.corrected_delta_v(gyro_bias);
    let basis = s2_tangent_basis(gravity_dir);
    ResidualBlock {
        kind: ResidualKind::PreintVelocity,
        value: dvec3(r),
        weight: dmat(information(&pre.cov_velocity())),
        jacobians: vec![
            (StateVar::Rotation(i.index), dmat(hat(&inner))),
            (StateVar::Velocity(i.index), dmat(-rt.matrix())),
            (StateVar::Velocity(j.index), dmat(*rt.matrix())),
            (StateVar::GyroBias, dmat(-pre.d_v_d_bg)),
            (StateVar::Gravity, dmat(-gravity_mag * dt * rt.matrix() * basis)),
        ],
    }
}

/// `r_Δp = R_iᵀ(p_j − p_i − v_i·Δt − ½g·Δt²) − Δp̃(b)`.
pub fn preint_position(
    i: Indexed<'_>,
    j: Indexed<'_>,
    pre: &PreintegratedImu,
    gyro_bias: &Vector3<f64>,
    gravity_dir: &GravityDirection,
    gravity_mag: f64,
) -> ResidualBlock {
    let dt = pre.delta_t;
    let rt = i.state.rotation.transpose();
    let g = gravity_dir.vector() * gravity_mag;
    let inner = rt.matrix()
        * (j.state.position - i.state.position - i.state.velocity * dt - 0.5 * g * dt * dt);
    let r = inner - pre.corrected_delta_p(gyro_bias);
    let basis = s2_tangent_basis(gravity_dir);
    ResidualBlock {
        kind: ResidualKind::PreintPosition,
        value: dvec3(r),
        weight: dmat(information(&pre.cov_position())),
        jacobians: vec![
            (StateVar::Rotation(i.index), dmat(hat(&inner))),
            (StateVar::Position(i.index), dmat(-rt.matrix())),
            (StateVar::Position(j.index), dmat(*rt.matrix())),
            (StateVar::Velocity(i.index), dmat(-rt.matrix() * dt)),
            (StateVar::GyroBias, dmat(-pre.d_p_d_bg)),
            (StateVar::Gravity, dmat(-0.5 * gravity_mag * dt * dt * rt.matrix() * basis)),
        ],
    }
}

/// `r_g = ((v_j − v_i) − R_i·Δṽ)/Δt − ‖g‖·ĝ`, weighted by `(Σ_Δv/Δt²)⁻¹`.
pub fn gravity(
    i: Indexed<'_>,
    j: Indexed<'_>,
    pre: &PreintegratedImu,
    gyro_bias: &Vector3<f64>,
    gravity_dir: &GravityDirection,
    gravity_mag: f64,
) -> ResidualBlock {
    let dt = pre.delta_t;
    let ri = i.state.rotation.matrix();
    let dv = pre.corrected_delta_v(gyro_bias);
    let r = (j.state.velocity - i.state.velocity - ri * dv) / dt - gravity_dir.vector() * gravity_mag;
    let basis = s2_tangent_basis(gravity_dir);
    let eye = Matrix3::identity() / dt;
    ResidualBlock {
        kind: ResidualKind::Gravity,
        value: dvec3(r),
        weight: dmat(information(&(pre.cov_velocity() / (dt * dt)))),
        jacobians: vec![
            (StateVar::Rotation(i.index), dmat(ri * hat(&dv) / dt)),
            (StateVar::Velocity(i.index), dmat(-eye)),
            (StateVar::Velocity(j.index), dmat(eye)),
            (StateVar::GyroBias, dmat(-ri * pre.d_v_d_bg / dt)),
            (StateVar::Gravity, dmat(-gravity_mag * basis)),
        ],
    }
}

/// `r_p = T·p_k − p̂_k`; reduces to `p_k − p̂_k` for the identity extrinsic.
pub fn gnss_global(k: Indexed<'_>, meas: &GnssMeasurement, extrinsic: &Pose) -> ResidualBlock {
    let p = k.state.position;
    let r = extrinsic.transform_point(&p) - meas.position;
    let rot = extrinsic.rotation.matrix();
    let mut d_t = DMatrix::zeros(3, 6);
    d_t.view_mut((0, 0), (3, 3)).copy_from(rot);
    d_t.view_mut((0, 3), (3, 3)).copy_from(&(-rot * hat(&p)));
    ResidualBlock {
        kind: ResidualKind::GnssGlobal,
        value: dvec3(r),
        weight: dmat(information(&meas.cov)),
        jacobians: vec![(StateVar::Position(k.index), dmat(*rot)), (StateVar::Extrinsic, d_t)],
    }
}

/// `r_d = (p_j − p_k) − (p̂_j − p̂_k)`, weighted by `(Σ_j + Σ_k)⁻¹` (`= (2Σ_p)⁻¹`
/// for equal fixes).
pub fn gnss_relative(
    j: Indexed<'_>,
    k: Indexed<'_>,
    meas_j: &GnssMeasurement,
    meas_k: &GnssMeasurement,
) -> Result<ResidualBlock, ResidualError> {
    if j.index == k.index {
        return Err(ResidualError::DegeneratePair(j.index));
    }
    let r = (j.state.position - k.state.position) - (meas_j.position - meas_k.position);
    Ok(ResidualBlock {
        kind: ResidualKind::GnssRelative,
        value: dvec3(r),
        weight: dmat(information(&(meas_j.cov + meas_k.cov))),
        jacobians: vec![
            (StateVar::Position(j.index), DMatrix::identity(3, 3)),
            (StateVar::Position(k.index), -DMatrix::identity(3, 3)),
        ],
    })
}

/// Which GNSS terms enter the cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Phase {
    /// Relative displacement residuals over a pair set; extrinsic held fixed.
    Relative,
    /// One global position residual per epoch through the extrinsic transform.
    Global,
}

/// Measurements shared by every evaluation of the cost.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    /// `preintegrations[k]` joins keyframe `k` and `k + 1`.
    pub preintegrations: Vec<PreintegratedImu>,
    /// One fix per keyframe.
    pub gnss: Vec<GnssMeasurement>,
    /// Gyroscope reading associated with each keyframe.
    pub keyframe_gyro: Vec<Vector3<f64>>,
    pub gyro_cov: Matrix3<f64>,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.gnss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gnss.is_empty()
    }

    /// Restricts the set to the first `n` keyframes.
    pub fn truncated(&self, n: usize) -> MeasurementSet {
        MeasurementSet {
            preintegrations: self.preintegrations[..n.saturating_sub(1)].to_vec(),
            gnss: self.gnss[..n].to_vec(),
            keyframe_gyro: self.keyframe_gyro[..n].to_vec(),
            gyro_cov: self.gyro_cov,
        }
    }
}

/// Consecutive pairs `{(k + 1, k)}` over `n` epochs.
pub fn consecutive_pairs(n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|k| (k, k - 1)).collect()
}

/// Assembles every residual block of the phase's cost.
///
/// Each inter-keyframe interval contributes `r_ΔR, r_Δv, r_Δp, r_g`, each
/// keyframe contributes `r_ω`; the relative phase adds `r_d` over `pairs`,
/// the global phase adds one `r_p` per keyframe instead.
pub fn assemble_cost(
    state: &InitState,
    meas: &MeasurementSet,
    phase: Phase,
    pairs: &[(usize, usize)],
    extrinsic: &Pose,
) -> Result<Vec<ResidualBlock>, ResidualError> {
    let n = state.keyframes.len();
    if meas.gnss.len() != n || meas.keyframe_gyro.len() != n || meas.preintegrations.len() + 1 != n.max(1) {
        return Err(ResidualError::InconsistentInputs(format!(
            "{n} keyframes, {} fixes, {} gyro readings, {} preintegrations",
            meas.gnss.len(),
            meas.keyframe_gyro.len(),
            meas.preintegrations.len()
        )));
    }
    let kf = |k: usize| Indexed::new(k, &state.keyframes[k]);
    let b = &state.gyro_bias;
    let mut blocks = Vec::with_capacity(5 * n + pairs.len());
    for (k, pre) in meas.preintegrations.iter().enumerate() {
        let (i, j) = (kf(k), kf(k + 1));
        blocks.push(preint_rotation(i, j, pre, b));
        blocks.push(preint_velocity(i, j, pre, b, &state.gravity_dir, state.gravity_mag));
        blocks.push(preint_position(i, j, pre, b, &state.gravity_dir, state.gravity_mag));
        blocks.push(gravity(i, j, pre, b, &state.gravity_dir, state.gravity_mag));
    }
    for k in 0..n {
        blocks.push(angular_velocity(kf(k), b, &meas.keyframe_gyro[k], &meas.gyro_cov));
    }
    match phase {
        Phase::Relative => {
            for &(j, k) in pairs {
                for idx in [j, k] {
                    if idx >= n {
                        return Err(ResidualError::IndexOutOfRange { what: "keyframes", index: idx, len: n });
                    }
                }
                blocks.push(gnss_relative(kf(j), kf(k), &meas.gnss[j], &meas.gnss[k])?);
            }
        }
        Phase::Global => {
            for k in 0..n {
                blocks.push(gnss_global(kf(k), &meas.gnss[k], extrinsic));
            }
        }
    }
    Ok(blocks)
}

/// Five-point central-difference Jacobian of `f` along the tangent space of
/// `var`, with step `h`.
pub fn numerical_jacobian<F>(f: F, state: &InitState, extrinsic: &Pose, var: StateVar, h: f64) -> DMatrix<f64>
where
    F: Fn(&InitState, &Pose) -> DVector<f64>,
{
    let dim = var.tangent_dim();
    let eval = |col: usize, step: f64| {
        let (mut s, mut t) = (state.clone(), *extrinsic);
        let mut d = vec![0.0; dim];
        d[col] = step;
        retract_var(&mut s, &mut t, var, &d);
        f(&s, &t)
    };
    let rows = f(state, extrinsic).len();
    let mut jac = DMatrix::zeros(rows, dim);
    for c in 0..dim {
        let col = (eval(c, -2.0 * h) - eval(c, 2.0 * h) + 8.0 * (eval(c, h) - eval(c, -h))) / (12.0 * h);
        jac.set_column(c, &col);
    }
    jac
}

/// Rotation used by the S² retraction at `g`; re-exported for diagnostics.
pub fn gravity_alignment(g: &GravityDirection) -> Rotation {
    s2_alignment(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preintegration::PreintegratedImu;
    use approx::assert_relative_eq;

    fn kf(p: [f64; 3]) -> KeyframeState {
        KeyframeState { position: Vector3::from(p), ..Default::default() }
    }

    #[test]
    fn angular_velocity_examples() {
        let mut s = KeyframeState::default();
        let meas = Vector3::new(1.0, 0.0, 0.0);
        let b = Vector3::new(0.1, 0.0, 0.0);
        s.angular_velocity = meas - b;
        let blk = angular_velocity(Indexed::new(0, &s), &b, &meas, &Matrix3::identity());
        assert_eq!(blk.value, DVector::zeros(3));

        s.angular_velocity = Vector3::new(1.0, 0.0, 0.0);
        let blk = angular_velocity(Indexed::new(0, &s), &b, &meas, &Matrix3::identity());
        assert_relative_eq!(blk.value[0], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn global_examples() {
        let s = kf([1.0, 0.0, 0.0]);
        let m = GnssMeasurement::isotropic(0.0, Vector3::zeros(), 0.2);
        let blk = gnss_global(Indexed::new(0, &s), &m, &Pose::identity());
        assert_eq!(blk.value, DVector::from_column_slice(&[1.0, 0.0, 0.0]));
        assert_relative_eq!(blk.weight, DMatrix::identity(3, 3) * 25.0, epsilon = 1e-8);
        let m = GnssMeasurement::isotropic(0.0, Vector3::new(1.0, 0.0, 0.0), 0.2);
        assert_eq!(gnss_global(Indexed::new(0, &s), &m, &Pose::identity()).value, DVector::zeros(3));
    }

    #[test]
    fn relative_examples() {
        let (a, b) = (kf([1.0, 0.0, 0.0]), kf([0.0, 0.0, 0.0]));
        let ma = GnssMeasurement::isotropic(0.0, Vector3::new(0.9, 0.0, 0.0), 0.2);
        let mb = GnssMeasurement::isotropic(0.0, Vector3::zeros(), 0.2);
        let blk = gnss_relative(Indexed::new(1, &a), Indexed::new(0, &b), &ma, &mb).unwrap();
        assert_relative_eq!(blk.value[0], 0.1, epsilon = 1e-15);
        // Σ_d = 2Σ_p
        assert_relative_eq!(blk.weight, DMatrix::identity(3, 3) / (2.0 * 0.04), epsilon = 1e-8);
        assert!(gnss_relative(Indexed::new(1, &a), Indexed::new(1, &a), &ma, &ma).is_err());
    }

    #[test]
    fn rotation_weight_is_inverse_of_rotation_block() {
        let mut pre = PreintegratedImu::new(Vector3::zeros(), Vector3::zeros());
        pre.delta_t = 0.2;
        pre.cov = crate::preintegration::Matrix9::identity() * 1e-6;
        pre.cov[(0, 0)] = 4e-6;
        let s = KeyframeState::default();
        let blk = preint_rotation(Indexed::new(0, &s), Indexed::new(1, &s), &pre, &Vector3::zeros());
        assert_relative_eq!(blk.weight[(0, 0)], 2.5e5, max_relative = 1e-9);
        assert_relative_eq!(blk.weight[(1, 1)], 1e6, max_relative = 1e-9);
        assert_eq!(blk.value, DVector::zeros(3));
    }

    #[test]
    fn gravity_sign_flip() {
        let mut pre = PreintegratedImu::new(Vector3::zeros(), Vector3::zeros());
        pre.delta_t = 0.5;
        pre.cov = crate::preintegration::Matrix9::identity();
        let s = KeyframeState::default();
        let g = GravityDirection::down();
        let neg = GravityDirection::from_unit(-g.vector()).unwrap();
        let a = gravity(Indexed::new(0, &s), Indexed::new(1, &s), &pre, &Vector3::zeros(), &g, GRAVITY_MAGNITUDE);
        let b = gravity(Indexed::new(0, &s), Indexed::new(1, &s), &pre, &Vector3::zeros(), &neg, GRAVITY_MAGNITUDE);
        assert_eq!(a.value, -b.value);
    }

    #[test]
    fn assemble_counts_and_errors() {
        let s = InitState::new(vec![kf([0.0; 3]), kf([1.0, 0.0, 0.0])], Vector3::zeros(), GravityDirection::down());
        let mut pre = PreintegratedImu::new(Vector3::zeros(), Vector3::zeros());
        pre.delta_t = 0.2;
        pre.cov = crate::preintegration::Matrix9::identity() * 1e-4;
        let meas = MeasurementSet {
            preintegrations: vec![pre],
            gnss: vec![
                GnssMeasurement::isotropic(0.0, Vector3::zeros(), 0.2),
                GnssMeasurement::isotropic(0.2, Vector3::x(), 0.2),
            ],
            keyframe_gyro: vec![Vector3::zeros(); 2],
            gyro_cov: Matrix3::identity() * 1e-6,
        };
        let rel = assemble_cost(&s, &meas, Phase::Relative, &consecutive_pairs(2), &Pose::identity()).unwrap();
        assert_eq!(rel.len(), 4 + 2 + 1);
        let glob = assemble_cost(&s, &meas, Phase::Global, &[], &Pose::identity()).unwrap();
        assert_eq!(glob.len(), 4 + 2 + 2);
        let err = assemble_cost(&s, &meas, Phase::Relative, &[(2, 0)], &Pose::identity());
        assert!(matches!(err, Err(ResidualError::IndexOutOfRange { index: 2, .. })));
    }
}
