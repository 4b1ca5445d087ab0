//! Stacked-Jacobian observability matrix, numerical rank, and the
//! Lie-derivative tower of the two-keyframe output map.

use crate::manifold::{
    exp_so3, hat, left_jacobian_so3, right_jacobian_inv_so3, s2_tangent_basis, GravityDirection, Rotation,
};
use crate::residuals::{KeyframeState, GRAVITY_MAGNITUDE};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use thiserror::Error;

/// Default relative singular-value threshold.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Highest supported Lie-derivative order.
pub const MAX_LIE_ORDER: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservabilityError {
    #[error("Lie derivative order {0} is not supported (max {MAX_LIE_ORDER})")]
    UnsupportedOrder(usize),
    #[error("distance output is not differentiable at a zero baseline")]
    ZeroBaseline,
    #[error("interval must be positive, got {0}")]
    NonPositiveInterval(f64),
    #[error("no column block labelled {0:?}")]
    UnknownBlock(String),
}

/// Labelled group of consecutive rows or columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub label: String,
    pub dim: usize,
}

fn blocks(spec: &[(&str, usize)]) -> Vec<Block> {
    spec.iter().map(|(l, d)| Block { label: (*l).to_string(), dim: *d }).collect()
}

fn block_offset(blocks: &[Block], label: &str) -> Option<(usize, usize)> {
    let mut off = 0;
    for b in blocks {
        if b.label == label {
            return Some((off, b.dim));
        }
        off += b.dim;
    }
    None
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservabilityMatrix {
    pub matrix: DMatrix<f64>,
    pub rows: Vec<Block>,
    pub cols: Vec<Block>,
}

impl ObservabilityMatrix {
    pub fn block(&self, row: &str, col: &str) -> Option<DMatrix<f64>> {
        let (r, rd) = block_offset(&self.rows, row)?;
        let (c, cd) = block_offset(&self.cols, col)?;
        Some(self.matrix.view((r, c), (rd, cd)).into_owned())
    }

    /// Copy with the named row blocks removed.
    pub fn without_rows(&self, labels: &[&str]) -> ObservabilityMatrix {
        let mut keep = Vec::new();
        let mut rows = Vec::new();
        let mut off = 0;
        for b in &self.rows {
            if !labels.contains(&b.label.as_str()) {
                keep.extend(off..off + b.dim);
                rows.push(b.clone());
            }
            off += b.dim;
        }
        ObservabilityMatrix { matrix: self.matrix.select_rows(keep.iter()), rows, cols: self.cols.clone() }
    }

    /// Copy with the named column blocks removed.
    pub fn without_cols(&self, labels: &[&str]) -> ObservabilityMatrix {
        let mut keep = Vec::new();
        let mut cols = Vec::new();
        let mut off = 0;
        for b in &self.cols {
            if !labels.contains(&b.label.as_str()) {
                keep.extend(off..off + b.dim);
                cols.push(b.clone());
            }
            off += b.dim;
        }
        ObservabilityMatrix { matrix: self.matrix.select_columns(keep.iter()), rows: self.rows.clone(), cols }
    }

    /// Eliminates a nuisance column block: rows are projected onto the
    /// orthogonal complement of its column space, `O ← (I − N·N⁺)·O`, and the
    /// block is dropped.
    pub fn marginalize(&self, label: &str) -> Result<ObservabilityMatrix, ObservabilityError> {
        let (c, d) = block_offset(&self.cols, label).ok_or_else(|| ObservabilityError::UnknownBlock(label.into()))?;
        let n = self.matrix.columns(c, d).into_owned();
        let pinv = n.clone().pseudo_inverse(1e-12).expect("non-negative epsilon");
        let proj = DMatrix::identity(n.nrows(), n.nrows()) - &n * pinv;
        let mut out = self.without_cols(&[label]);
        out.matrix = proj * out.matrix;
        Ok(out)
    }

    pub fn rank(&self, rel_tol: f64) -> usize {
        numerical_rank(&self.matrix, rel_tol)
    }
}

/// Measured rotation increment used for the rotational error; `None`
/// means the increment is consistent with the states (zero error).
#[derive(Clone, Copy, Debug, Default)]
pub struct ObservabilityOptions {
    pub gauge_fixed: bool,
    /// Adds the keyframe angular rate as a trailing column block `"w"`.
    pub include_rate: bool,
    pub measured_delta_r: Option<Rotation>,
}

const ROWS: [&str; 8] = ["dR", "dv", "dp", "r_d", "r_pi", "r_pj", "r_w", "r_g"];

/// Builds the two-keyframe observability matrix with columns
/// `[R_i, v_i, p_i, R_j, v_j, p_j, b^g, ĝ]` and rows
/// `[r_ΔR, r_Δv, r_Δp, r_d, r_pi, r_pj, r_ω, r_g]`, block for block as in
/// the explicit structure (zero blocks stay exactly zero).
pub fn build_observability_matrix(
    state_i: &KeyframeState,
    state_j: &KeyframeState,
    _gyro_bias: &Vector3<f64>,
    gravity_dir: &GravityDirection,
    gravity_mag: f64,
    dt: f64,
    opts: &ObservabilityOptions,
) -> Result<ObservabilityMatrix, ObservabilityError> {
    if !(dt > 0.0) {
        return Err(ObservabilityError::NonPositiveInterval(dt));
    }
    let mut col_spec = vec![("R_i", 3), ("v_i", 3), ("p_i", 3), ("R_j", 3), ("v_j", 3), ("p_j", 3), ("b_g", 3), ("g", 2)];
    if opts.include_rate {
        col_spec.push(("w", 3));
    }
    let cols = blocks(&col_spec);
    let rows = blocks(&ROWS.map(|l| (l, 3)));
    let ncols: usize = cols.iter().map(|b| b.dim).sum();
    let mut m = DMatrix::zeros(24, ncols);
    let mut put = |row: usize, col: &str, blk: DMatrix<f64>| {
        let (c, _) = block_offset(&cols, col).expect("known column");
        m.view_mut((3 * row, c), (blk.nrows(), blk.ncols())).copy_from(&blk);
    };
    let d = |x: Matrix3<f64>| DMatrix::from_column_slice(3, 3, x.as_slice());
    let eye = Matrix3::identity();

    let ri = *state_i.rotation.matrix();
    let rj = *state_j.rotation.matrix();
    let rel = state_i.rotation.transpose() * state_j.rotation;
    let meas = opts.measured_delta_r.unwrap_or(rel);
    let phi = (meas.transpose() * rel).log();
    let jr_inv = right_jacobian_inv_so3(&phi);
    let g = gravity_dir.vector() * gravity_mag;
    let basis = s2_tangent_basis(gravity_dir);
    let basis = DMatrix::from_column_slice(3, 2, basis.as_slice());

    put(0, "R_i", d(-jr_inv * rj.transpose() * ri));
    put(0, "R_j", d(jr_inv));

    let dv_inner = ri.transpose() * (state_j.velocity - state_i.velocity - g * dt);
    put(1, "R_i", d(hat(&dv_inner)));
    put(1, "v_i", d(-ri.transpose()));
    put(1, "v_j", d(ri.transpose()));
    put(1, "g", d(-gravity_mag * dt * ri.transpose()) * &basis);

    let dp_inner =
        ri.transpose() * (state_j.position - state_i.position - state_i.velocity * dt - 0.5 * g * dt * dt);
    put(2, "R_i", d(hat(&dp_inner)));
    put(2, "v_i", d(-ri.transpose() * dt));
    put(2, "p_i", d(-ri.transpose()));
    put(2, "p_j", d(ri.transpose()));
    put(2, "g", d(-0.5 * gravity_mag * dt * dt * ri.transpose()) * &basis);

    put(3, "p_i", d(-eye));
    put(3, "p_j", d(eye));
    put(4, "p_i", d(eye));
    put(5, "p_j", d(eye));
    put(6, "b_g", d(eye));
    if opts.include_rate {
        put(6, "w", d(eye));
    }

    put(7, "v_i", d(-eye / dt));
    put(7, "v_j", d(eye / dt));
    put(7, "g", d(-gravity_mag * eye) * &basis);

    let out = ObservabilityMatrix { matrix: m, rows, cols };
    Ok(if opts.gauge_fixed { out.without_cols(&["R_i", "v_i", "p_i"]) } else { out })
}

/// Singular values of `m`, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `rel_tol·σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let Some(&max) = s.first() else { return 0 };
    if max <= 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rel_tol * max).count()
}

/// Orthonormal basis of the right nullspace, one column per direction.
pub fn nullspace(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut a = DMatrix::zeros(r.max(c), c);
    a.view_mut((0, 0), (r, c)).copy_from(m);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let max = svd.singular_values.max();
    let idx: Vec<usize> =
        (0..c).filter(|&i| !(max > 0.0) || svd.singular_values[i] <= rel_tol * max).collect();
    v_t.select_rows(idx.iter()).transpose()
}

/// Inputs of the two-keyframe output map under the constant-rate flow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LieInputs {
    pub state_i: KeyframeState,
    pub state_j: KeyframeState,
    pub gyro_bias: Vector3<f64>,
    pub gravity: Vector3<f64>,
    pub dt: f64,
    pub gnss_position: Vector3<f64>,
    pub gnss_velocity: Vector3<f64>,
    /// Time between consecutive GNSS fixes.
    pub gnss_period: f64,
}

impl LieInputs {
    /// Generic two-keyframe configuration with every quantity drawn
    /// uniformly from moderate ranges; the GNSS fix lies near keyframe j.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut v = |s: f64| Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
        let mut kf = || KeyframeState {
            rotation: exp_so3(&v(1.5)),
            position: v(2.0),
            angular_velocity: v(0.6),
            velocity: v(2.0),
        };
        let (state_i, state_j) = (kf(), kf());
        LieInputs {
            state_i,
            state_j,
            gyro_bias: v(0.02),
            gravity: Vector3::new(0.0, 0.0, -GRAVITY_MAGNITUDE),
            dt: 0.2,
            gnss_position: state_j.position + v(0.1),
            gnss_velocity: state_j.velocity + v(0.1),
            gnss_period: 0.2,
        }
    }
}

/// The seven stacked output blocks of one Lie-derivative order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LieDerivativeStack {
    pub order: usize,
    pub rotation: Matrix3<f64>,
    pub rate: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub position: Vector3<f64>,
    pub distance: f64,
    pub relative_gnss: Vector3<f64>,
    pub gnss: Vector3<f64>,
}

/// Length of [`LieDerivativeStack::flatten`].
pub const LIE_OUTPUT_DIM: usize = 25;

impl LieDerivativeStack {
    pub fn flatten(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(LIE_OUTPUT_DIM);
        v.extend_from_slice(self.rotation.as_slice());
        for x in [&self.rate, &self.velocity, &self.position] {
            v.extend_from_slice(x.as_slice());
        }
        v.push(self.distance);
        v.extend_from_slice(self.relative_gnss.as_slice());
        v.extend_from_slice(self.gnss.as_slice());
        DVector::from_vec(v)
    }
}

/// Outputs `h(x(t))` along the flow
/// `R_i(t) = R_i·Exp(ω_i t)`, `R_j(t) = Exp(ω_j t)·R_j`, `p(t) = p + v·t`,
/// with velocities, rates, gravity and bias constant. The increment outputs
/// accumulate `∫₀ᵗ Exp(ω_i s) ds` against gravity and the velocity residual.
pub fn flow_outputs(x: &LieInputs, t: f64) -> LieDerivativeStack {
    let (si, sj) = (&x.state_i, &x.state_j);
    let rit = si.rotation.transpose();
    let ri_t = (si.rotation * exp_so3(&(si.angular_velocity * t))).transpose();
    let rj_t = exp_so3(&(sj.angular_velocity * t)) * sj.rotation;
    let w0 = sj.velocity - si.velocity - x.gravity * x.dt;
    let p0 = sj.position - si.position - si.velocity * x.dt - 0.5 * x.gravity * x.dt * x.dt;
    let integral = t * left_jacobian_so3(&(si.angular_velocity * t));
    LieDerivativeStack {
        order: 0,
        rotation: *(ri_t * rj_t).matrix(),
        rate: sj.angular_velocity + x.gyro_bias,
        velocity: rit.matrix() * (w0 - integral * x.gravity),
        position: rit.matrix() * (p0 + integral * w0),
        distance: ((sj.position - si.position) + (sj.velocity - si.velocity) * t).norm(),
        relative_gnss: (sj.velocity - x.gnss_velocity) * x.gnss_period,
        gnss: sj.position + sj.velocity * t - (x.gnss_position + x.gnss_velocity * t),
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, m| acc * (n - m) as f64 / (m + 1) as f64)
}

/// Signed coefficients `c_m` of `(ω_i^∧)^m R_iᵀ (ω_j^∧)^{k−m} R_j`, m = 0..k,
/// in the k-th derivative of the rotation output, obtained by repeatedly
/// applying the product rule to the term list.
pub fn rotation_row_coefficients(order: usize) -> Vec<i64> {
    let mut c = vec![1i64];
    for _ in 0..order {
        let mut next = vec![0i64; c.len() + 1];
        for (m, &v) in c.iter().enumerate() {
            // d/dt R_iᵀ contributes −ω_i^∧ on the left; d/dt R_j contributes ω_j^∧.
            next[m + 1] -= v;
            next[m] += v;
        }
        c = next;
    }
    c
}

/// k-th time derivative of `‖Δp + Δv·t‖` at t = 0.
pub fn distance_derivative(dp: &Vector3<f64>, dv: &Vector3<f64>, order: usize) -> Result<f64, ObservabilityError> {
    let n = dp.norm();
    if n == 0.0 {
        return Err(ObservabilityError::ZeroBaseline);
    }
    let b = dp.dot(dv);
    match order {
        0 => Ok(n),
        1 => Ok(b / n),
        2 => Ok((dv.norm_squared() * n * n - b * b) / (n * n * n)),
        _ => {
            if dv.norm() == 0.0 {
                return Ok(0.0);
            }
            let f = |t: f64| (dp + dv * t).norm();
            let scale = n / dv.norm();
            let h = scale * 10f64.powf(-16.0 / (order as f64 + 4.0)).max(1e-3);
            Ok(richardson_derivative(&f, order, h))
        }
    }
}

/// Central k-th difference of `f` at 0 with spacing `h`.
fn central_difference<F: Fn(f64) -> f64>(f: &F, order: usize, h: f64) -> f64 {
    let k = order as f64;
    let mut s = 0.0;
    for m in 0..=order {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        s += sign * binomial(order, m) * f((k / 2.0 - m as f64) * h);
    }
    s / h.powi(order as i32)
}

/// One Richardson step on the O(h²) central difference.
fn richardson_derivative<F: Fn(f64) -> f64>(f: &F, order: usize, h: f64) -> f64 {
    let d1 = central_difference(f, order, h);
    let d2 = central_difference(f, order, h / 2.0);
    (4.0 * d2 - d1) / 3.0
}

/// Closed-form stack of order `k` (0..=6).
pub fn lie_derivative_stack(order: usize, x: &LieInputs) -> Result<LieDerivativeStack, ObservabilityError> {
    if order > MAX_LIE_ORDER {
        return Err(ObservabilityError::UnsupportedOrder(order));
    }
    let (si, sj) = (&x.state_i, &x.state_j);
    let dp = sj.position - si.position;
    let dv = sj.velocity - si.velocity;
    if order == 0 {
        let mut out = flow_outputs(x, 0.0);
        out.distance = distance_derivative(&dp, &dv, 0)?;
        return Ok(out);
    }
    let wi = hat(&si.angular_velocity);
    let wj = hat(&sj.angular_velocity);
    let rit = si.rotation.transpose().matrix().to_owned();
    let rj = *sj.rotation.matrix();
    let pow = |m: &Matrix3<f64>, e: usize| (0..e).fold(Matrix3::identity(), |acc, _| acc * m);
    let mut rotation = Matrix3::zeros();
    for (m, c) in rotation_row_coefficients(order).into_iter().enumerate() {
        rotation += c as f64 * pow(&wi, m) * rit * pow(&wj, order - m) * rj;
    }
    let wi_pow = pow(&wi, order - 1);
    let w0 = dv - x.gravity * x.dt;
    Ok(LieDerivativeStack {
        order,
        rotation,
        rate: Vector3::zeros(),
        velocity: -rit * wi_pow * x.gravity,
        position: rit * wi_pow * w0,
        distance: distance_derivative(&dp, &dv, order)?,
        relative_gnss: Vector3::zeros(),
        gnss: if order == 1 { sj.velocity - x.gnss_velocity } else { Vector3::zeros() },
    })
}

/// Largest deviation between the order-`k` closed form and the k-th
/// numerical time derivative of `outputs`, relative to `max(1, ‖closed‖∞)`.
/// For order 0 the closed form is compared with `outputs(0)` directly.
pub fn verify_lie_stack_numerically<F>(order: usize, x: &LieInputs, outputs: F) -> Result<f64, ObservabilityError>
where
    F: Fn(f64) -> DVector<f64>,
{
    let closed = lie_derivative_stack(order, x)?.flatten();
    let numeric = if order == 0 {
        outputs(0.0)
    } else {
        let h = match order {
            1 => 1e-4,
            2 => 1e-3,
            _ => 10f64.powf(-16.0 / (order as f64 + 4.0)),
        };
        let mut v = DVector::zeros(closed.len());
        for i in 0..closed.len() {
            let f = |t: f64| outputs(t)[i];
            v[i] = richardson_derivative(&f, order, h);
        }
        v
    };
    let scale = closed.amax().max(1.0);
    Ok((closed - numeric).amax() / scale)
}

/// Directions of the reduced parameter set: rotation of keyframe j,
/// gyroscope bias, and the baseline length along the current baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReducedParam {
    RotationJ(usize),
    GyroBias(usize),
    Distance,
}

pub const REDUCED_PARAMS: [ReducedParam; 7] = [
    ReducedParam::RotationJ(0),
    ReducedParam::RotationJ(1),
    ReducedParam::RotationJ(2),
    ReducedParam::GyroBias(0),
    ReducedParam::GyroBias(1),
    ReducedParam::GyroBias(2),
    ReducedParam::Distance,
];

fn perturb(x: &LieInputs, p: ReducedParam, eps: f64) -> LieInputs {
    let mut y = *x;
    match p {
        ReducedParam::RotationJ(a) => {
            let mut d = Vector3::zeros();
            d[a] = eps;
            y.state_j.rotation = y.state_j.rotation.retract(&d);
        }
        ReducedParam::GyroBias(a) => y.gyro_bias[a] += eps,
        ReducedParam::Distance => {
            let u = (x.state_j.position - x.state_i.position).normalize();
            y.state_j.position += u * eps;
        }
    }
    y
}

/// Gradient of the stacked orders `orders` with respect to `params`
/// (central differences, step 1e-6).
pub fn dg_matrix(x: &LieInputs, orders: &[usize], params: &[ReducedParam]) -> Result<DMatrix<f64>, ObservabilityError> {
    let stacked = |y: &LieInputs| -> Result<DVector<f64>, ObservabilityError> {
        let mut parts = Vec::with_capacity(orders.len() * LIE_OUTPUT_DIM);
        for &k in orders {
            parts.extend(lie_derivative_stack(k, y)?.flatten().iter().copied());
        }
        Ok(DVector::from_vec(parts))
    };
    let eps = 1e-6;
    let rows = orders.len() * LIE_OUTPUT_DIM;
    let mut m = DMatrix::zeros(rows, params.len());
    for (c, &p) in params.iter().enumerate() {
        let col = (stacked(&perturb(x, p, eps))? - stacked(&perturb(x, p, -eps))?) / (2.0 * eps);
        m.set_column(c, &col);
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DgRank {
    /// Rank over orders 0..=K.
    pub rank: usize,
    /// Rank over orders 1..=K only (the dynamics part).
    pub dynamics_rank: usize,
}

/// Rank of `dG` over the reduced 7-parameter set for orders `0..=max_order`.
pub fn rank_dg(x: &LieInputs, max_order: usize, rel_tol: f64) -> Result<DgRank, ObservabilityError> {
    let all: Vec<usize> = (0..=max_order).collect();
    let full = dg_matrix(x, &all, &REDUCED_PARAMS)?;
    let dynamics = if max_order == 0 {
        0
    } else {
        numerical_rank(&dg_matrix(x, &all[1..], &REDUCED_PARAMS)?, rel_tol)
    };
    Ok(DgRank { rank: numerical_rank(&full, rel_tol), dynamics_rank: dynamics })
}
