//! Retraction-based Levenberg–Marquardt over the initialization manifold.

use crate::manifold::Pose;
use crate::residuals::{retract_var, total_cost, InitState, ResidualBlock, ResidualError, StateVar};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("normal equations stayed singular up to damping {0:e}")]
    SingularNormalEquations(f64),
    #[error("cost is not finite at the initial state")]
    NonFiniteCost,
    #[error("layout has no free variable")]
    EmptyLayout,
    #[error("layout references {0:?} which the state does not hold")]
    LayoutMismatch(StateVar),
    #[error("residual structure changed between evaluations ({0} vs {1} blocks)")]
    UnstableResiduals(usize, usize),
    #[error(transparent)]
    Residual(#[from] ResidualError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum VariableKind {
    Rotation,
    Euclidean,
    S2,
    Pose,
}

impl VariableKind {
    pub fn ambient_dim(&self) -> usize {
        match self {
            VariableKind::Rotation => 9,
            VariableKind::Euclidean => 3,
            VariableKind::S2 => 3,
            VariableKind::Pose => 12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariableDescriptor {
    pub var: StateVar,
    pub kind: VariableKind,
    pub tangent_dim: usize,
    pub fixed: bool,
}

impl VariableDescriptor {
    pub fn new(var: StateVar) -> Self {
        let kind = match var {
            StateVar::Rotation(_) => VariableKind::Rotation,
            StateVar::Gravity => VariableKind::S2,
            StateVar::Extrinsic => VariableKind::Pose,
            _ => VariableKind::Euclidean,
        };
        VariableDescriptor { var, kind, tangent_dim: var.tangent_dim(), fixed: false }
    }
}

/// Which variable groups a layout carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayoutOptions {
    pub angular_velocity: bool,
    pub extrinsic: bool,
}

impl Default for LayoutOptions {
    fn default() -> Self {
        LayoutOptions { angular_velocity: true, extrinsic: false }
    }
}

/// Ordered variable descriptors. Per-keyframe variables come first in
/// keyframe order, shared ones last, which keeps the normal-equation
/// envelope narrow.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterLayout {
    pub vars: Vec<VariableDescriptor>,
}

impl ParameterLayout {
    pub fn for_keyframes(n: usize, opts: LayoutOptions) -> Self {
        let mut vars = Vec::with_capacity(4 * n + 3);
        for k in 0..n {
            vars.push(VariableDescriptor::new(StateVar::Rotation(k)));
            vars.push(VariableDescriptor::new(StateVar::Position(k)));
            vars.push(VariableDescriptor::new(StateVar::Velocity(k)));
            if opts.angular_velocity {
                vars.push(VariableDescriptor::new(StateVar::AngularVelocity(k)));
            }
        }
        vars.push(VariableDescriptor::new(StateVar::GyroBias));
        vars.push(VariableDescriptor::new(StateVar::Gravity));
        if opts.extrinsic {
            vars.push(VariableDescriptor::new(StateVar::Extrinsic));
        }
        ParameterLayout { vars }
    }

    /// Sum of tangent dimensions of the free variables.
    pub fn free_dim(&self) -> usize {
        self.vars.iter().filter(|v| !v.fixed).map(|v| v.tangent_dim).sum()
    }

    pub fn total_dim(&self) -> usize {
        self.vars.iter().map(|v| v.tangent_dim).sum()
    }

    pub fn set_fixed(&mut self, var: StateVar, fixed: bool) {
        for d in self.vars.iter_mut().filter(|d| d.var == var) {
            d.fixed = fixed;
        }
    }

    /// Tangent offset of every free variable, `None` for fixed ones.
    fn offsets(&self) -> Vec<(StateVar, Option<usize>, usize)> {
        let mut off = 0;
        self.vars
            .iter()
            .map(|d| {
                if d.fixed {
                    (d.var, None, d.tangent_dim)
                } else {
                    off += d.tangent_dim;
                    (d.var, Some(off - d.tangent_dim), d.tangent_dim)
                }
            })
            .collect()
    }

    fn check(&self, state: &InitState) -> Result<(), SolverError> {
        if self.free_dim() == 0 {
            return Err(SolverError::EmptyLayout);
        }
        let n = state.keyframes.len();
        for d in &self.vars {
            let k = match d.var {
                StateVar::Rotation(k)
                | StateVar::Position(k)
                | StateVar::Velocity(k)
                | StateVar::AngularVelocity(k) => k,
                _ => continue,
            };
            if k >= n {
                return Err(SolverError::LayoutMismatch(d.var));
            }
        }
        Ok(())
    }
}

/// Marks orientation, position and velocity of `first_keyframe` fixed.
pub fn gauge_fix(layout: &ParameterLayout, first_keyframe: usize) -> ParameterLayout {
    let mut out = layout.clone();
    for var in [
        StateVar::Rotation(first_keyframe),
        StateVar::Position(first_keyframe),
        StateVar::Velocity(first_keyframe),
    ] {
        out.set_fixed(var, true);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub max_damping: f64,
    pub relative_decrease_tol: f64,
    pub gradient_tol: f64,
    /// Whitened squared error at which the problem counts as solved exactly;
    /// below it the remaining residuals are rounding noise.
    pub cost_floor: f64,
    /// Opt-in second-order (geodesic acceleration) correction of each trial
    /// step, for long curved valleys; steps whose correction exceeds this
    /// fraction of the first-order step (in the scaled norm) are rejected
    /// like a cost increase. `None` (default) is plain Levenberg–Marquardt.
    pub geodesic_acceleration: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iterations: 100,
            initial_damping: 1e-4,
            damping_up: 10.0,
            damping_down: 10.0,
            max_damping: 1e16,
            relative_decrease_tol: 1e-10,
            gradient_tol: 1e-8,
            cost_floor: 1e-18,
            geodesic_acceleration: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Termination {
    GradientTolerance,
    CostFloor,
    RelativeDecrease,
    MaxIterations,
    /// No step could lower the cost further before damping hit its ceiling.
    NoFurtherDecrease,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub termination: Termination,
    pub final_gradient_norm: f64,
}

/// Symmetric matrix stored by rows of its lower triangle, each row from its
/// first structurally non-zero column to the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    row_start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineMatrix {
    /// Zero matrix with the given first column per row (`first[i] ≤ i`).
    pub fn with_profile(first: Vec<usize>) -> Self {
        let mut row_start = Vec::with_capacity(first.len() + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            row_start.push(acc);
            acc += i + 1 - f;
        }
        row_start.push(acc);
        SkylineMatrix { first, row_start, data: vec![0.0; acc] }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    fn idx(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        (j >= self.first[i]).then(|| self.row_start[i] + j - self.first[i])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.idx(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Adds to the lower-triangle entry `(i, j)`, `j ≤ i`, inside the profile.
    fn add_lower(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j).expect("entry inside profile");
        self.data[k] += v;
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[self.row_start[i]..self.row_start[i + 1]]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.data[self.row_start[i + 1] - 1]).collect()
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim());
        for i in 0..self.dim() {
            let f = self.first[i];
            for (off, &v) in self.row(i).iter().enumerate() {
                let j = f + off;
                y[i] += v * x[j];
                if j != i {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| self.get(i, j))
    }

    /// Cholesky factor `L` in the same profile, or `None` if not positive definite.
    pub fn cholesky(&self) -> Option<SkylineMatrix> {
        let mut l = self.clone();
        for i in 0..l.dim() {
            let fi = l.first[i];
            let ri = l.row_start[i];
            for j in fi..=i {
                let fj = l.first[j];
                let start = fi.max(fj);
                let rj = l.row_start[j];
                let mut s = l.data[ri + j - fi];
                let li = &l.data[ri + start - fi..ri + j - fi];
                let lj = &l.data[rj + start - fj..rj + j - fj];
                s -= li.iter().zip(lj).map(|(a, b)| a * b).sum::<f64>();
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l.data[ri + i - fi] = s.sqrt();
                } else {
                    l.data[ri + j - fi] = s / l.data[l.row_start[j + 1] - 1];
                }
            }
        }
        Some(l)
    }

    /// Solves `L·Lᵀ·x = b` for a factor produced by [`SkylineMatrix::cholesky`].
    pub fn cholesky_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut y = b.clone();
        for i in 0..n {
            let row = self.row(i);
            let f = self.first[i];
            let s: f64 = row[..row.len() - 1].iter().enumerate().map(|(o, v)| v * y[f + o]).sum();
            y[i] = (y[i] - s) / row[row.len() - 1];
        }
        for i in (0..n).rev() {
            let row = self.row(i);
            let f = self.first[i];
            y[i] /= row[row.len() - 1];
            let yi = y[i];
            for (o, v) in row[..row.len() - 1].iter().enumerate() {
                y[f + o] -= v * yi;
            }
        }
        y
    }
}

/// Gauss–Newton system `H = JᵀWJ`, `g = JᵀWr` over the free variables.
pub struct NormalEquations {
    pub hessian: SkylineMatrix,
    pub gradient: DVector<f64>,
    pub cost: f64,
}

pub fn build_normal_equations(blocks: &[ResidualBlock], layout: &ParameterLayout) -> NormalEquations {
    let offsets = free_offsets(layout);
    let dim = layout.free_dim();
    let active: Vec<Vec<(usize, &DMatrix<f64>)>> = blocks
        .iter()
        .map(|blk| blk.jacobians.iter().filter_map(|(v, j)| offsets.get(v).map(|&o| (o, j))).collect())
        .collect();
    let mut first: Vec<usize> = (0..dim).collect();
    for act in &active {
        let lo = act.iter().map(|(o, _)| *o).min().unwrap_or(usize::MAX);
        for (o, j) in act {
            for f in &mut first[*o..*o + j.ncols()] {
                *f = (*f).min(lo);
            }
        }
    }
    let mut h = SkylineMatrix::with_profile(first);
    let mut g = DVector::zeros(dim);
    let mut cost = 0.0;
    for (blk, act) in blocks.iter().zip(&active) {
        let wr = &blk.weight * &blk.value;
        cost += blk.value.dot(&wr);
        for (oa, ja) in act {
            let mut ga = g.rows_mut(*oa, ja.ncols());
            ga += ja.transpose() * &wr;
            let jat_w = ja.transpose() * &blk.weight;
            for (ob, jb) in act {
                if ob > oa {
                    continue;
                }
                let hab = &jat_w * *jb;
                for r in 0..hab.nrows() {
                    for c in 0..hab.ncols() {
                        let (i, j) = (oa + r, ob + c);
                        if j <= i {
                            h.add_lower(i, j, hab[(r, c)]);
                        }
                    }
                }
            }
        }
    }
    NormalEquations { hessian: h, gradient: g, cost }
}

/// Solves `(H + λ·D)·δ = −g` with Marquardt scaling `D = diag(H)` floored
/// relative to the largest diagonal entry.
fn damped_step(h: &SkylineMatrix, g: &DVector<f64>, lambda: f64) -> Option<DampedStep> {
    let diag = h.diagonal();
    let max_diag = diag.iter().copied().fold(0.0_f64, f64::max);
    let floor = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
    let scaling = DVector::from_iterator(diag.len(), diag.iter().map(|d| d.max(floor)));
    let mut a = h.clone();
    for (i, d) in scaling.iter().enumerate() {
        a.add_lower(i, i, lambda * d);
    }
    let factor = a.cholesky()?;
    let delta = -factor.cholesky_solve(g);
    Some(DampedStep { delta, factor, scaling })
}

struct DampedStep {
    delta: DVector<f64>,
    factor: SkylineMatrix,
    scaling: DVector<f64>,
}

/// Finite-difference step along `δ` used for the directional second derivative.
const ACCELERATION_PROBE: f64 = 0.1;

/// Geodesic acceleration `a = −(H+λD)⁻¹ JᵀW r''` where `r''` is the second
/// directional derivative of every residual along `δ`.
fn geodesic_acceleration<F>(
    provider: &F,
    state: &InitState,
    ext: &Pose,
    blocks: &[ResidualBlock],
    layout: &ParameterLayout,
    step: &DampedStep,
) -> Result<DVector<f64>, SolverError>
where
    F: Fn(&InitState, &Pose) -> Result<Vec<ResidualBlock>, ResidualError>,
{
    let h = ACCELERATION_PROBE;
    let (probe, probe_ext) = apply_step(state, ext, layout, &(&step.delta * h));
    let probed = provider(&probe, &probe_ext)?;
    if probed.len() != blocks.len() {
        return Err(SolverError::UnstableResiduals(blocks.len(), probed.len()));
    }
    let offsets = free_offsets(layout);
    let mut rhs = DVector::zeros(step.delta.len());
    for (blk, at) in blocks.iter().zip(&probed) {
        let active: Vec<(usize, &DMatrix<f64>)> =
            blk.jacobians.iter().filter_map(|(v, j)| offsets.get(v).map(|&o| (o, j))).collect();
        if active.is_empty() {
            continue;
        }
        let mut jd = DVector::zeros(blk.value.len());
        for (o, j) in &active {
            jd += *j * step.delta.rows(*o, j.ncols());
        }
        let second = ((&at.value - &blk.value) / h - jd) * (2.0 / h);
        let w = &blk.weight * second;
        for (o, j) in &active {
            let mut part = rhs.rows_mut(*o, j.ncols());
            part += j.transpose() * &w;
        }
    }
    Ok(-step.factor.cholesky_solve(&rhs))
}

fn scaled_norm(v: &DVector<f64>, scaling: &DVector<f64>) -> f64 {
    v.iter().zip(scaling.iter()).map(|(x, d)| d * x * x).sum::<f64>().sqrt()
}

fn free_offsets(layout: &ParameterLayout) -> HashMap<StateVar, usize> {
    layout.offsets().into_iter().filter_map(|(v, o, _)| o.map(|o| (v, o))).collect()
}

fn apply_step(
    state: &InitState,
    extrinsic: &Pose,
    layout: &ParameterLayout,
    delta: &DVector<f64>,
) -> (InitState, Pose) {
    let mut s = state.clone();
    let mut t = *extrinsic;
    for (var, off, dim) in layout.offsets() {
        if let Some(o) = off {
            retract_var(&mut s, &mut t, var, delta.rows(o, dim).as_slice());
        }
    }
    (s, t)
}

enum Step {
    Accepted(InitState, Pose, Vec<ResidualBlock>),
    Converged,
    Exhausted,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Minimizes the cost produced by `provider` over the free variables of `layout`.
///
/// The cost convention is `Σ rᵀ·W·r` (no ½ factor).
pub fn solve<F>(
    provider: F,
    layout: &ParameterLayout,
    initial: &InitState,
    extrinsic: &Pose,
    options: &SolveOptions,
) -> Result<(InitState, Pose, SolveReport), SolverError>
where
    F: Fn(&InitState, &Pose) -> Result<Vec<ResidualBlock>, ResidualError>,
{
    layout.check(initial)?;
    let mut state = initial.clone();
    let mut ext = *extrinsic;
    let mut blocks = provider(&state, &ext)?;
    let mut ne = build_normal_equations(&blocks, layout);
    if !ne.cost.is_finite() {
        return Err(SolverError::NonFiniteCost);
    }
    let initial_cost = ne.cost;
    let mut lambda = options.initial_damping;
    let mut iterations = 0;
    let termination = loop {
        if inf_norm(&ne.gradient) < options.gradient_tol {
            break Termination::GradientTolerance;
        }
        if ne.cost <= options.cost_floor {
            break Termination::CostFloor;
        }
        if iterations >= options.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;
        let outcome = loop {
            if let Some(step) = damped_step(&ne.hessian, &ne.gradient, lambda) {
                let delta = &step.delta;
                // Decrease predicted by the quadratic model; below tolerance no trial can do better.
                let predicted = -(2.0 * ne.gradient.dot(delta) + delta.dot(&ne.hessian.mul_vec(delta)));
                if predicted <= options.relative_decrease_tol * ne.cost {
                    break Step::Converged;
                }
                let trial = match options.geodesic_acceleration {
                    Some(ratio) => {
                        let acc = geodesic_acceleration(&provider, &state, &ext, &blocks, layout, &step)?;
                        (2.0 * scaled_norm(&acc, &step.scaling) <= ratio * scaled_norm(delta, &step.scaling))
                            .then(|| delta + acc * 0.5)
                    }
                    None => Some(delta.clone()),
                };
                if let Some(trial) = trial {
                    let (cand, cand_ext) = apply_step(&state, &ext, layout, &trial);
                    let cand_blocks = provider(&cand, &cand_ext)?;
                    let cost = total_cost(&cand_blocks);
                    if cost.is_finite() && cost <= ne.cost {
                        lambda /= options.damping_down;
                        break Step::Accepted(cand, cand_ext, cand_blocks);
                    }
                }
            } else if lambda >= options.max_damping {
                return Err(SolverError::SingularNormalEquations(lambda));
            }
            lambda = if lambda == 0.0 { options.initial_damping.max(1e-4) } else { lambda * options.damping_up };
            if lambda > options.max_damping {
                break Step::Exhausted;
            }
        };
        let (cand, cand_ext, cand_blocks) = match outcome {
            Step::Accepted(s, t, b) => (s, t, b),
            Step::Converged => {
                iterations -= 1;
                break Termination::RelativeDecrease;
            }
            Step::Exhausted => break Termination::NoFurtherDecrease,
        };
        let prev = ne.cost;
        state = cand;
        ext = cand_ext;
        blocks = cand_blocks;
        ne = build_normal_equations(&blocks, layout);
        if prev <= 0.0 || (prev - ne.cost) / prev < options.relative_decrease_tol {
            break Termination::RelativeDecrease;
        }
    };
    let report = SolveReport {
        iterations,
        initial_cost,
        final_cost: ne.cost,
        converged: termination != Termination::MaxIterations,
        termination,
        final_gradient_norm: inf_norm(&ne.gradient),
    };
    Ok((state, ext, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::GravityDirection;
    use crate::residuals::{KeyframeState, ResidualKind};
    use nalgebra::Vector3;

    fn zero_state(n: usize) -> InitState {
        InitState::new(vec![KeyframeState::default(); n], Vector3::zeros(), GravityDirection::down())
    }

    #[test]
    fn gauge_fix_dimensions() {
        let full = ParameterLayout::for_keyframes(2, LayoutOptions { angular_velocity: false, extrinsic: false });
        assert_eq!(full.free_dim(), 23);
        let fixed = gauge_fix(&full, 0);
        assert_eq!(fixed.free_dim(), 14);
        assert_eq!(gauge_fix(&fixed, 0), fixed);
    }

    #[test]
    fn skyline_matches_dense() {
        let dense = DMatrix::from_row_slice(
            4,
            4,
            &[4.0, 1.0, 0.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.0, 0.5, 2.0, 0.3, 0.0, 0.0, 0.3, 1.5],
        );
        let mut m = SkylineMatrix::with_profile(vec![0, 0, 1, 2]);
        for i in 0..4 {
            for j in 0..=i {
                if dense[(i, j)] != 0.0 {
                    m.add_lower(i, j, dense[(i, j)]);
                }
            }
        }
        assert_eq!(m.to_dense(), dense);
        let b = DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m.mul_vec(&b) - &dense * &b).amax() < 1e-14);
        let x = m.cholesky().unwrap().cholesky_solve(&b);
        let expect = dense.clone().cholesky().unwrap().solve(&b);
        assert!((x - expect).norm() < 1e-14);
        let mut neg = m.clone();
        neg.add_lower(3, 3, -10.0);
        assert!(neg.cholesky().is_none());
    }

    /// Linear residual `p_k − c_k` plus `p_1 − p_0 − d`.
    fn toy_blocks(s: &InitState) -> Vec<ResidualBlock> {
        let targets = [Vector3::new(1.0, 2.0, 3.0), Vector3::new(-1.0, 0.5, 2.0)];
        let mut out = Vec::new();
        for (k, c) in targets.iter().enumerate() {
            let r = s.keyframes[k].position - c;
            out.push(ResidualBlock {
                kind: ResidualKind::GnssGlobal,
                value: DVector::from_column_slice(r.as_slice()),
                weight: DMatrix::identity(3, 3) * (k as f64 + 1.0),
                jacobians: vec![(StateVar::Position(k), DMatrix::identity(3, 3))],
            });
        }
        let d = Vector3::new(0.0, 1.0, 0.0);
        let r = s.keyframes[1].position - s.keyframes[0].position - d;
        out.push(ResidualBlock {
            kind: ResidualKind::GnssRelative,
            value: DVector::from_column_slice(r.as_slice()),
            weight: DMatrix::identity(3, 3) * 3.0,
            jacobians: vec![
                (StateVar::Position(1), DMatrix::identity(3, 3)),
                (StateVar::Position(0), -DMatrix::identity(3, 3)),
            ],
        });
        out
    }

    #[test]
    fn quadratic_toy_matches_closed_form() {
        let mut layout = ParameterLayout::for_keyframes(2, LayoutOptions { angular_velocity: false, extrinsic: false });
        for d in layout.vars.iter_mut() {
            d.fixed = !matches!(d.var, StateVar::Position(_));
        }
        let opts = SolveOptions { initial_damping: 0.0, ..Default::default() };
        let (s, _, rep) = solve(|s, _| Ok(toy_blocks(s)), &layout, &zero_state(2), &Pose::identity(), &opts).unwrap();
        // Per axis: [w0 + 3, −3; −3, w1 + 3] p = [w0 c0 − 3d, w1 c1 + 3d].
        let (c0, c1, d) = (Vector3::new(1.0, 2.0, 3.0), Vector3::new(-1.0, 0.5, 2.0), Vector3::new(0.0, 1.0, 0.0));
        let a = nalgebra::Matrix2::new(4.0, -3.0, -3.0, 5.0);
        let inv = a.try_inverse().unwrap();
        for ax in 0..3 {
            let rhs = nalgebra::Vector2::new(c0[ax] - 3.0 * d[ax], 2.0 * c1[ax] + 3.0 * d[ax]);
            let p = inv * rhs;
            assert!((s.keyframes[0].position[ax] - p[0]).abs() < 1e-10);
            assert!((s.keyframes[1].position[ax] - p[1]).abs() < 1e-10);
        }
        assert_eq!(rep.iterations, 1);
        assert!(rep.final_cost <= rep.initial_cost);
    }

    #[test]
    fn fixed_variables_untouched() {
        let mut layout = ParameterLayout::for_keyframes(2, LayoutOptions { angular_velocity: false, extrinsic: false });
        for d in layout.vars.iter_mut() {
            d.fixed = !matches!(d.var, StateVar::Position(_));
        }
        layout.set_fixed(StateVar::Position(0), true);
        let init = zero_state(2);
        let (s, _, _) =
            solve(|s, _| Ok(toy_blocks(s)), &layout, &init, &Pose::identity(), &SolveOptions::default()).unwrap();
        assert_eq!(s.keyframes[0], init.keyframes[0]);
    }

    #[test]
    fn empty_layout_rejected() {
        let mut layout = ParameterLayout::for_keyframes(1, LayoutOptions::default());
        for d in layout.vars.iter_mut() {
            d.fixed = true;
        }
        let r = solve(|s, _| Ok(toy_blocks(s)), &layout, &zero_state(2), &Pose::identity(), &SolveOptions::default());
        assert_eq!(r.unwrap_err(), SolverError::EmptyLayout);
    }

    #[test]
    fn non_finite_cost_rejected() {
        let layout = ParameterLayout::for_keyframes(2, LayoutOptions::default());
        let r = solve(
            |s, _| {
                let mut b = toy_blocks(s);
                b[0].value[0] = f64::NAN;
                Ok(b)
            },
            &layout,
            &zero_state(2),
            &Pose::identity(),
            &SolveOptions::default(),
        );
        assert_eq!(r.unwrap_err(), SolverError::NonFiniteCost);
    }

    /// Rosenbrock valley in the first two position coordinates of keyframe 0.
    fn rosenbrock(s: &InitState) -> Vec<ResidualBlock> {
        let p = s.keyframes[0].position;
        vec![ResidualBlock {
            kind: ResidualKind::GnssGlobal,
            value: DVector::from_column_slice(&[10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0], p[2]]),
            weight: DMatrix::identity(3, 3),
            jacobians: vec![(
                StateVar::Position(0),
                DMatrix::from_row_slice(3, 3, &[-20.0 * p[0], 10.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
            )],
        }]
    }

    #[test]
    fn geodesic_acceleration_reaches_valley_minimum() {
        let mut layout = ParameterLayout::for_keyframes(1, LayoutOptions { angular_velocity: false, extrinsic: false });
        for d in layout.vars.iter_mut() {
            d.fixed = !matches!(d.var, StateVar::Position(_));
        }
        let mut init = zero_state(1);
        init.keyframes[0].position = Vector3::new(-1.2, 1.0, 0.0);
        let plain = SolveOptions::default();
        let accel = SolveOptions { geodesic_acceleration: Some(0.75), ..plain };
        let (a, _, ra) = solve(|s, _| Ok(rosenbrock(s)), &layout, &init, &Pose::identity(), &accel).unwrap();
        let (_, _, rp) = solve(|s, _| Ok(rosenbrock(s)), &layout, &init, &Pose::identity(), &plain).unwrap();
        assert!((a.keyframes[0].position - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-6);
        assert!(ra.converged && ra.final_cost < 1e-12);
        assert!(ra.iterations <= rp.iterations, "{} vs {}", ra.iterations, rp.iterations);
    }
}
