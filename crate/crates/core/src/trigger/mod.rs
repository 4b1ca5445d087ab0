//! Activation criterion for the global GNSS residuals: conditioning of the
//! extrinsic Hessian and the relative change of its singular-value ratio.

mod pipeline;

pub use pipeline::{run_two_stage, Activation, InitialPose, PipelineConfig, PipelineError, TwoStageResult};

use crate::manifold::{hat, Pose};
use crate::residuals::{information, GnssMeasurement, InitState};
use nalgebra::{Matrix3, SMatrix, Vector3};
use std::io::Write;
use thiserror::Error;

pub type Matrix6 = SMatrix<f64, 6, 6>;
pub type Matrix9x6 = SMatrix<f64, 9, 6>;

/// Default activation threshold on the relative ratio change.
pub const DEFAULT_THRESHOLD: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriggerError {
    #[error("need at least 2 measurements, got {0}")]
    InsufficientMeasurements(usize),
    #[error("{measurements} measurements but {keyframes} keyframes")]
    LengthMismatch { measurements: usize, keyframes: usize },
}

/// Stacked 9×6 Jacobian of `[R_T(p_j − p_k) − (p̂_j − p̂_k); T·p_j − p̂_j; T·p_k − p̂_k]`
/// with respect to the tangent of `T` (`T ← T·Exp([t; ω])`).
pub fn extrinsic_jacobian(p_j: &Vector3<f64>, p_k: &Vector3<f64>, extrinsic: &Pose) -> Matrix9x6 {
    let r = *extrinsic.rotation.matrix();
    let mut j = Matrix9x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-r * hat(&(p_j - p_k))));
    for (row, p) in [(3, p_j), (6, p_k)] {
        j.fixed_view_mut::<3, 3>(row, 0).copy_from(&r);
        j.fixed_view_mut::<3, 3>(row, 3).copy_from(&(-r * hat(p)));
    }
    j
}

/// `H = Σ_k J_kᵀ Ω_k J_k` over consecutive epoch pairs, with
/// `Ω_k = blockdiag(Σ_j + Σ_k, Σ_j, Σ_k)⁻¹`.
pub fn extrinsic_hessian(gnss: &[GnssMeasurement], state: &InitState, extrinsic: &Pose) -> Result<Matrix6, TriggerError> {
    let n = gnss.len();
    if n < 2 {
        return Err(TriggerError::InsufficientMeasurements(n));
    }
    if state.keyframes.len() < n {
        return Err(TriggerError::LengthMismatch { measurements: n, keyframes: state.keyframes.len() });
    }
    let mut h = Matrix6::zeros();
    for k in 1..n {
        let (mj, mk) = (&gnss[k], &gnss[k - 1]);
        let j = extrinsic_jacobian(&state.keyframes[k].position, &state.keyframes[k - 1].position, extrinsic);
        let mut omega = SMatrix::<f64, 9, 9>::zeros();
        let blocks: [Matrix3<f64>; 3] = [information(&(mj.cov + mk.cov)), information(&mj.cov), information(&mk.cov)];
        for (b, w) in blocks.iter().enumerate() {
            omega.fixed_view_mut::<3, 3>(3 * b, 3 * b).copy_from(w);
        }
        h += j.transpose() * omega * j;
    }
    Ok(0.5 * (h + h.transpose()))
}

/// Singular values of a symmetric matrix, descending.
pub fn symmetric_singular_values(h: &Matrix6) -> [f64; 6] {
    let eig = nalgebra::SymmetricEigen::new(*h);
    let mut s: Vec<f64> = eig.eigenvalues.iter().map(|x| x.abs()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut out = [0.0; 6];
    out.copy_from_slice(&s);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TriggerRecord {
    pub k: usize,
    pub singular_values: [f64; 6],
    pub rho: f64,
    pub delta_rho: f64,
    pub fired: bool,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TriggerTrace {
    pub records: Vec<TriggerRecord>,
    pub k_star: Option<usize>,
    pub threshold: f64,
    /// The criterion cannot fire before this epoch (0 disables the guard).
    pub min_epochs: usize,
}

impl TriggerTrace {
    pub fn new(threshold: f64) -> Self {
        TriggerTrace { records: Vec::new(), k_star: None, threshold, min_epochs: 0 }
    }

    pub fn with_min_epochs(mut self, min_epochs: usize) -> Self {
        self.min_epochs = min_epochs;
        self
    }

    /// Appends a record for the epoch after the last one (starting at 1).
    pub fn update(&mut self, h: &Matrix6) -> &TriggerRecord {
        let k = self.records.last().map_or(1, |r| r.k + 1);
        self.update_at(k, h)
    }

    /// Appends a record for epoch `k`.
    pub fn update_at(&mut self, k: usize, h: &Matrix6) -> &TriggerRecord {
        let s = symmetric_singular_values(h);
        let rho = if s[5] > 0.0 { s[0] / s[5] } else { f64::INFINITY };
        let delta_rho = match self.records.last() {
            Some(prev) if prev.rho.is_finite() && rho.is_finite() => ((rho - prev.rho) / prev.rho).abs(),
            _ => f64::INFINITY,
        };
        let fired = self.k_star.is_none() && delta_rho < self.threshold && k >= self.min_epochs;
        if fired {
            self.k_star = Some(k);
        }
        self.records.push(TriggerRecord { k, singular_values: s, rho, delta_rho, fired });
        self.records.last().expect("just pushed")
    }

    /// Columns `k, s1..s6, rho, delta_rho, fired`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["k", "s1", "s2", "s3", "s4", "s5", "s6", "rho", "delta_rho", "fired"])?;
        for r in &self.records {
            let mut row = vec![r.k.to_string()];
            row.extend(r.singular_values.iter().map(|x| x.to_string()));
            row.push(r.rho.to_string());
            row.push(r.delta_rho.to_string());
            row.push(u8::from(r.fired).to_string());
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Functional form of [`TriggerTrace::update`].
pub fn update_trigger(trace: &TriggerTrace, h: &Matrix6) -> TriggerTrace {
    let mut t = trace.clone();
    t.update(h);
    t
}
