//! On-manifold IMU preintegration with first-order covariance propagation.
//!
//! Samples are integrated with forward Euler over each sample interval. The
//! rotation increment is accumulated as `ΔR ← ΔR·Exp((ω̃ − b^g)Δt)`; velocity
//! and position use the rotation *before* the update so that the increments
//! agree with the propagation matrices `A` and `B`. The Jacobians of the
//! increments with respect to the gyroscope bias are carried along so that
//! residuals can apply a first-order bias correction without re-integrating.

use crate::manifold::{exp_so3, hat, right_jacobian_so3, Rotation};
use nalgebra::{Matrix3, SMatrix, Vector3};
use thiserror::Error;

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Matrix9x6 = SMatrix<f64, 9, 6>;
pub type Matrix6 = SMatrix<f64, 6, 6>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreintegrationError {
    #[error("no IMU samples to integrate")]
    EmptyStream,
    #[error("a single sample has no interval; provide an explicit end time")]
    UndefinedInterval,
    #[error("timestamps must be strictly increasing (index {index}: {previous} -> {current})")]
    NonMonotonicTimestamps { index: usize, previous: f64, current: f64 },
    #[error("integration interval must be positive, got {0}")]
    NonPositiveInterval(f64),
}

/// One gyroscope/accelerometer reading in the body frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    /// Seconds from the stream epoch.
    pub timestamp: f64,
    /// rad/s
    pub gyro: Vector3<f64>,
    /// m/s²
    pub accel: Vector3<f64>,
}

/// Per-sample (discrete-time) measurement noise covariances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuNoiseModel {
    pub gyro_cov: Matrix3<f64>,
    pub accel_cov: Matrix3<f64>,
}

impl ImuNoiseModel {
    pub fn isotropic(gyro_sigma: f64, accel_sigma: f64) -> Self {
        ImuNoiseModel {
            gyro_cov: Matrix3::identity() * gyro_sigma * gyro_sigma,
            accel_cov: Matrix3::identity() * accel_sigma * accel_sigma,
        }
    }

    /// Block-diagonal `Σ_η = diag(Σ_ω, Σ_a)`.
    pub fn stacked(&self) -> Matrix6 {
        let mut s = Matrix6::zeros();
        s.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.gyro_cov);
        s.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.accel_cov);
        s
    }
}

/// Relative motion increments between two keyframes.
#[derive(Clone, Debug, PartialEq)]
pub struct PreintegratedImu {
    pub delta_r: Rotation,
    pub delta_v: Vector3<f64>,
    pub delta_p: Vector3<f64>,
    pub delta_t: f64,
    /// Covariance of `[δφ; δv; δp]`.
    pub cov: Matrix9,
    /// Gyroscope bias used during integration.
    pub gyro_bias_ref: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
    pub d_r_d_bg: Matrix3<f64>,
    pub d_v_d_bg: Matrix3<f64>,
    pub d_p_d_bg: Matrix3<f64>,
}

impl PreintegratedImu {
    pub fn new(gyro_bias: Vector3<f64>, accel_bias: Vector3<f64>) -> Self {
        PreintegratedImu {
            delta_r: Rotation::identity(),
            delta_v: Vector3::zeros(),
            delta_p: Vector3::zeros(),
            delta_t: 0.0,
            cov: Matrix9::zeros(),
            gyro_bias_ref: gyro_bias,
            accel_bias,
            d_r_d_bg: Matrix3::zeros(),
            d_v_d_bg: Matrix3::zeros(),
            d_p_d_bg: Matrix3::zeros(),
        }
    }

    /// Integrates one sample held constant over `dt`.
    pub fn integrate_measurement(
        &mut self,
        gyro: &Vector3<f64>,
        accel: &Vector3<f64>,
        dt: f64,
        noise: &ImuNoiseModel,
    ) {
        let acc = accel - self.accel_bias;
        let rate = (gyro - self.gyro_bias_ref) * dt;
        let dr = exp_so3(&rate);
        let jr = right_jacobian_so3(&rate);
        let r = *self.delta_r.matrix();
        let acc_hat = hat(&acc);
        let dt2 = dt * dt;

        let mut a = Matrix9::identity();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&dr.matrix().transpose());
        a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-r * acc_hat * dt));
        a.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-0.5 * r * acc_hat * dt2));
        a.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Matrix3::identity() * dt));
        let mut b = Matrix9x6::zeros();
        b.fixed_view_mut::<3, 3>(0, 0).copy_from(&(jr * dt));
        b.fixed_view_mut::<3, 3>(3, 3).copy_from(&(r * dt));
        b.fixed_view_mut::<3, 3>(6, 3).copy_from(&(0.5 * r * dt2));
        let cov = a * self.cov * a.transpose() + b * noise.stacked() * b.transpose();
        self.cov = 0.5 * (cov + cov.transpose());

        self.d_p_d_bg += self.d_v_d_bg * dt - 0.5 * r * acc_hat * self.d_r_d_bg * dt2;
        self.d_v_d_bg -= r * acc_hat * self.d_r_d_bg * dt;
        self.d_r_d_bg = dr.matrix().transpose() * self.d_r_d_bg - jr * dt;

        self.delta_p += self.delta_v * dt + 0.5 * r * acc * dt2;
        self.delta_v += r * acc * dt;
        self.delta_r = (self.delta_r * dr).renormalized_if_needed();
        self.delta_t += dt;
    }

    /// Rotation increment corrected to first order for a new gyroscope bias.
    pub fn corrected_delta_r(&self, gyro_bias: &Vector3<f64>) -> Rotation {
        let db = gyro_bias - self.gyro_bias_ref;
        self.delta_r * exp_so3(&(self.d_r_d_bg * db))
    }

    pub fn corrected_delta_v(&self, gyro_bias: &Vector3<f64>) -> Vector3<f64> {
        self.delta_v + self.d_v_d_bg * (gyro_bias - self.gyro_bias_ref)
    }

    pub fn corrected_delta_p(&self, gyro_bias: &Vector3<f64>) -> Vector3<f64> {
        self.delta_p + self.d_p_d_bg * (gyro_bias - self.gyro_bias_ref)
    }

    pub fn cov_rotation(&self) -> Matrix3<f64> {
        self.cov.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn cov_velocity(&self) -> Matrix3<f64> {
        self.cov.fixed_view::<3, 3>(3, 3).into_owned()
    }

    pub fn cov_position(&self) -> Matrix3<f64> {
        self.cov.fixed_view::<3, 3>(6, 6).into_owned()
    }
}

trait RenormalizeIfNeeded {
    fn renormalized_if_needed(self) -> Self;
}

impl RenormalizeIfNeeded for Rotation {
    fn renormalized_if_needed(self) -> Self {
        let m = self.matrix();
        if (m.transpose() * m - Matrix3::identity()).amax() > 1e-12 {
            self.renormalized()
        } else {
            self
        }
    }
}

fn check_monotonic(samples: &[ImuSample]) -> Result<(), PreintegrationError> {
    for (index, pair) in samples.windows(2).enumerate() {
        if pair[1].timestamp <= pair[0].timestamp {
            return Err(PreintegrationError::NonMonotonicTimestamps {
                index: index + 1,
                previous: pair[0].timestamp,
                current: pair[1].timestamp,
            });
        }
    }
    Ok(())
}

/// Integrates `samples`; each sample covers the interval up to the next one and
/// the trailing sample reuses the previous interval.
pub fn integrate(
    samples: &[ImuSample],
    noise: &ImuNoiseModel,
    gyro_bias: &Vector3<f64>,
    accel_bias: &Vector3<f64>,
) -> Result<PreintegratedImu, PreintegrationError> {
    match samples.len() {
        0 => return Err(PreintegrationError::EmptyStream),
        1 => return Err(PreintegrationError::UndefinedInterval),
        _ => {}
    }
    check_monotonic(samples)?;
    let mut pre = PreintegratedImu::new(*gyro_bias, *accel_bias);
    let mut last_dt = 0.0;
    for (k, s) in samples.iter().enumerate() {
        let dt = match samples.get(k + 1) {
            Some(next) => next.timestamp - s.timestamp,
            None => last_dt,
        };
        pre.integrate_measurement(&s.gyro, &s.accel, dt, noise);
        last_dt = dt;
    }
    Ok(pre)
}

/// Integrates the samples covering `[t_start, t_end)`; the last sample is held
/// until `t_end`. Samples must lie in `[t_start, t_end)` with the first at `t_start`.
pub fn integrate_between(
    samples: &[ImuSample],
    t_end: f64,
    noise: &ImuNoiseModel,
    gyro_bias: &Vector3<f64>,
    accel_bias: &Vector3<f64>,
) -> Result<PreintegratedImu, PreintegrationError> {
    let last = samples.last().ok_or(PreintegrationError::EmptyStream)?;
    check_monotonic(samples)?;
    if t_end <= last.timestamp {
        return Err(PreintegrationError::NonPositiveInterval(t_end - last.timestamp));
    }
    let mut pre = PreintegratedImu::new(*gyro_bias, *accel_bias);
    for (k, s) in samples.iter().enumerate() {
        let next = samples.get(k + 1).map_or(t_end, |n| n.timestamp);
        pre.integrate_measurement(&s.gyro, &s.accel, next - s.timestamp, noise);
    }
    Ok(pre)
}

/// Gravity implied by a velocity change and an increment:
/// `g* = (v_j − v_i)/Δt − R_i·Δv_ij/Δt`.
pub fn gravity_from_increment(
    pre: &PreintegratedImu,
    r_i: &Rotation,
    v_i: &Vector3<f64>,
    v_j: &Vector3<f64>,
) -> Vector3<f64> {
    let dt = pre.delta_t;
    (v_j - v_i) / dt - r_i.matrix() * pre.delta_v / dt
}
