//! Synthetic trajectories with analytic rates and accelerations, plus the
//! sensor streams they induce.
//!
//! Truth is propagated with the same zero-order-hold recurrence the
//! preintegration uses, so noise-free streams reproduce the true increments
//! to rounding error.

use crate::manifold::{exp_so3, Pose, Rotation};
use crate::preintegration::ImuSample;
use crate::residuals::{GnssMeasurement, GRAVITY_MAGNITUDE};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("trajectory lengths differ: {estimated} estimated vs {truth} true")]
    LengthMismatch { estimated: usize, truth: usize },
    #[error("trajectory is empty")]
    Empty,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Horizontal circle at constant speed; body rate constant.
    ConstantRateArc { speed: f64, body_rate: [f64; 3] },
    /// Lissajous figure-eight with gentle vertical motion and an
    /// independent oscillating body rate.
    FigureEight { half_width: f64, half_height: f64, period: f64 },
    /// Constant velocity, constant attitude.
    StraightLine { velocity: [f64; 3] },
    /// Straight constant-speed leg followed by weaving turns.
    Piecewise { speed: f64, straight_duration: f64, turn_rate: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrajectoryModel {
    pub kind: TrajectoryKind,
    pub duration: f64,
    /// Initial attitude as a rotation vector.
    pub initial_attitude: [f64; 3],
}

impl TrajectoryModel {
    pub fn figure_eight(duration: f64) -> Self {
        TrajectoryModel {
            kind: TrajectoryKind::FigureEight { half_width: 10.0, half_height: 6.0, period: 20.0 },
            duration,
            initial_attitude: [0.05, -0.03, 0.4],
        }
    }

    pub fn straight_line(duration: f64) -> Self {
        TrajectoryModel {
            kind: TrajectoryKind::StraightLine { velocity: [1.5, 0.5, 0.0] },
            duration,
            initial_attitude: [0.0, 0.0, 0.3],
        }
    }

    pub fn constant_rate_arc(body_rate: [f64; 3], duration: f64) -> Self {
        TrajectoryModel {
            kind: TrajectoryKind::ConstantRateArc { speed: 2.0, body_rate },
            duration,
            initial_attitude: [0.0; 3],
        }
    }

    pub fn urban(duration: f64) -> Self {
        TrajectoryModel {
            kind: TrajectoryKind::Piecewise { speed: 2.0, straight_duration: 4.0, turn_rate: 0.6 },
            duration,
            initial_attitude: [0.02, 0.01, 0.2],
        }
    }

    /// Body angular rate at `t`.
    pub fn body_rate(&self, t: f64) -> Vector3<f64> {
        match self.kind {
            TrajectoryKind::ConstantRateArc { body_rate, .. } => Vector3::from(body_rate),
            TrajectoryKind::StraightLine { .. } => Vector3::zeros(),
            TrajectoryKind::FigureEight { .. } => Vector3::new(
                0.4 * (1.3 * t).sin(),
                0.3 * (0.9 * t + 0.5).cos(),
                0.2 + 0.35 * (0.6 * t).sin(),
            ),
            TrajectoryKind::Piecewise { straight_duration, turn_rate, .. } => {
                if t < straight_duration {
                    Vector3::zeros()
                } else {
                    let s = t - straight_duration;
                    let ramp = 1.0 - (-s).exp();
                    Vector3::new(
                        0.15 * ramp * (2.1 * s).sin(),
                        0.12 * ramp * (1.7 * s).cos(),
                        turn_rate * ramp * (0.8 * s).sin(),
                    )
                }
            }
        }
    }

    /// World position and velocity at `t = 0`.
    pub fn initial_state(&self) -> (Vector3<f64>, Vector3<f64>) {
        match self.kind {
            TrajectoryKind::StraightLine { velocity } => (Vector3::zeros(), Vector3::from(velocity)),
            TrajectoryKind::ConstantRateArc { speed, .. } | TrajectoryKind::Piecewise { speed, .. } => {
                (Vector3::zeros(), Vector3::new(speed, 0.0, 0.0))
            }
            TrajectoryKind::FigureEight { half_width: a, half_height: b, period } => {
                let w = 2.0 * PI / period;
                (Vector3::zeros(), Vector3::new(a * w, 2.0 * b * w, 0.25 * w))
            }
        }
    }

    /// World acceleration at `t`.
    pub fn acceleration(&self, t: f64) -> Vector3<f64> {
        match self.kind {
            TrajectoryKind::StraightLine { .. } => Vector3::zeros(),
            TrajectoryKind::ConstantRateArc { speed, body_rate } => {
                // Heading turns at the yaw component of the body rate.
                let w = body_rate[2];
                let th = w * t;
                Vector3::new(-speed * w * th.sin(), speed * w * th.cos(), 0.0)
            }
            TrajectoryKind::FigureEight { half_width: a, half_height: b, period } => {
                let w = 2.0 * PI / period;
                Vector3::new(
                    -a * w * w * (w * t).sin(),
                    -4.0 * b * w * w * (2.0 * w * t).sin(),
                    -0.125 * w * w * (0.5 * w * t).sin(),
                )
            }
            TrajectoryKind::Piecewise { speed, straight_duration, turn_rate } => {
                if t < straight_duration {
                    return Vector3::zeros();
                }
                // Heading ψ(s) = (c/ω)(1 − cos ωs) at constant speed.
                let s = t - straight_duration;
                let (c, w) = (turn_rate, 0.8);
                let psi = c / w * (1.0 - (w * s).cos());
                let dpsi = c * (w * s).sin();
                Vector3::new(-speed * psi.sin() * dpsi, speed * psi.cos() * dpsi, 0.0)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SensorConfig {
    pub imu_rate: f64,
    pub gnss_rate: f64,
    /// Per-axis standard deviation of each gyroscope sample (rad/s).
    pub gyro_noise_sigma: f64,
    /// Per-axis standard deviation of each accelerometer sample (m/s²).
    pub accel_noise_sigma: f64,
    pub gnss_noise_sigma: f64,
    pub gyro_bias_true: [f64; 3],
    pub rng_seed: u64,
    /// True GNSS-frame transform applied to positions: yaw (rad) and translation (m).
    pub gnss_frame_yaw: f64,
    pub gnss_frame_translation: [f64; 3],
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            imu_rate: 200.0,
            gnss_rate: 5.0,
            gyro_noise_sigma: 1.7e-3,
            accel_noise_sigma: 2.0e-2,
            gnss_noise_sigma: 0.2,
            gyro_bias_true: [0.01, -0.015, 0.008],
            rng_seed: 0,
            gnss_frame_yaw: 0.0,
            gnss_frame_translation: [0.0; 3],
        }
    }
}

impl SensorConfig {
    pub fn noiseless() -> Self {
        SensorConfig { gyro_noise_sigma: 0.0, accel_noise_sigma: 0.0, gnss_noise_sigma: 0.0, ..Default::default() }
    }

    pub fn gnss_frame(&self) -> Pose {
        Pose::new(exp_so3(&Vector3::new(0.0, 0.0, self.gnss_frame_yaw)), Vector3::from(self.gnss_frame_translation))
    }

    fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::InvalidConfig(m.into()));
        if !(self.imu_rate > 0.0 && self.gnss_rate > 0.0) {
            return bad("rates must be positive");
        }
        if self.gnss_rate > self.imu_rate {
            return bad("GNSS rate exceeds IMU rate");
        }
        let sigmas = [self.gyro_noise_sigma, self.accel_noise_sigma, self.gnss_noise_sigma];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("noise sigmas must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthSample {
    pub timestamp: f64,
    pub rotation: Rotation,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub struct SimulatedRun {
    /// One state per IMU sample.
    pub truth: Vec<TruthSample>,
    pub imu: Vec<ImuSample>,
    pub gnss: Vec<GnssMeasurement>,
    /// Index into `truth` of each GNSS epoch.
    pub gnss_truth_index: Vec<usize>,
    pub gnss_frame: Pose,
    pub gravity: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
}

impl SimulatedRun {
    /// True state at each GNSS epoch.
    pub fn epoch_truth(&self) -> Vec<TruthSample> {
        self.gnss_truth_index.iter().map(|&i| self.truth[i]).collect()
    }

    /// True epoch positions expressed in the GNSS frame.
    pub fn epoch_positions_world(&self) -> Vec<Vector3<f64>> {
        self.epoch_truth().iter().map(|s| self.gnss_frame.transform_point(&s.position)).collect()
    }
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("validated sigma")
}

fn noise3(rng: &mut ChaCha8Rng, d: &Normal<f64>) -> Vector3<f64> {
    Vector3::new(d.sample(rng), d.sample(rng), d.sample(rng))
}

/// Generates ground truth and sensor streams. Noise is drawn from ChaCha8
/// streams seeded with `rng_seed` (IMU) and `rng_seed + 1` (GNSS) through
/// the Ziggurat normal sampler of `rand_distr`.
pub fn generate(model: &TrajectoryModel, config: &SensorConfig) -> Result<SimulatedRun, SimulationError> {
    config.validate()?;
    if !(model.duration > 0.0) {
        return Err(SimulationError::InvalidConfig("duration must be positive".into()));
    }
    let dt = 1.0 / config.imu_rate;
    let steps = (model.duration * config.imu_rate).round() as usize;
    let stride = ((config.imu_rate / config.gnss_rate).round() as usize).max(1);
    let gravity = Vector3::new(0.0, 0.0, -GRAVITY_MAGNITUDE);
    let bias = Vector3::from(config.gyro_bias_true);
    let frame = config.gnss_frame();

    let mut imu_rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut gnss_rng = ChaCha8Rng::seed_from_u64(config.rng_seed.wrapping_add(1));
    let (gn, an, pn) =
        (normal(config.gyro_noise_sigma), normal(config.accel_noise_sigma), normal(config.gnss_noise_sigma));

    let (p0, v0) = model.initial_state();
    let mut rot = exp_so3(&Vector3::from(model.initial_attitude));
    let (mut p, mut v) = (p0, v0);
    let mut truth = Vec::with_capacity(steps + 1);
    let mut imu = Vec::with_capacity(steps + 1);
    let mut gnss = Vec::new();
    let mut gnss_truth_index = Vec::new();
    let gnss_cov = nalgebra::Matrix3::identity() * config.gnss_noise_sigma.powi(2);

    for m in 0..=steps {
        let t = m as f64 * dt;
        let w = model.body_rate(t);
        let a = model.acceleration(t);
        truth.push(TruthSample { timestamp: t, rotation: rot, position: p, velocity: v, angular_velocity: w });
        let accel = rot.transpose().matrix() * (a - gravity) + noise3(&mut imu_rng, &an);
        let gyro = w + bias + noise3(&mut imu_rng, &gn);
        imu.push(ImuSample { timestamp: t, gyro, accel });
        if m % stride == 0 {
            let pos = frame.transform_point(&p) + noise3(&mut gnss_rng, &pn);
            gnss.push(GnssMeasurement { timestamp: t, position: pos, cov: gnss_cov });
            gnss_truth_index.push(m);
        }
        p += v * dt + 0.5 * a * dt * dt;
        v += a * dt;
        rot = rot * exp_so3(&(w * dt));
    }
    Ok(SimulatedRun { truth, imu, gnss, gnss_truth_index, gnss_frame: frame, gravity, gyro_bias: bias })
}

/// Root-mean-square Euclidean position error, associated by index.
pub fn ate_rmse(estimated: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<f64, SimulationError> {
    if estimated.len() != truth.len() {
        return Err(SimulationError::LengthMismatch { estimated: estimated.len(), truth: truth.len() });
    }
    if estimated.is_empty() {
        return Err(SimulationError::Empty);
    }
    let sum: f64 = estimated.iter().zip(truth).map(|(e, t)| (e - t).norm_squared()).sum();
    Ok((sum / estimated.len() as f64).sqrt())
}
