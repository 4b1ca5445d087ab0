#![allow(dead_code)]

use gnss_init::manifold::{s2_boxplus, GravityDirection, Pose, TangentS2};
use gnss_init::preintegration::{integrate_between, ImuNoiseModel};
use gnss_init::residuals::{
    assemble_cost, consecutive_pairs, numerical_jacobian, GnssMeasurement, InitState, KeyframeState, MeasurementSet,
    Phase, ResidualKind, StateVar,
};
use gnss_init::simulation::{generate, SensorConfig, SimulatedRun, TrajectoryModel};
use nalgebra::{DVector, Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A noise-free simulated problem with its exact solution.
pub struct TruthProblem {
    pub sim: SimulatedRun,
    pub truth: InitState,
    pub meas: MeasurementSet,
    pub extrinsic: Pose,
}

/// Keyframes at the GNSS epochs of `model`, preintegrated at the true bias
/// so the first-order bias correction is exact at the solution. GNSS fixes
/// are exact but carry an isotropic 0.2 m covariance for weighting.
pub fn truth_problem(model: &TrajectoryModel) -> TruthProblem {
    let sensors = SensorConfig::noiseless();
    let sim = generate(model, &sensors).unwrap();
    let noise = ImuNoiseModel::isotropic(1.7e-3, 2.0e-2);
    let epochs = sim.epoch_truth();
    let preintegrations = sim
        .gnss_truth_index
        .windows(2)
        .map(|w| {
            integrate_between(&sim.imu[w[0]..w[1]], sim.imu[w[1]].timestamp, &noise, &sim.gyro_bias, &Vector3::zeros())
                .unwrap()
        })
        .collect();
    let meas = MeasurementSet {
        preintegrations,
        gnss: sim.gnss.iter().map(|m| GnssMeasurement { cov: Matrix3::identity() * 0.04, ..*m }).collect(),
        keyframe_gyro: sim.gnss_truth_index.iter().map(|&i| sim.imu[i].gyro).collect(),
        gyro_cov: noise.gyro_cov,
    };
    let keyframes = epochs
        .iter()
        .map(|t| KeyframeState {
            rotation: t.rotation,
            position: t.position,
            angular_velocity: t.angular_velocity,
            velocity: t.velocity,
        })
        .collect();
    let truth = InitState::new(keyframes, sim.gyro_bias, GravityDirection::from_vector(sim.gravity).unwrap());
    TruthProblem { extrinsic: sim.gnss_frame, sim, truth, meas }
}

pub fn random_vec3<R: Rng>(rng: &mut R, scale: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-scale..scale))
}

/// Every keyframe after the first moved by up to `rad` radians and `m`
/// metres (and m/s), bias by `rad / 10`, gravity direction by `rad / 10`.
pub fn perturb<R: Rng>(state: &InitState, rng: &mut R, rad: f64, m: f64) -> InitState {
    let mut s = state.clone();
    for kf in s.keyframes.iter_mut().skip(1) {
        kf.rotation = kf.rotation.retract(&random_vec3(rng, rad));
        kf.position += random_vec3(rng, m);
        kf.velocity += random_vec3(rng, m);
        kf.angular_velocity += random_vec3(rng, rad);
    }
    s.gyro_bias += random_vec3(rng, rad / 10.0);
    let d = random_vec3(rng, rad / 10.0);
    s.gravity_dir = s.gravity_dir.boxplus(&nalgebra::Vector2::new(d.x, d.y));
    s
}

/// Largest deviation between two states over every estimated quantity.
pub fn state_distance(a: &InitState, b: &InitState) -> f64 {
    let mut d: f64 = (a.gyro_bias - b.gyro_bias).amax();
    d = d.max((a.gravity_dir.vector() - b.gravity_dir.vector()).amax());
    for (x, y) in a.keyframes.iter().zip(&b.keyframes) {
        d = d.max((x.rotation.transpose() * y.rotation).log().amax());
        d = d.max((x.position - y.position).amax());
        d = d.max((x.velocity - y.velocity).amax());
        d = d.max((x.angular_velocity - y.angular_velocity).amax());
    }
    d
}

/// A noisy short figure-eight window with every estimated quantity pushed
/// away from the truth, so Jacobians are checked off the solution.
pub fn random_problem(seed: u64, duration: f64) -> (InitState, MeasurementSet, Pose) {
    let cfg = SensorConfig { rng_seed: seed, ..Default::default() };
    let sim = generate(&TrajectoryModel::figure_eight(duration), &cfg).unwrap();
    let noise = ImuNoiseModel::isotropic(cfg.gyro_noise_sigma, cfg.accel_noise_sigma);
    let truth = sim.epoch_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let keyframes: Vec<KeyframeState> = truth
        .iter()
        .map(|t| KeyframeState {
            rotation: t.rotation.retract(&random_vec3(&mut rng, 0.2)),
            position: t.position + random_vec3(&mut rng, 0.5),
            angular_velocity: t.angular_velocity + random_vec3(&mut rng, 0.2),
            velocity: t.velocity + random_vec3(&mut rng, 0.5),
        })
        .collect();
    let bias = random_vec3(&mut rng, 0.05);
    let tilt = random_vec3(&mut rng, 0.3);
    let gdir = s2_boxplus(&GravityDirection::down(), &TangentS2::new(tilt.x, tilt.y));
    let pre = truth
        .windows(2)
        .map(|w| {
            let a = sim.imu.partition_point(|s| s.timestamp < w[0].timestamp);
            let b = sim.imu.partition_point(|s| s.timestamp < w[1].timestamp);
            integrate_between(&sim.imu[a..b], w[1].timestamp, &noise, &Vector3::zeros(), &Vector3::zeros()).unwrap()
        })
        .collect();
    let meas = MeasurementSet {
        preintegrations: pre,
        gnss: sim.gnss.clone(),
        keyframe_gyro: truth.iter().map(|t| t.angular_velocity + random_vec3(&mut rng, 0.01)).collect(),
        gyro_cov: Matrix3::identity() * 1e-4,
    };
    let xi = random_vec3(&mut rng, 0.3);
    let ext = Pose::identity().retract(&Vector6::new(1.0, 2.0, -1.0, xi.x, xi.y, xi.z));
    (InitState::new(keyframes, bias, gdir), meas, ext)
}

/// Outcome of comparing one residual block's Jacobians with 5-point central
/// differences.
pub struct BlockAudit {
    pub kind: ResidualKind,
    /// Largest `error / max(1e-5, 1e-4·‖numeric‖∞)` over the listed variables.
    pub worst_ratio: f64,
    /// Variables the block depends on numerically but does not list.
    pub unlisted: Vec<StateVar>,
}

pub fn audit_jacobians(state: &InitState, meas: &MeasurementSet, ext: &Pose, phase: Phase) -> Vec<BlockAudit> {
    let n = state.keyframes.len();
    let pairs = consecutive_pairs(n);
    let blocks = assemble_cost(state, meas, phase, &pairs, ext).unwrap();
    let mut vars = vec![StateVar::GyroBias, StateVar::Gravity, StateVar::Extrinsic];
    for k in 0..n {
        vars.extend([StateVar::Rotation(k), StateVar::Position(k), StateVar::AngularVelocity(k), StateVar::Velocity(k)]);
    }
    blocks
        .iter()
        .enumerate()
        .map(|(bi, blk)| {
            let f = |s: &InitState, t: &Pose| -> DVector<f64> {
                assemble_cost(s, meas, phase, &pairs, t).unwrap()[bi].value.clone()
            };
            let unlisted = vars
                .iter()
                .copied()
                .filter(|&v| blk.jacobian(v).is_none() && numerical_jacobian(f, state, ext, v, 1e-5).amax() >= 1e-7)
                .collect();
            let worst_ratio = blk
                .jacobians
                .iter()
                .map(|(var, analytic)| {
                    let num = numerical_jacobian(f, state, ext, *var, 1e-5);
                    (analytic - &num).amax() / 1e-5f64.max(1e-4 * num.amax())
                })
                .fold(0.0, f64::max);
            BlockAudit { kind: blk.kind, worst_ratio, unlisted }
        })
        .collect()
}
