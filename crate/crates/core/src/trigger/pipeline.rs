//! Incremental two-stage initialization: relative GNSS residuals until the
//! trigger fires, then global residuals with the extrinsic transform.

use super::{extrinsic_hessian, TriggerError, TriggerTrace, DEFAULT_THRESHOLD};
use crate::manifold::{GravityDirection, Pose, Rotation};
use crate::preintegration::{integrate_between, ImuNoiseModel, ImuSample, PreintegratedImu, PreintegrationError};
use crate::residuals::{assemble_cost, consecutive_pairs, GnssMeasurement, InitState, KeyframeState, MeasurementSet, Phase};
use crate::solver::{gauge_fix, solve, LayoutOptions, ParameterLayout, SolveOptions, SolveReport, SolverError};
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("need at least 2 GNSS epochs, got {0}")]
    TooFewEpochs(usize),
    #[error("no IMU samples cover epoch interval [{0}, {1})")]
    ImuGap(f64, f64),
    #[error(transparent)]
    Preintegration(#[from] PreintegrationError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Trigger(#[from] TriggerError),
}

/// When the global residuals become active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    /// At the epoch where the conditioning criterion fires.
    Trigger,
    /// After this many GNSS epochs have been accumulated (0 = from the start).
    AfterEpochs(usize),
}

/// Known initial pose holding the gauge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialPose {
    pub rotation: Rotation,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub threshold: f64,
    pub min_epochs: usize,
    pub activation: Activation,
    /// Noise assumed by the estimator (not necessarily the simulated one).
    pub imu_noise: ImuNoiseModel,
    /// GNSS standard deviation assumed by the estimator; `None` keeps the
    /// covariances carried by the measurements.
    pub gnss_sigma: Option<f64>,
    pub solver: SolveOptions,
    pub initial: InitialPose,
    pub max_epochs: Option<usize>,
}

impl PipelineConfig {
    pub fn new(initial: InitialPose) -> Self {
        PipelineConfig {
            threshold: DEFAULT_THRESHOLD,
            min_epochs: 3,
            activation: Activation::Trigger,
            imu_noise: ImuNoiseModel::isotropic(1.7e-3, 2.0e-2),
            gnss_sigma: Some(0.2),
            solver: SolveOptions::default(),
            initial,
            max_epochs: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TwoStageResult {
    pub state: InitState,
    pub extrinsic: Pose,
    pub trace: TriggerTrace,
    /// Last relative-phase and last global-phase solve.
    pub stage1_report: Option<SolveReport>,
    pub stage2_report: Option<SolveReport>,
    /// Epoch count at which the global residuals were first active.
    pub activation_epoch: Option<usize>,
    /// The trigger was requested but never fired.
    pub never_triggered: bool,
    /// Estimate of the newest keyframe in the GNSS frame, taken right after
    /// each epoch's solve.
    pub online_positions: Vec<Vector3<f64>>,
    pub epoch_timestamps: Vec<f64>,
    /// LM iterations summed over every solve of the run.
    pub total_iterations: usize,
}

impl TwoStageResult {
    /// Final keyframe positions mapped into the GNSS frame.
    pub fn final_positions(&self) -> Vec<Vector3<f64>> {
        self.state.keyframes.iter().map(|k| self.extrinsic.transform_point(&k.position)).collect()
    }
}

/// Samples covering `[t0, t1)`, with the last earlier sample held at `t0`
/// when the stream does not start exactly there.
fn interval_samples(imu: &[ImuSample], t0: f64, t1: f64) -> Result<Vec<ImuSample>, PipelineError> {
    let a = imu.partition_point(|s| s.timestamp < t0);
    let b = imu.partition_point(|s| s.timestamp < t1);
    let mut out = Vec::with_capacity(b - a + 1);
    if imu.get(a).is_none_or(|s| s.timestamp > t0) {
        let held = a.checked_sub(1).map(|i| imu[i]).ok_or(PipelineError::ImuGap(t0, t1))?;
        out.push(ImuSample { timestamp: t0, ..held });
    }
    out.extend_from_slice(&imu[a..b]);
    if out.is_empty() {
        return Err(PipelineError::ImuGap(t0, t1));
    }
    Ok(out)
}

fn gyro_at(imu: &[ImuSample], t: f64) -> Vector3<f64> {
    let i = imu.partition_point(|s| s.timestamp < t);
    let candidates = [i.checked_sub(1), Some(i)];
    candidates
        .iter()
        .flatten()
        .filter_map(|&j| imu.get(j))
        .min_by(|a, b| (a.timestamp - t).abs().total_cmp(&(b.timestamp - t).abs()))
        .map(|s| s.gyro)
        .unwrap_or_else(Vector3::zeros)
}

fn propagate(prev: &KeyframeState, pre: &PreintegratedImu, bias: &Vector3<f64>, g: &Vector3<f64>) -> KeyframeState {
    let dt = pre.delta_t;
    let r = prev.rotation.matrix();
    KeyframeState {
        rotation: prev.rotation * pre.corrected_delta_r(bias),
        position: prev.position + prev.velocity * dt + 0.5 * g * dt * dt + r * pre.corrected_delta_p(bias),
        angular_velocity: Vector3::zeros(),
        velocity: prev.velocity + g * dt + r * pre.corrected_delta_v(bias),
    }
}

/// Runs the incremental initialization over synchronized IMU and GNSS streams.
///
/// Every GNSS epoch adds a keyframe and the whole window is re-solved with
/// the first keyframe held at the known initial pose. Relative-phase solves
/// start from the zero-bias dead-reckoned chain, since short windows fit the
/// GNSS noise with large biases that make poor starting points later on;
/// global-phase solves continue from the previous estimate. The trigger
/// Hessian is evaluated on the relative-phase solution at identity extrinsic.
pub fn run_two_stage(
    imu: &[ImuSample],
    gnss: &[GnssMeasurement],
    config: &PipelineConfig,
) -> Result<TwoStageResult, PipelineError> {
    let n_total = config.max_epochs.map_or(gnss.len(), |m| m.min(gnss.len()));
    if n_total < 2 {
        return Err(PipelineError::TooFewEpochs(n_total));
    }
    let gnss: Vec<GnssMeasurement> = gnss[..n_total]
        .iter()
        .map(|m| match config.gnss_sigma {
            Some(s) => GnssMeasurement { cov: Matrix3::identity() * s * s, ..*m },
            None => *m,
        })
        .collect();

    let init = &config.initial;
    let first = KeyframeState {
        rotation: init.rotation,
        position: init.position,
        angular_velocity: gyro_at(imu, gnss[0].timestamp),
        velocity: init.velocity,
    };
    // Dead-reckoned chain at zero bias; every relative-phase solve starts here.
    let mut seed = InitState::new(vec![first], Vector3::zeros(), GravityDirection::down());
    let mut state = seed.clone();
    let mut meas = MeasurementSet {
        preintegrations: Vec::new(),
        gnss: vec![gnss[0]],
        keyframe_gyro: vec![gyro_at(imu, gnss[0].timestamp)],
        gyro_cov: config.imu_noise.gyro_cov,
    };
    let mut extrinsic = Pose::identity();
    let mut trace = TriggerTrace::new(config.threshold).with_min_epochs(config.min_epochs);
    let mut global = matches!(config.activation, Activation::AfterEpochs(0));
    let mut activation_epoch = global.then_some(1);
    let mut stage1 = None;
    let mut stage2 = None;
    let mut online = vec![extrinsic.transform_point(&first.position)];
    let mut stamps = vec![gnss[0].timestamp];
    let mut total_iterations = 0;

    for n in 2..=n_total {
        let (t0, t1) = (gnss[n - 2].timestamp, gnss[n - 1].timestamp);
        let samples = interval_samples(imu, t0, t1)?;
        let pre = integrate_between(&samples, t1, &config.imu_noise, &Vector3::zeros(), &Vector3::zeros())?;
        if n == 2 {
            // ĝ seed: g* with the unknown velocity change neglected.
            let g_star = -(init.rotation.matrix() * pre.delta_v) / pre.delta_t;
            seed.gravity_dir = GravityDirection::from_vector(g_star).unwrap_or_else(GravityDirection::down);
            state.gravity_dir = seed.gravity_dir;
        }
        let gyro = gyro_at(imu, t1);
        for s in [&mut seed, &mut state] {
            let mut kf = propagate(s.keyframes.last().expect("non-empty"), &pre, &s.gyro_bias, &s.gravity());
            kf.angular_velocity = gyro - s.gyro_bias;
            s.keyframes.push(kf);
        }
        meas.preintegrations.push(pre);
        meas.gnss.push(gnss[n - 1]);
        meas.keyframe_gyro.push(gyro);

        if let Activation::AfterEpochs(a) = config.activation {
            if !global && n > a {
                global = true;
                activation_epoch = Some(n);
            }
        }
        if !global {
            let (s, report) = solve_phase(&seed, &meas, Phase::Relative, &Pose::identity(), &config.solver)?;
            state = s;
            total_iterations += report.iterations;
            stage1 = Some(report);
        }
        {
            let at = if global { extrinsic } else { Pose::identity() };
            let h = extrinsic_hessian(&meas.gnss, &state, &at)?;
            trace.update_at(n, &h);
            if trace.k_star.is_some() && config.activation == Activation::Trigger && !global {
                global = true;
                activation_epoch = Some(n);
            }
        }
        if global {
            let (s, t, report) = solve_global(&state, &meas, &extrinsic, &config.solver)?;
            state = s;
            extrinsic = t;
            total_iterations += report.iterations;
            stage2 = Some(report);
        }
        online.push(extrinsic.transform_point(&state.keyframes[n - 1].position));
        stamps.push(t1);
    }

    Ok(TwoStageResult {
        never_triggered: config.activation == Activation::Trigger && trace.k_star.is_none(),
        state,
        extrinsic,
        trace,
        stage1_report: stage1,
        stage2_report: stage2,
        activation_epoch,
        online_positions: online,
        epoch_timestamps: stamps,
        total_iterations,
    })
}

fn solve_phase(
    state: &InitState,
    meas: &MeasurementSet,
    phase: Phase,
    extrinsic: &Pose,
    opts: &SolveOptions,
) -> Result<(InitState, SolveReport), PipelineError> {
    let n = state.keyframes.len();
    let layout = gauge_fix(&ParameterLayout::for_keyframes(n, LayoutOptions::default()), 0);
    let pairs = consecutive_pairs(n);
    let (s, _, report) = solve(|s, t| assemble_cost(s, meas, phase, &pairs, t), &layout, state, extrinsic, opts)?;
    Ok((s, report))
}

fn solve_global(
    state: &InitState,
    meas: &MeasurementSet,
    extrinsic: &Pose,
    opts: &SolveOptions,
) -> Result<(InitState, Pose, SolveReport), PipelineError> {
    let n = state.keyframes.len();
    let layout = gauge_fix(
        &ParameterLayout::for_keyframes(n, LayoutOptions { angular_velocity: true, extrinsic: true }),
        0,
    );
    Ok(solve(|s, t| assemble_cost(s, meas, Phase::Global, &[], t), &layout, state, extrinsic, opts)?)
}
