//! C interface to the two-stage initializer.
//!
//! A caller creates a session, feeds IMU samples and GNSS fixes (or loads
//! them from CSV), sets the known initial pose and runs the initializer,
//! which yields a result handle. Every fallible call returns a
//! [`GnssInitStatus`]; the message of the last failure on the calling thread
//! is available from [`gnss_init_last_error`]. Handles are owned by the
//! caller and released with the matching `_free` function.

use gnss_init::cli::Scenario;
use gnss_init::dataset_io::{DatasetManifest, GnssSynthesis, TimeUnit, DEFAULT_GNSS_RATE};
use gnss_init::manifold::{Pose, Rotation};
use gnss_init::preintegration::{ImuNoiseModel, ImuSample};
use gnss_init::residuals::{GnssMeasurement, InitState};
use gnss_init::trigger::{run_two_stage, Activation, InitialPose, PipelineConfig, DEFAULT_THRESHOLD};
use libc::{c_char, c_double, c_int, size_t};
use nalgebra::{Matrix3, Vector3};
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

/// Status code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GnssInitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    /// The estimation failed (too few epochs, IMU gap, solver failure).
    Estimation = 5,
    /// The initial pose was not set before running.
    MissingInitialPose = 6,
    Panic = 99,
}

/// Measurements and settings of one initialization problem.
pub struct GnssInitSession {
    imu: Vec<ImuSample>,
    gnss: Vec<GnssMeasurement>,
    initial: Option<InitialPose>,
    threshold: f64,
    activation: Activation,
    noise: ImuNoiseModel,
}

/// Outcome of [`gnss_init_session_run`].
pub struct GnssInitResult {
    state: InitState,
    extrinsic: Pose,
    k_star: Option<usize>,
    activation_epoch: Option<usize>,
    positions: Vec<Vector3<f64>>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(GnssInitStatus, String);

fn fail<T>(status: GnssInitStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

impl From<gnss_init::Error> for Failure {
    fn from(e: gnss_init::Error) -> Self {
        use gnss_init::dataset_io::DatasetError as D;
        let status = match &e {
            gnss_init::Error::Dataset(D::Io { .. }) | gnss_init::Error::Io { .. } => GnssInitStatus::Io,
            gnss_init::Error::Dataset(D::Parse { .. } | D::NonMonotonicTimestamps { .. } | D::Json { .. }) => {
                GnssInitStatus::Parse
            }
            gnss_init::Error::Dataset(_) | gnss_init::Error::Config(_) => GnssInitStatus::InvalidArgument,
            _ => GnssInitStatus::Estimation,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `f`, converting failures and panics into a status and a stored message.
fn guard<F>(f: F) -> GnssInitStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GnssInitStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GnssInitStatus::Panic
        }
    }
}

unsafe fn session<'a>(s: *mut GnssInitSession) -> Result<&'a mut GnssInitSession, Failure> {
    s.as_mut().map_or_else(|| fail(GnssInitStatus::NullPointer, "null session"), Ok)
}

unsafe fn result<'a>(r: *const GnssInitResult) -> Result<&'a GnssInitResult, Failure> {
    r.as_ref().map_or_else(|| fail(GnssInitStatus::NullPointer, "null result"), Ok)
}

unsafe fn vec3(p: *const c_double, what: &str) -> Result<Vector3<f64>, Failure> {
    if p.is_null() {
        return fail(GnssInitStatus::NullPointer, format!("null {what}"));
    }
    let v = Vector3::from_column_slice(std::slice::from_raw_parts(p, 3));
    if v.iter().any(|x| !x.is_finite()) {
        return fail(GnssInitStatus::InvalidArgument, format!("{what} is not finite"));
    }
    Ok(v)
}

unsafe fn out_slice<'a>(p: *mut c_double, len: usize) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return fail(GnssInitStatus::NullPointer, "null output buffer");
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return fail(GnssInitStatus::NullPointer, format!("null {what}"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(GnssInitStatus::InvalidArgument, format!("{what} is not UTF-8")),
    }
}

/// Message of the last failed call on this thread (empty if none). The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gnss_init_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gnss_init_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an empty session with default settings (threshold 1e-2,
/// trigger-based activation).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_session_new(out: *mut *mut GnssInitSession) -> GnssInitStatus {
    guard(|| {
        if out.is_null() {
            return fail(GnssInitStatus::NullPointer, "null output handle");
        }
        let s = GnssInitSession {
            imu: Vec::new(),
            gnss: Vec::new(),
            initial: None,
            threshold: DEFAULT_THRESHOLD,
            activation: Activation::Trigger,
            noise: ImuNoiseModel::isotropic(1.7e-3, 2.0e-2),
        };
        *out = Box::into_raw(Box::new(s));
        Ok(())
    })
}

/// Releases a session; null is ignored.
///
/// # Safety
/// `s` must come from [`gnss_init_session_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_session_free(s: *mut GnssInitSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Appends an IMU sample; timestamps must increase strictly.
///
/// # Safety
/// `s` must be a live session; `gyro` and `accel` must point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_session_add_imu(
    s: *mut GnssInitSession,
    timestamp: c_double,
    gyro: *const c_double,
    accel: *const c_double,
) -> GnssInitStatus {
    guard(|| {
        let s = session(s)?;
        let (gyro, accel) = (vec3(gyro, "gyro")?, vec3(accel, "accel")?);
        if !timestamp.is_finite() || s.imu.last().is_some_and(|l| timestamp <= l.timestamp) {
            return fail(GnssInitStatus::InvalidArgument, format!("IMU timestamp {timestamp} is not increasing"));
        }
        s.imu.push(ImuSample { timestamp, gyro, accel });
        Ok(())
    })
}

/// Appends a GNSS fix with isotropic standard deviation `sigma` (m).
///
/// # Safety
/// `s` must be a live session; `position` must point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_session_add_gnss(
    s: *mut GnssInitSession,
    timestamp: c_double,
    position: *const c_double,
    sigma: c_double,
) -> GnssInitStatus {
    guard(|| {
        let s = session(s)?;
        let position = vec3(position, "position")?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return fail(GnssInitStatus::InvalidArgument, format!("sigma must be positive, got {sigma}"));
        }
        if !timestamp.is_finite() || s.gnss.last().is_some_and(|l| timestamp <= l.timestamp) {
            return fail(GnssInitStatus::InvalidArgument, format!("GNSS timestamp {timestamp} is not increasing"));
        }
        s.gnss.push(GnssMeasurement { timestamp, position, cov: Matrix3::identity() * sigma * sigma });
        Ok(())
    })
}

/// Replaces the session's measurements with CSV files. `gnss_path` may be
/// null, in which case fixes are synthesized from the ground truth with
/// `sigma` and `seed`. The initial pose is taken from the ground truth.
/// `time_unit` is 0 for integer nanoseconds, 1 for seconds.
///
/// # Safety
/// `s` must be a live session; paths must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_session_load_csv(
    s: *mut GnssInitSession,
    imu_path: *const c_char,
    groundtruth_path: *const c_char,
    gnss_path: *const c_char,
    time_unit: c_int,
    sigma: c_double,
    seed: u64,
) -> GnssInitStatus {
    guard(|| {
        let s = session(s)?;
        let time_unit = match time_unit {
            0 => TimeUnit::Ns,
            1 => TimeUnit::S,
            u => return fail(GnssInitStatus::InvalidArgument, format!("unknown time unit {u}")),
        };
        let gnss_path = if gnss_path.is_null() { None } else { Some(path(gnss_path, "GNSS path")?) };
        let manifest = DatasetManifest {
            imu_path: path(imu_path, "IMU path")?,
            groundtruth_path: Some(path(groundtruth_path, "ground-truth path")?),
            synthesis: gnss_path.is_none().then_some(GnssSynthesis { sigma, rate: DEFAULT_GNSS_RATE, seed }),
            gnss_path,
            time_unit,
            gravity_frame: None,
        };
        let sc = Scenario::from_dataset("ffi", &manifest, s.noise)?;
        s.imu = sc.imu;
        s.gnss = sc.gnss;
        s.initial = Some(sc.initial);
        Ok(())
    })
}

/// Sets the known pose of the first epoch: attitude quaternion `(w, x, y, z)`,
/// position and velocity.
///
/// # Safety
/// `s` must be a live session; `quat` must point to 4 doubles, the others to 3.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_session_set_initial_pose(
    s: *mut GnssInitSession,
    quat: *const c_double,
    position: *const c_double,
    velocity: *const c_double,
) -> GnssInitStatus {
    guard(|| {
        let s = session(s)?;
        if quat.is_null() {
            return fail(GnssInitStatus::NullPointer, "null quaternion");
        }
        let q = std::slice::from_raw_parts(quat, 4);
        let norm2: f64 = q.iter().map(|c| c * c).sum();
        if !(norm2.is_finite() && norm2 > 1e-12) {
            return fail(GnssInitStatus::InvalidArgument, "quaternion must be finite and non-zero");
        }
        s.initial = Some(InitialPose {
            rotation: Rotation::from_quaternion(q[0], q[1], q[2], q[3]),
            position: vec3(position, "position")?,
            velocity: vec3(velocity, "velocity")?,
        });
        Ok(())
    })
}

/// Relative-change threshold of the trigger criterion.
///
/// # Safety
/// `s` must be a live session.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_session_set_threshold(s: *mut GnssInitSession, threshold: c_double) -> GnssInitStatus {
    guard(|| {
        let s = session(s)?;
        if !(threshold > 0.0 && threshold.is_finite()) {
            return fail(GnssInitStatus::InvalidArgument, format!("threshold must be positive, got {threshold}"));
        }
        s.threshold = threshold;
        Ok(())
    })
}

/// Activates the global residuals after `index` epochs; a negative value
/// restores trigger-based activation.
///
/// # Safety
/// `s` must be a live session.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_session_set_activation_index(s: *mut GnssInitSession, index: i64) -> GnssInitStatus {
    guard(|| {
        let s = session(s)?;
        s.activation = usize::try_from(index).map_or(Activation::Trigger, Activation::AfterEpochs);
        Ok(())
    })
}

/// Per-sample IMU noise standard deviations assumed by the estimator.
///
/// # Safety
/// `s` must be a live session.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_session_set_imu_noise(
    s: *mut GnssInitSession,
    gyro_sigma: c_double,
    accel_sigma: c_double,
) -> GnssInitStatus {
    guard(|| {
        let s = session(s)?;
        if !(gyro_sigma > 0.0 && accel_sigma > 0.0 && gyro_sigma.is_finite() && accel_sigma.is_finite()) {
            return fail(GnssInitStatus::InvalidArgument, "noise sigmas must be positive");
        }
        s.noise = ImuNoiseModel::isotropic(gyro_sigma, accel_sigma);
        Ok(())
    })
}

/// Number of IMU samples and GNSS fixes held by the session.
///
/// # Safety
/// `s` must be a live session; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_session_counts(
    s: *const GnssInitSession,
    imu_count: *mut size_t,
    gnss_count: *mut size_t,
) -> GnssInitStatus {
    guard(|| {
        let s = s.as_ref().map_or_else(|| fail(GnssInitStatus::NullPointer, "null session"), Ok)?;
        if !imu_count.is_null() {
            *imu_count = s.imu.len();
        }
        if !gnss_count.is_null() {
            *gnss_count = s.gnss.len();
        }
        Ok(())
    })
}

/// Runs the incremental two-stage initialization over all fixes.
///
/// # Safety
/// `s` must be a live session and `out` valid storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_session_run(s: *const GnssInitSession, out: *mut *mut GnssInitResult) -> GnssInitStatus {
    guard(|| {
        let s = s.as_ref().map_or_else(|| fail(GnssInitStatus::NullPointer, "null session"), Ok)?;
        if out.is_null() {
            return fail(GnssInitStatus::NullPointer, "null output handle");
        }
        let initial = s.initial.map_or_else(|| fail(GnssInitStatus::MissingInitialPose, "initial pose not set"), Ok)?;
        let mut cfg = PipelineConfig::new(initial);
        cfg.threshold = s.threshold;
        cfg.activation = s.activation;
        cfg.gnss_sigma = None;
        cfg.imu_noise = s.noise;
        let r = run_two_stage(&s.imu, &s.gnss, &cfg).map_err(gnss_init::Error::from)?;
        let res = GnssInitResult {
            positions: r.final_positions(),
            k_star: r.trace.k_star,
            activation_epoch: r.activation_epoch,
            state: r.state,
            extrinsic: r.extrinsic,
        };
        *out = Box::into_raw(Box::new(res));
        Ok(())
    })
}

/// Releases a result; null is ignored.
///
/// # Safety
/// `r` must come from [`gnss_init_session_run`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_result_free(r: *mut GnssInitResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Epoch at which the trigger fired, or -1 if it never did.
///
/// # Safety
/// `r` must be a live result; `k_star` writable.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_result_k_star(r: *const GnssInitResult, k_star: *mut i64) -> GnssInitStatus {
    guard(|| {
        let r = result(r)?;
        if k_star.is_null() {
            return fail(GnssInitStatus::NullPointer, "null output");
        }
        *k_star = r.k_star.map_or(-1, |k| k as i64);
        Ok(())
    })
}

/// Epoch at which global residuals became active, or -1.
///
/// # Safety
/// `r` must be a live result; `epoch` writable.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_result_activation_epoch(r: *const GnssInitResult, epoch: *mut i64) -> GnssInitStatus {
    guard(|| {
        let r = result(r)?;
        if epoch.is_null() {
            return fail(GnssInitStatus::NullPointer, "null output");
        }
        *epoch = r.activation_epoch.map_or(-1, |k| k as i64);
        Ok(())
    })
}

/// Number of keyframes in the final window (0 for a null handle).
///
/// # Safety
/// `r` must be a live result or null.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_result_keyframe_count(r: *const GnssInitResult) -> size_t {
    r.as_ref().map_or(0, |r| r.positions.len())
}

/// Copies the final keyframe positions in the GNSS frame as `x, y, z`
/// triples; `len` is the buffer length in doubles and must be at least
/// `3 * keyframe_count`.
///
/// # Safety
/// `r` must be a live result; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_result_positions(
    r: *const GnssInitResult,
    out: *mut c_double,
    len: size_t,
) -> GnssInitStatus {
    guard(|| {
        let r = result(r)?;
        let need = 3 * r.positions.len();
        if len < need {
            return fail(GnssInitStatus::InvalidArgument, format!("buffer holds {len} doubles, need {need}"));
        }
        let out = out_slice(out, need)?;
        for (chunk, p) in out.chunks_exact_mut(3).zip(&r.positions) {
            chunk.copy_from_slice(p.as_slice());
        }
        Ok(())
    })
}

/// Gyroscope bias (rad/s) and gravity vector (m/s², body-world frame).
///
/// # Safety
/// `r` must be a live result; both outputs must hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_result_bias_gravity(
    r: *const GnssInitResult,
    gyro_bias: *mut c_double,
    gravity: *mut c_double,
) -> GnssInitStatus {
    guard(|| {
        let r = result(r)?;
        out_slice(gyro_bias, 3)?.copy_from_slice(r.state.gyro_bias.as_slice());
        out_slice(gravity, 3)?.copy_from_slice(r.state.gravity().as_slice());
        Ok(())
    })
}

/// Estimated transform from the inertial frame to the GNSS frame:
/// quaternion `(w, x, y, z)` and translation.
///
/// # Safety
/// `r` must be a live result; `quat` must hold 4 doubles, `translation` 3.
#[no_mangle]
pub unsafe extern "C" fn gnss_init_result_extrinsic(
    r: *const GnssInitResult,
    quat: *mut c_double,
    translation: *mut c_double,
) -> GnssInitStatus {
    guard(|| {
        let r = result(r)?;
        out_slice(quat, 4)?.copy_from_slice(&r.extrinsic.rotation.to_quaternion());
        out_slice(translation, 3)?.copy_from_slice(r.extrinsic.translation.as_slice());
        Ok(())
    })
}

