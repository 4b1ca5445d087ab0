//! CSV loaders for IMU, ground-truth and GNSS logs, GNSS synthesis from
//! ground truth, and run reports.
//!
//! All streams of one dataset share a time origin: the first IMU timestamp
//! unless the caller passes another. Numbers are parsed with `str::parse`,
//! which only accepts `.` as decimal separator, and non-finite values are
//! rejected.

use crate::manifold::{exp_so3, log_so3, Rotation};
use crate::preintegration::ImuSample;
use crate::residuals::GnssMeasurement;
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Default synthetic GNSS rate (Hz).
pub const DEFAULT_GNSS_RATE: f64 = 5.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: timestamp {current} does not follow {previous}")]
    NonMonotonicTimestamps { line: usize, previous: f64, current: f64 },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    /// Integer nanoseconds (EuRoC).
    #[default]
    Ns,
    /// Floating-point seconds.
    S,
}

/// First timestamp of a dataset, kept in its raw unit so nanosecond stamps
/// are subtracted exactly before conversion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeOrigin {
    Ns(i64),
    S(f64),
}

impl TimeOrigin {
    fn parse(field: &str, unit: TimeUnit, line: usize) -> Result<Self, DatasetError> {
        match unit {
            TimeUnit::Ns => field
                .parse::<i64>()
                .map(TimeOrigin::Ns)
                .map_err(|e| DatasetError::Parse { line, reason: format!("timestamp {field:?}: {e}") }),
            TimeUnit::S => parse_finite(field, "timestamp", line).map(TimeOrigin::S),
        }
    }

    /// Seconds elapsed since this origin.
    fn seconds(&self, field: &str, line: usize) -> Result<f64, DatasetError> {
        match *self {
            TimeOrigin::Ns(t0) => {
                let unit = TimeUnit::Ns;
                match TimeOrigin::parse(field, unit, line)? {
                    TimeOrigin::Ns(t) => Ok((t - t0) as f64 * 1e-9),
                    TimeOrigin::S(_) => unreachable!("parsed with ns unit"),
                }
            }
            TimeOrigin::S(t0) => Ok(parse_finite(field, "timestamp", line)? - t0),
        }
    }
}

/// Where a dataset's streams live and how its GNSS is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub imu_path: PathBuf,
    pub groundtruth_path: Option<PathBuf>,
    pub gnss_path: Option<PathBuf>,
    /// Synthesize GNSS from ground truth instead of reading `gnss_path`.
    pub synthesis: Option<GnssSynthesis>,
    #[serde(default)]
    pub time_unit: TimeUnit,
    /// Free-form description of the world frame (e.g. "z up, gravity −z").
    #[serde(default)]
    pub gravity_frame: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnssSynthesis {
    pub sigma: f64,
    pub rate: f64,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), DatasetError> {
        match (&self.gnss_path, &self.synthesis) {
            (Some(_), Some(_)) => Err(DatasetError::InvalidManifest("both gnss_path and synthesis are set".into())),
            (None, None) => Err(DatasetError::InvalidManifest("one of gnss_path or synthesis is required".into())),
            (None, Some(_)) if self.groundtruth_path.is_none() => {
                Err(DatasetError::InvalidManifest("GNSS synthesis needs groundtruth_path".into()))
            }
            (None, Some(s)) if !(s.sigma >= 0.0 && s.rate > 0.0) => {
                Err(DatasetError::InvalidManifest(format!("synthesis needs sigma ≥ 0 and rate > 0, got {s:?}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthSample {
    pub timestamp: f64,
    pub rotation: Rotation,
    pub position: Vector3<f64>,
    pub velocity: Option<Vector3<f64>>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub origin: TimeOrigin,
    pub imu: Vec<ImuSample>,
    pub groundtruth: Option<Vec<GroundTruthSample>>,
    pub gnss: Vec<GnssMeasurement>,
}

fn parse_finite(field: &str, what: &str, line: usize) -> Result<f64, DatasetError> {
    let v: f64 = field
        .parse()
        .map_err(|e| DatasetError::Parse { line, reason: format!("{what} {field:?}: {e}") })?;
    if !v.is_finite() {
        return Err(DatasetError::Parse { line, reason: format!("{what} is not finite: {field:?}") });
    }
    Ok(v)
}

/// Rows of a headed CSV file as `(line number, fields)`.
fn read_rows(path: &Path, min_fields: usize) -> Result<Vec<(usize, Vec<String>)>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader.headers().map_err(|e| DatasetError::Parse { line: 1, reason: e.to_string() })?;
    if header.is_empty() {
        return Err(DatasetError::Parse { line: 1, reason: "missing header line".into() });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DatasetError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() < min_fields {
            return Err(DatasetError::Parse {
                line,
                reason: format!("expected at least {min_fields} fields, found {}", record.len()),
            });
        }
        rows.push((line, record.iter().map(str::to_owned).collect()));
    }
    if rows.is_empty() {
        return Err(DatasetError::Parse { line: 1, reason: "no data rows".into() });
    }
    Ok(rows)
}

fn vec3(fields: &[String], start: usize, what: &str, line: usize) -> Result<Vector3<f64>, DatasetError> {
    Ok(Vector3::new(
        parse_finite(&fields[start], what, line)?,
        parse_finite(&fields[start + 1], what, line)?,
        parse_finite(&fields[start + 2], what, line)?,
    ))
}

fn check_increasing(prev: &mut Option<f64>, t: f64, line: usize) -> Result<(), DatasetError> {
    if let Some(p) = *prev {
        if t <= p {
            return Err(DatasetError::NonMonotonicTimestamps { line, previous: p, current: t });
        }
    }
    *prev = Some(t);
    Ok(())
}

fn origin_for(rows: &[(usize, Vec<String>)], unit: TimeUnit, origin: Option<TimeOrigin>) -> Result<TimeOrigin, DatasetError> {
    match origin {
        Some(o) => Ok(o),
        None => TimeOrigin::parse(&rows[0].1[0], unit, rows[0].0),
    }
}

/// IMU log `timestamp,wx,wy,wz,ax,ay,az`; timestamps become seconds since
/// `origin` (default: the first row).
pub fn load_imu(
    path: &Path,
    unit: TimeUnit,
    origin: Option<TimeOrigin>,
) -> Result<(TimeOrigin, Vec<ImuSample>), DatasetError> {
    let rows = read_rows(path, 7)?;
    let origin = origin_for(&rows, unit, origin)?;
    let mut prev = None;
    let mut out = Vec::with_capacity(rows.len());
    for (line, f) in &rows {
        let timestamp = origin.seconds(&f[0], *line)?;
        check_increasing(&mut prev, timestamp, *line)?;
        out.push(ImuSample { timestamp, gyro: vec3(f, 1, "gyro", *line)?, accel: vec3(f, 4, "accel", *line)? });
    }
    Ok((origin, out))
}

/// Ground-truth log `timestamp,px,py,pz,qw,qx,qy,qz[,vx,vy,vz]`.
pub fn load_groundtruth(
    path: &Path,
    unit: TimeUnit,
    origin: Option<TimeOrigin>,
) -> Result<(TimeOrigin, Vec<GroundTruthSample>), DatasetError> {
    let rows = read_rows(path, 8)?;
    let origin = origin_for(&rows, unit, origin)?;
    let mut prev = None;
    let mut out = Vec::with_capacity(rows.len());
    for (line, f) in &rows {
        let timestamp = origin.seconds(&f[0], *line)?;
        check_increasing(&mut prev, timestamp, *line)?;
        let q: Vec<f64> = (4..8).map(|i| parse_finite(&f[i], "quaternion", *line)).collect::<Result<_, _>>()?;
        if q.iter().map(|c| c * c).sum::<f64>() < 1e-12 {
            return Err(DatasetError::Parse { line: *line, reason: "zero quaternion".into() });
        }
        let velocity = if f.len() >= 11 { Some(vec3(f, 8, "velocity", *line)?) } else { None };
        out.push(GroundTruthSample {
            timestamp,
            rotation: Rotation::from_quaternion(q[0], q[1], q[2], q[3]),
            position: vec3(f, 1, "position", *line)?,
            velocity,
        });
    }
    Ok((origin, out))
}

/// GNSS log `timestamp,px,py,pz,sxx,syy,szz` with per-axis variances (m²).
pub fn load_gnss(
    path: &Path,
    unit: TimeUnit,
    origin: Option<TimeOrigin>,
) -> Result<(TimeOrigin, Vec<GnssMeasurement>), DatasetError> {
    let rows = read_rows(path, 7)?;
    let origin = origin_for(&rows, unit, origin)?;
    let mut prev = None;
    let mut out = Vec::with_capacity(rows.len());
    for (line, f) in &rows {
        let timestamp = origin.seconds(&f[0], *line)?;
        check_increasing(&mut prev, timestamp, *line)?;
        let var = vec3(f, 4, "variance", *line)?;
        if var.iter().any(|v| *v < 0.0) {
            return Err(DatasetError::Parse { line: *line, reason: "negative variance".into() });
        }
        out.push(GnssMeasurement {
            timestamp,
            position: vec3(f, 1, "position", *line)?,
            cov: Matrix3::from_diagonal(&var),
        });
    }
    Ok((origin, out))
}

/// Loads every stream named by `manifest` on the IMU time origin.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Dataset, DatasetError> {
    manifest.validate()?;
    let unit = manifest.time_unit;
    let (origin, imu) = load_imu(&manifest.imu_path, unit, None)?;
    let groundtruth = match &manifest.groundtruth_path {
        Some(p) => Some(load_groundtruth(p, unit, Some(origin))?.1),
        None => None,
    };
    let gnss = match (&manifest.gnss_path, &manifest.synthesis, &groundtruth) {
        (Some(p), _, _) => load_gnss(p, unit, Some(origin))?.1,
        (None, Some(s), Some(gt)) => synthesize_gnss(gt, s.sigma, s.rate, s.seed)?,
        _ => unreachable!("validated manifest"),
    };
    Ok(Dataset { origin, imu, groundtruth, gnss })
}

/// Pose and velocity of the ground truth at `t`, interpolated linearly
/// (geodesically for rotation). Velocity comes from the log when present,
/// otherwise from the bracketing positions.
pub fn interpolate_groundtruth(gt: &[GroundTruthSample], t: f64) -> Option<GroundTruthSample> {
    let first = gt.first()?;
    let last = gt.last()?;
    if t < first.timestamp || t > last.timestamp {
        return None;
    }
    let i = gt.partition_point(|s| s.timestamp <= t).clamp(1, gt.len().max(2) - 1);
    if gt.len() == 1 {
        return Some(*first);
    }
    let (a, b) = (&gt[i - 1], &gt[i]);
    let span = b.timestamp - a.timestamp;
    let s = (t - a.timestamp) / span;
    let rel = log_so3(&(a.rotation.transpose() * b.rotation));
    let fd = (b.position - a.position) / span;
    let velocity = match (a.velocity, b.velocity) {
        (Some(va), Some(vb)) => va + (vb - va) * s,
        _ => fd,
    };
    Some(GroundTruthSample {
        timestamp: t,
        rotation: a.rotation * exp_so3(&(rel * s)),
        position: a.position + (b.position - a.position) * s,
        velocity: Some(velocity),
    })
}

/// GNSS fixes at a uniform `rate` over the ground-truth span: interpolated
/// positions plus zero-mean Gaussian noise of standard deviation `sigma`
/// (ChaCha8 stream seeded with `seed`), covariance `σ²I`.
pub fn synthesize_gnss(
    gt: &[GroundTruthSample],
    sigma: f64,
    rate: f64,
    seed: u64,
) -> Result<Vec<GnssMeasurement>, DatasetError> {
    if gt.is_empty() {
        return Err(DatasetError::InvalidInput("empty ground truth".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(DatasetError::InvalidInput(format!("sigma must be non-negative, got {sigma}")));
    }
    let noise = Normal::new(0.0, sigma)
        .map_err(|e| DatasetError::InvalidInput(format!("sigma {sigma}: {e}")))?;
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(DatasetError::InvalidInput(format!("rate must be positive, got {rate}")));
    }
    let t0 = gt[0].timestamp;
    let span = gt[gt.len() - 1].timestamp - t0;
    let count = (span * rate + 1e-9).floor() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = (0..count)
        .map(|k| {
            let t = t0 + k as f64 / rate;
            let truth = interpolate_groundtruth(gt, t.min(t0 + span)).expect("inside span");
            let n = Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            GnssMeasurement { timestamp: t, position: truth.position + n, cov: Matrix3::identity() * sigma * sigma }
        })
        .collect();
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>, DatasetError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Writes an IMU log with timestamps in seconds; `{}` formatting of `f64`
/// round-trips exactly.
pub fn write_imu(path: &Path, imu: &[ImuSample]) -> Result<(), DatasetError> {
    let mut w = create(path)?;
    let io = io_err(path);
    (|| {
        writeln!(w, "timestamp,wx,wy,wz,ax,ay,az")?;
        for s in imu {
            let (g, a) = (s.gyro, s.accel);
            writeln!(w, "{},{},{},{},{},{},{}", s.timestamp, g.x, g.y, g.z, a.x, a.y, a.z)?;
        }
        w.flush()
    })()
    .map_err(io)
}

pub fn write_groundtruth(path: &Path, gt: &[GroundTruthSample]) -> Result<(), DatasetError> {
    let mut w = create(path)?;
    let io = io_err(path);
    (|| {
        writeln!(w, "timestamp,px,py,pz,qw,qx,qy,qz,vx,vy,vz")?;
        for s in gt {
            let [qw, qx, qy, qz] = s.rotation.to_quaternion();
            let p = s.position;
            write!(w, "{},{},{},{},{qw},{qx},{qy},{qz}", s.timestamp, p.x, p.y, p.z)?;
            match s.velocity {
                Some(v) => writeln!(w, ",{},{},{}", v.x, v.y, v.z)?,
                None => writeln!(w)?,
            }
        }
        w.flush()
    })()
    .map_err(io)
}

pub fn write_gnss(path: &Path, gnss: &[GnssMeasurement]) -> Result<(), DatasetError> {
    let mut w = create(path)?;
    let io = io_err(path);
    (|| {
        writeln!(w, "timestamp,px,py,pz,sxx,syy,szz")?;
        for m in gnss {
            let p = m.position;
            let c = m.cov;
            writeln!(w, "{},{},{},{},{},{},{}", m.timestamp, p.x, p.y, p.z, c[(0, 0)], c[(1, 1)], c[(2, 2)])?;
        }
        w.flush()
    })()
    .map_err(io)
}

/// One row of a results table: activation index and trajectory errors of a
/// run, next to the error of the global-from-start baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sequence: String,
    pub k_star: Option<usize>,
    /// ATE RMSE (m) with global residuals from the start.
    pub ate_full: f64,
    /// ATE RMSE (m) with global residuals activated at `k_star`.
    pub ate_from_kstar: f64,
    /// Wall-clock seconds.
    pub runtime: f64,
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Writes `records` as JSON when the extension is `.json`, CSV otherwise.
pub fn write_report(records: &[RunRecord], path: &Path) -> Result<(), DatasetError> {
    if is_json(path) {
        let w = create(path)?;
        return serde_json::to_writer_pretty(w, records)
            .map_err(|source| DatasetError::Json { path: path.to_path_buf(), source });
    }
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in records {
        w.serialize(r).map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: e.into() })?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_report(path: &Path) -> Result<Vec<RunRecord>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    if is_json(path) {
        return serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|source| DatasetError::Json { path: path.to_path_buf(), source });
    }
    csv::Reader::from_reader(file)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| DatasetError::Parse { line: i + 2, reason: e.to_string() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_with(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const EUROC_HEADER: &str = "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n";

    #[test]
    fn euroc_imu_rows() {
        let f = file_with(&format!(
            "{EUROC_HEADER}1403636579758555392,-0.0991,0.1424,0.0251,8.1476,-0.3759,-2.4596\n\
             1403636579763555584,-0.0991,0.1445,0.0251,8.0332,-0.4004,-2.4841\n"
        ));
        let (origin, imu) = load_imu(f.path(), TimeUnit::Ns, None).unwrap();
        assert_eq!(origin, TimeOrigin::Ns(1403636579758555392));
        assert_eq!(imu.len(), 2);
        assert_eq!(imu[0].timestamp, 0.0);
        assert!((imu[1].timestamp - 0.005000192).abs() < 1e-15);
        assert_eq!(imu[0].gyro, Vector3::new(-0.0991, 0.1424, 0.0251));
        assert_eq!(imu[1].accel, Vector3::new(8.0332, -0.4004, -2.4841));
    }

    #[test]
    fn malformed_inputs() {
        let empty = file_with("");
        assert!(matches!(load_imu(empty.path(), TimeUnit::Ns, None), Err(DatasetError::Parse { .. })));
        let header_only = file_with(EUROC_HEADER);
        assert!(matches!(load_imu(header_only.path(), TimeUnit::Ns, None), Err(DatasetError::Parse { .. })));
        let dup = file_with(&format!("{EUROC_HEADER}10,0,0,0,0,0,9.8\n10,0,0,0,0,0,9.8\n"));
        assert!(matches!(
            load_imu(dup.path(), TimeUnit::Ns, None),
            Err(DatasetError::NonMonotonicTimestamps { line: 3, .. })
        ));
        let nan = file_with("t,wx,wy,wz,ax,ay,az\n0.0,NaN,0,0,0,0,9.8\n");
        assert!(matches!(load_imu(nan.path(), TimeUnit::S, None), Err(DatasetError::Parse { line: 2, .. })));
        let inf = file_with("t,wx,wy,wz,ax,ay,az\n0.0,0,inf,0,0,0,9.8\n");
        assert!(load_imu(inf.path(), TimeUnit::S, None).is_err());
        let comma = file_with("t,wx,wy,wz,ax,ay,az\n0.0,\"0,5\",0,0,0,0,9.8\n");
        assert!(load_imu(comma.path(), TimeUnit::S, None).is_err());
        let short = file_with("t,wx,wy,wz,ax,ay,az\n0.0,0,0,0\n");
        assert!(load_imu(short.path(), TimeUnit::S, None).is_err());
    }

    #[test]
    fn groundtruth_with_and_without_velocity() {
        let f = file_with(
            "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz\n0.0,1,2,3,1,0,0,0,0.5,0,0\n0.5,2,2,3,0,0,0,1,0.5,0,0\n",
        );
        let (_, gt) = load_groundtruth(f.path(), TimeUnit::S, None).unwrap();
        assert_eq!(gt[0].velocity, Some(Vector3::new(0.5, 0.0, 0.0)));
        let mid = interpolate_groundtruth(&gt, 0.25).unwrap();
        assert!((mid.position - Vector3::new(1.5, 2.0, 3.0)).norm() < 1e-15);
        let angle = log_so3(&mid.rotation).norm();
        assert!((angle - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(interpolate_groundtruth(&gt, 0.6).is_none());

        let f = file_with("t,px,py,pz,qw,qx,qy,qz\n0.0,0,0,0,1,0,0,0\n2.0,4,0,0,1,0,0,0\n");
        let (_, gt) = load_groundtruth(f.path(), TimeUnit::S, None).unwrap();
        assert_eq!(gt[0].velocity, None);
        assert_eq!(interpolate_groundtruth(&gt, 1.0).unwrap().velocity, Some(Vector3::new(2.0, 0.0, 0.0)));
    }

    #[test]
    fn shared_origin_across_streams() {
        let imu = file_with("t,wx,wy,wz,ax,ay,az\n100,0,0,0,0,0,9.8\n150,0,0,0,0,0,9.8\n");
        let gnss = file_with("t,px,py,pz,sxx,syy,szz\n120,1,2,3,0.04,0.04,0.09\n");
        let (origin, _) = load_imu(imu.path(), TimeUnit::Ns, None).unwrap();
        let (_, fixes) = load_gnss(gnss.path(), TimeUnit::Ns, Some(origin)).unwrap();
        assert!((fixes[0].timestamp - 20e-9).abs() < 1e-20);
        assert_eq!(fixes[0].cov[(2, 2)], 0.09);
    }

    fn line_truth(n: usize) -> Vec<GroundTruthSample> {
        (0..n)
            .map(|k| GroundTruthSample {
                timestamp: k as f64 * 0.01,
                rotation: Rotation::identity(),
                position: Vector3::new(k as f64 * 0.01, 1.0, -2.0),
                velocity: None,
            })
            .collect()
    }

    #[test]
    fn synthesis_noise_free_and_deterministic() {
        let gt = line_truth(201);
        let clean = synthesize_gnss(&gt, 0.0, 5.0, 3).unwrap();
        assert_eq!(clean.len(), 11);
        for m in &clean {
            let truth = interpolate_groundtruth(&gt, m.timestamp).unwrap();
            assert!((m.position - truth.position).norm() < 1e-12);
        }
        let a = synthesize_gnss(&gt, 0.2, 5.0, 9).unwrap();
        let b = synthesize_gnss(&gt, 0.2, 5.0, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synthesize_gnss(&gt, 0.2, 5.0, 10).unwrap());
        assert_eq!(a[0].cov, Matrix3::identity() * (0.2 * 0.2));
        assert!(synthesize_gnss(&[], 0.2, 5.0, 0).is_err());
        assert!(synthesize_gnss(&gt, -1.0, 5.0, 0).is_err());
    }

    #[test]
    fn synthesis_noise_level() {
        let gt: Vec<_> = (0..2001)
            .map(|k| GroundTruthSample {
                timestamp: k as f64,
                rotation: Rotation::identity(),
                position: Vector3::zeros(),
                velocity: None,
            })
            .collect();
        let fixes = synthesize_gnss(&gt, 0.2, 5.0, 42).unwrap();
        assert!(fixes.len() >= 10_000);
        for axis in 0..3 {
            let n = fixes.len() as f64;
            let mean = fixes.iter().map(|m| m.position[axis]).sum::<f64>() / n;
            let var = fixes.iter().map(|m| (m.position[axis] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let std = var.sqrt();
            assert!((0.19..=0.21).contains(&std), "axis {axis}: {std}");
        }
    }

    #[test]
    fn streams_roundtrip_losslessly() {
        let dir = tempfile::tempdir().unwrap();
        let imu: Vec<ImuSample> = (0..5)
            .map(|k| ImuSample {
                timestamp: k as f64 * 0.005,
                gyro: Vector3::new(0.1 / 3.0, -1e-7, k as f64),
                accel: Vector3::new(9.81, 1.0 / 7.0, -0.0),
            })
            .collect();
        let p = dir.path().join("imu.csv");
        write_imu(&p, &imu).unwrap();
        assert_eq!(load_imu(&p, TimeUnit::S, None).unwrap().1, imu);

        let gnss = vec![
            GnssMeasurement::isotropic(0.0, Vector3::new(1.0 / 3.0, 2.0, 3.0), 0.2),
            GnssMeasurement::isotropic(0.2, Vector3::new(4.0, 5.0, 6.0), 0.3),
        ];
        let p = dir.path().join("gnss.csv");
        write_gnss(&p, &gnss).unwrap();
        assert_eq!(load_gnss(&p, TimeUnit::S, None).unwrap().1, gnss);

        let mut gt = line_truth(3);
        gt[1].velocity = Some(Vector3::new(1.0, 0.0, 0.0));
        gt.iter_mut().for_each(|s| s.velocity = Some(s.velocity.unwrap_or_default()));
        let p = dir.path().join("gt.csv");
        write_groundtruth(&p, &gt).unwrap();
        let back = load_groundtruth(&p, TimeUnit::S, None).unwrap().1;
        for (a, b) in gt.iter().zip(&back) {
            assert_eq!(a.position, b.position);
            assert_eq!(a.velocity, b.velocity);
            assert!((a.rotation.matrix() - b.rotation.matrix()).amax() < 1e-15);
        }
    }

    #[test]
    fn report_roundtrip_csv_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            RunRecord { sequence: "MH_03_medium".into(), k_star: Some(15), ate_full: 0.051, ate_from_kstar: 0.04, runtime: 1.25 },
            RunRecord { sequence: "straight".into(), k_star: None, ate_full: 0.3, ate_from_kstar: 0.31, runtime: 0.5 },
        ];
        for name in ["r.csv", "r.json"] {
            let p = dir.path().join(name);
            write_report(&records, &p).unwrap();
            assert_eq!(read_report(&p).unwrap(), records);
        }
        let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert!(text.starts_with("sequence,k_star,ate_full,ate_from_kstar,runtime"));
    }

    #[test]
    fn manifest_rules() {
        let base = DatasetManifest {
            imu_path: "imu.csv".into(),
            groundtruth_path: Some("gt.csv".into()),
            gnss_path: None,
            synthesis: Some(GnssSynthesis { sigma: 0.2, rate: DEFAULT_GNSS_RATE, seed: 0 }),
            time_unit: TimeUnit::Ns,
            gravity_frame: None,
        };
        assert!(base.validate().is_ok());
        let both = DatasetManifest { gnss_path: Some("g.csv".into()), ..base.clone() };
        assert!(both.validate().is_err());
        let neither = DatasetManifest { synthesis: None, ..base.clone() };
        assert!(neither.validate().is_err());
        let no_truth = DatasetManifest { groundtruth_path: None, ..base.clone() };
        assert!(no_truth.validate().is_err());
        let json = serde_json::to_string(&base).unwrap();
        assert_eq!(serde_json::from_str::<DatasetManifest>(&json).unwrap(), base);
    }
}
