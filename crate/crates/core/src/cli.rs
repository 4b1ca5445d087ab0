//! Command-line front end: end-to-end initialization runs, activation
//! sweeps, trigger traces, observability reports and synthetic datasets.
//!
//! Options come from flags and, optionally, a `key = value` file passed with
//! `--config`; keys are the long flag names and never override a flag given
//! on the command line. Results are written as CSV/JSON under `--out`, and a
//! human-readable summary goes to stdout.

use crate::dataset_io::{
    self, interpolate_groundtruth, write_gnss, write_groundtruth, write_imu, write_report, DatasetManifest,
    GnssSynthesis, GroundTruthSample, RunRecord, TimeUnit,
};
use crate::manifold::GravityDirection;
use crate::observability::{
    build_observability_matrix, lie_derivative_stack, nullspace, rank_dg, rotation_row_coefficients,
    singular_values, verify_lie_stack_numerically, flow_outputs, LieInputs, ObservabilityOptions, DEFAULT_RANK_TOL,
    MAX_LIE_ORDER,
};
use crate::preintegration::{ImuNoiseModel, ImuSample};
use crate::residuals::GnssMeasurement;
use crate::simulation::{ate_rmse, generate, SensorConfig, TrajectoryModel};
use crate::trigger::{run_two_stage, Activation, InitialPose, PipelineConfig, TwoStageResult, DEFAULT_THRESHOLD};
use crate::{Error, Result};
use clap::parser::ValueSource;
use clap::{CommandFactory, FromArgMatches, Parser, ValueEnum};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Per-sample IMU noise of the built-in simulator.
const SIM_GYRO_SIGMA: f64 = 1.7e-3;
const SIM_ACCEL_SIGMA: f64 = 2.0e-2;
/// EuRoC (ADIS16448) noise densities scaled to 200 Hz samples.
pub const EUROC_GYRO_SIGMA: f64 = 1.6968e-4 * 14.142135623730951;
pub const EUROC_ACCEL_SIGMA: f64 = 2.0e-3 * 14.142135623730951;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Init,
    Sweep,
    TriggerOnly,
    Observability,
    LieCheck,
    Simulate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trajectory {
    FigureEight,
    Straight,
    Urban,
    Arc,
}

impl Trajectory {
    pub fn model(self, duration: Option<f64>) -> TrajectoryModel {
        match self {
            Trajectory::FigureEight => TrajectoryModel::figure_eight(duration.unwrap_or(12.0)),
            Trajectory::Straight => TrajectoryModel::straight_line(duration.unwrap_or(12.0)),
            Trajectory::Urban => TrajectoryModel::urban(duration.unwrap_or(16.0)),
            Trajectory::Arc => TrajectoryModel::constant_rate_arc([0.0, 0.0, 0.3], duration.unwrap_or(12.0)),
        }
    }
}

#[derive(Clone, Debug, Parser)]
#[command(name = "gnss-init", version, about = "Two-stage GNSS-inertial initialization")]
pub struct Cli {
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// IMU CSV (`timestamp,wx,wy,wz,ax,ay,az`); without it a synthetic run is used.
    #[arg(long)]
    pub imu: Option<PathBuf>,
    /// Ground-truth CSV (`timestamp,px,py,pz,qw,qx,qy,qz[,vx,vy,vz]`).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// GNSS CSV (`timestamp,px,py,pz,sxx,syy,szz`); synthesized from `--gt` when absent.
    #[arg(long)]
    pub gnss: Option<PathBuf>,
    /// GNSS standard deviation (m) for synthesis and for the estimator.
    #[arg(long, default_value_t = 0.2)]
    pub sigma_gnss: f64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Activate global residuals after this many epochs instead of at the trigger.
    #[arg(long)]
    pub activation_index: Option<usize>,
    /// Activation indices for `sweep`: `0,10,20` or `start:end:step`.
    #[arg(long)]
    pub sweep: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "figure-eight")]
    pub trajectory: Trajectory,
    /// Synthetic trajectory length (s).
    #[arg(long)]
    pub duration: Option<f64>,
    /// Timestamp unit of dataset CSV files.
    #[arg(long, value_enum, default_value = "ns")]
    pub time_unit: TimeUnitArg,
    /// Keep only the first N GNSS epochs.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Per-sample gyroscope noise σ (rad/s) assumed by the estimator.
    #[arg(long)]
    pub gyro_noise: Option<f64>,
    /// Per-sample accelerometer noise σ (m/s²) assumed by the estimator.
    #[arg(long)]
    pub accel_noise: Option<f64>,
    /// Random states evaluated by `lie-check`.
    #[arg(long, default_value_t = 20)]
    pub states: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TimeUnitArg {
    Ns,
    S,
}

impl From<TimeUnitArg> for TimeUnit {
    fn from(u: TimeUnitArg) -> Self {
        match u {
            TimeUnitArg::Ns => TimeUnit::Ns,
            TimeUnitArg::S => TimeUnit::S,
        }
    }
}

#[derive(Debug)]
pub enum ParseFailure {
    /// Includes `--help` and `--version`; call `exit()` on it.
    Clap(clap::Error),
    Config(Error),
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_owned(), v.to_owned()));
    }
    Ok(out)
}

/// Parses arguments (including the program name) and merges the config file.
pub fn parse_args<I, T>(args: I) -> std::result::Result<Cli, ParseFailure>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let matches = Cli::command().try_get_matches_from(&args).map_err(ParseFailure::Clap)?;
    if let Some(path) = matches.get_one::<PathBuf>("config") {
        let text = fs::read_to_string(path)
            .map_err(|source| ParseFailure::Config(Error::Io { path: path.clone(), source }))?;
        let command = Cli::command();
        for (key, value) in parse_config(&text).map_err(ParseFailure::Config)? {
            let id = key.replace('-', "_");
            if id == "config" || !command.get_arguments().any(|a| a.get_id() == id.as_str()) {
                return Err(ParseFailure::Config(Error::Config(format!("unknown key {key:?}"))));
            }
            if matches.value_source(&id) == Some(ValueSource::CommandLine) {
                continue;
            }
            args.push(format!("--{}", id.replace('_', "-")).into());
            args.push(value.into());
        }
    }
    let matches = Cli::command().try_get_matches_from(&args).map_err(ParseFailure::Clap)?;
    Cli::from_arg_matches(&matches).map_err(ParseFailure::Clap)
}

/// Parses `0,10,20` or `start:end:step` (inclusive end).
pub fn parse_indices(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("invalid index list {spec:?}"));
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let out = match parts.as_slice() {
        [single] => single
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?,
        [a, b, step] => {
            let (a, b, step): (usize, usize, usize) =
                (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?, step.parse().map_err(|_| bad())?);
            if step == 0 || b < a {
                return Err(bad());
            }
            (a..=b).step_by(step).collect()
        }
        _ => return Err(bad()),
    };
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

/// Synchronized streams, the known initial pose, and the true epoch
/// positions in the GNSS frame used for scoring.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub imu: Vec<ImuSample>,
    pub gnss: Vec<GnssMeasurement>,
    pub truth: Vec<Vector3<f64>>,
    pub initial: InitialPose,
    pub imu_noise: ImuNoiseModel,
}

impl Scenario {
    pub fn simulated(name: &str, model: &TrajectoryModel, sensors: &SensorConfig) -> Result<Self> {
        let sim = generate(model, sensors)?;
        let t0 = sim.truth[sim.gnss_truth_index[0]];
        Ok(Scenario {
            name: name.to_owned(),
            truth: sim.epoch_positions_world(),
            initial: InitialPose { rotation: t0.rotation, position: t0.position, velocity: t0.velocity },
            imu_noise: ImuNoiseModel::isotropic(sensors.gyro_noise_sigma, sensors.accel_noise_sigma),
            imu: sim.imu,
            gnss: sim.gnss,
        })
    }

    /// Loads a dataset and keeps the GNSS epochs covered by both the IMU and
    /// the ground truth; the initial pose is the ground truth at the first one.
    pub fn from_dataset(name: &str, manifest: &DatasetManifest, imu_noise: ImuNoiseModel) -> Result<Self> {
        let data = dataset_io::load_dataset(manifest)?;
        let gt = data
            .groundtruth
            .ok_or_else(|| Error::Config("ground truth is required for the initial pose and scoring".into()))?;
        let (imu_start, imu_end) = (data.imu[0].timestamp, data.imu[data.imu.len() - 1].timestamp);
        let mut gnss = Vec::new();
        let mut truth: Vec<GroundTruthSample> = Vec::new();
        for m in data.gnss {
            if m.timestamp < imu_start || m.timestamp > imu_end {
                continue;
            }
            if let Some(s) = interpolate_groundtruth(&gt, m.timestamp) {
                gnss.push(m);
                truth.push(s);
            }
        }
        let first = truth.first().ok_or_else(|| Error::Config("no GNSS epoch overlaps IMU and ground truth".into()))?;
        Ok(Scenario {
            name: name.to_owned(),
            initial: InitialPose {
                rotation: first.rotation,
                position: first.position,
                velocity: first.velocity.unwrap_or_default(),
            },
            truth: truth.iter().map(|s| s.position).collect(),
            imu: data.imu,
            gnss,
            imu_noise,
        })
    }

    pub fn pipeline_config(&self, threshold: f64, sigma_gnss: f64, activation: Activation) -> PipelineConfig {
        let mut cfg = PipelineConfig::new(self.initial);
        cfg.threshold = threshold;
        cfg.gnss_sigma = Some(sigma_gnss);
        cfg.activation = activation;
        cfg.imu_noise = self.imu_noise;
        cfg
    }
}

/// One pipeline run scored against the truth.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub result: TwoStageResult,
    /// RMSE of the newest-keyframe estimate at each epoch.
    pub ate_online: f64,
    /// RMSE of the final window.
    pub ate_final: f64,
    pub runtime: f64,
}

pub fn evaluate(scenario: &Scenario, config: &PipelineConfig) -> Result<Evaluation> {
    let start = Instant::now();
    let result = run_two_stage(&scenario.imu, &scenario.gnss, config)?;
    let runtime = start.elapsed().as_secs_f64();
    let n = result.online_positions.len();
    let truth = &scenario.truth[..n];
    Ok(Evaluation {
        ate_online: ate_rmse(&result.online_positions, truth)?,
        ate_final: ate_rmse(&result.final_positions(), truth)?,
        runtime,
        result,
    })
}

/// Runs one evaluation per activation index on scoped threads; results keep
/// the order of `indices`.
pub fn sweep(scenario: &Scenario, base: &PipelineConfig, indices: &[usize]) -> Result<Vec<Evaluation>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut out: Vec<Option<Result<Evaluation>>> = (0..indices.len()).map(|_| None).collect();
    for (chunk_idx, chunk) in indices.chunks(workers).enumerate() {
        let results: Vec<Result<Evaluation>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&a| {
                    let cfg = PipelineConfig { activation: Activation::AfterEpochs(a), ..base.clone() };
                    s.spawn(move || evaluate(scenario, &cfg))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        });
        for (i, r) in results.into_iter().enumerate() {
            out[chunk_idx * workers + i] = Some(r);
        }
    }
    out.into_iter().map(|r| r.expect("filled")).collect()
}

/// What a command wrote.
#[derive(Clone, Debug, Default)]
pub struct Outputs {
    pub files: Vec<PathBuf>,
}

struct Sink<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl<'a> Sink<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
        Ok(Sink { dir, files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn write_with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let path = self.path(name);
        let file = fs::File::create(&path).map_err(|source| Error::Io { path: path.clone(), source })?;
        let mut w = std::io::BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|source| Error::Io { path, source })
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
            writeln!(w)
        })
    }

    fn finish(self) -> Outputs {
        Outputs { files: self.files }
    }
}

fn sequence_name(cli: &Cli) -> String {
    match &cli.imu {
        Some(p) => p
            .parent()
            .and_then(|d| d.file_name())
            .or_else(|| p.file_stem())
            .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned()),
        None => cli.trajectory.to_possible_value().map_or_else(String::new, |v| v.get_name().to_owned()),
    }
}

/// Builds the scenario named by the flags: a dataset when `--imu` is given,
/// otherwise the synthetic trajectory with `--seed`.
pub fn scenario_from_cli(cli: &Cli) -> Result<Scenario> {
    let name = sequence_name(cli);
    match &cli.imu {
        Some(imu) => {
            let gt = cli.gt.clone().ok_or_else(|| Error::Config("--imu requires --gt".into()))?;
            let manifest = DatasetManifest {
                imu_path: imu.clone(),
                groundtruth_path: Some(gt),
                gnss_path: cli.gnss.clone(),
                synthesis: cli.gnss.is_none().then_some(GnssSynthesis {
                    sigma: cli.sigma_gnss,
                    rate: dataset_io::DEFAULT_GNSS_RATE,
                    seed: cli.seed,
                }),
                time_unit: cli.time_unit.into(),
                gravity_frame: None,
            };
            let noise = ImuNoiseModel::isotropic(
                cli.gyro_noise.unwrap_or(EUROC_GYRO_SIGMA),
                cli.accel_noise.unwrap_or(EUROC_ACCEL_SIGMA),
            );
            Scenario::from_dataset(&name, &manifest, noise)
        }
        None => {
            let sensors = SensorConfig {
                rng_seed: cli.seed,
                gnss_noise_sigma: cli.sigma_gnss,
                gyro_noise_sigma: cli.gyro_noise.unwrap_or(SIM_GYRO_SIGMA),
                accel_noise_sigma: cli.accel_noise.unwrap_or(SIM_ACCEL_SIGMA),
                ..SensorConfig::default()
            };
            Scenario::simulated(&name, &cli.trajectory.model(cli.duration), &sensors)
        }
    }
}

fn base_config(cli: &Cli, scenario: &Scenario, activation: Activation) -> PipelineConfig {
    let mut cfg = scenario.pipeline_config(cli.threshold, cli.sigma_gnss, activation);
    cfg.max_epochs = cli.max_epochs;
    cfg
}

#[derive(Serialize)]
struct InitSummary<'a> {
    sequence: &'a str,
    threshold: f64,
    sigma_gnss: f64,
    seed: u64,
    epochs: usize,
    k_star: Option<usize>,
    activation_epoch: Option<usize>,
    never_triggered: bool,
    ate_full: f64,
    ate_from_kstar: f64,
    ate_full_online: f64,
    ate_from_kstar_online: f64,
    runtime: f64,
}

fn trajectory_csv(w: &mut dyn Write, eval: &Evaluation, truth: &[Vector3<f64>]) -> std::io::Result<()> {
    let r = &eval.result;
    writeln!(w, "epoch,timestamp,est_x,est_y,est_z,online_x,online_y,online_z,true_x,true_y,true_z")?;
    for (i, (p, o)) in r.final_positions().iter().zip(&r.online_positions).enumerate() {
        let t = truth[i];
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            i + 1,
            r.epoch_timestamps[i],
            p.x,
            p.y,
            p.z,
            o.x,
            o.y,
            o.z,
            t.x,
            t.y,
            t.z
        )?;
    }
    Ok(())
}

fn cmd_init(cli: &Cli) -> Result<Outputs> {
    let scenario = scenario_from_cli(cli)?;
    let activation = cli.activation_index.map_or(Activation::Trigger, Activation::AfterEpochs);
    let staged = evaluate(&scenario, &base_config(cli, &scenario, activation))?;
    let naive = evaluate(&scenario, &base_config(cli, &scenario, Activation::AfterEpochs(0)))?;
    let r = &staged.result;
    let k_star = r.trace.k_star;

    let mut sink = Sink::new(&cli.out)?;
    let record = RunRecord {
        sequence: scenario.name.clone(),
        k_star,
        ate_full: naive.ate_final,
        ate_from_kstar: staged.ate_final,
        runtime: staged.runtime,
    };
    let p = sink.path("report.csv");
    write_report(std::slice::from_ref(&record), &p)?;
    sink.write_with("trigger_trace.csv", |w| r.trace.write_csv(w).map_err(std::io::Error::other))?;
    sink.write_with("trajectory.csv", |w| trajectory_csv(w, &staged, &scenario.truth))?;
    let summary = InitSummary {
        sequence: &scenario.name,
        threshold: cli.threshold,
        sigma_gnss: cli.sigma_gnss,
        seed: cli.seed,
        epochs: r.online_positions.len(),
        k_star,
        activation_epoch: r.activation_epoch,
        never_triggered: r.never_triggered,
        ate_full: naive.ate_final,
        ate_from_kstar: staged.ate_final,
        ate_full_online: naive.ate_online,
        ate_from_kstar_online: staged.ate_online,
        runtime: staged.runtime,
    };
    sink.json("summary.json", &summary)?;

    println!("sequence        {}", scenario.name);
    println!("threshold       {}", cli.threshold);
    match k_star {
        Some(k) => println!("k*              {k}"),
        None => println!("k*              never fired"),
    }
    println!("activation      {:?}", r.activation_epoch);
    println!("ATE full        {:.4} m (online {:.4} m)", naive.ate_final, naive.ate_online);
    println!("ATE from k*     {:.4} m (online {:.4} m)", staged.ate_final, staged.ate_online);
    Ok(sink.finish())
}

fn cmd_sweep(cli: &Cli) -> Result<Outputs> {
    let scenario = scenario_from_cli(cli)?;
    let epochs = cli.max_epochs.map_or(scenario.gnss.len(), |m| m.min(scenario.gnss.len()));
    let indices = match &cli.sweep {
        Some(s) => parse_indices(s)?,
        None => (0..epochs).step_by(5).collect(),
    };
    let base = base_config(cli, &scenario, Activation::Trigger);
    let evals = sweep(&scenario, &base, &indices)?;
    let mut sink = Sink::new(&cli.out)?;
    sink.write_with("sweep.csv", |w| {
        writeln!(w, "activation_index,ate_online,ate_final,runtime")?;
        for (a, e) in indices.iter().zip(&evals) {
            writeln!(w, "{a},{},{},{}", e.ate_online, e.ate_final, e.runtime)?;
        }
        Ok(())
    })?;
    println!("{:>6} {:>12} {:>12}", "index", "ATE online", "ATE final");
    for (a, e) in indices.iter().zip(&evals) {
        println!("{a:>6} {:>12.4} {:>12.4}", e.ate_online, e.ate_final);
    }
    if let Some((a, e)) = indices.iter().zip(&evals).min_by(|x, y| x.1.ate_online.total_cmp(&y.1.ate_online)) {
        println!("best index {a} (online ATE {:.4} m)", e.ate_online);
    }
    Ok(sink.finish())
}

fn cmd_trigger_only(cli: &Cli) -> Result<Outputs> {
    let scenario = scenario_from_cli(cli)?;
    let cfg = base_config(cli, &scenario, Activation::AfterEpochs(usize::MAX));
    let result = run_two_stage(&scenario.imu, &scenario.gnss, &cfg)?;
    let mut sink = Sink::new(&cli.out)?;
    sink.write_with("trigger_trace.csv", |w| result.trace.write_csv(w).map_err(std::io::Error::other))?;
    println!("{:>4} {:>12} {:>12} {:>6}", "k", "rho", "delta_rho", "fired");
    for r in &result.trace.records {
        println!("{:>4} {:>12.4e} {:>12.4e} {:>6}", r.k, r.rho, r.delta_rho, r.fired);
    }
    match result.trace.k_star {
        Some(k) => println!("k* = {k} (threshold {})", cli.threshold),
        None => println!("k* never fired (threshold {})", cli.threshold),
    }
    Ok(sink.finish())
}

fn lie_deviation_rows(x: &LieInputs) -> Result<Vec<(usize, f64)>> {
    (1..=3)
        .map(|k| Ok((k, verify_lie_stack_numerically(k, x, |t| flow_outputs(x, t).flatten())?)))
        .collect()
}

fn cmd_observability(cli: &Cli) -> Result<Outputs> {
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let x = LieInputs::random(&mut rng);
    let g = GravityDirection::from_vector(x.gravity).unwrap_or_else(GravityDirection::down);
    let mag = x.gravity.norm();
    let build = |opts: ObservabilityOptions| {
        build_observability_matrix(&x.state_i, &x.state_j, &x.gyro_bias, &g, mag, x.dt, &opts)
    };
    let full = build(ObservabilityOptions::default())?;
    let fixed = build(ObservabilityOptions { gauge_fixed: true, include_rate: true, ..Default::default() })?;
    let reduced = fixed.marginalize("w")?;
    let sv = singular_values(&reduced.matrix);
    let null = nullspace(&reduced.matrix, DEFAULT_RANK_TOL);
    let dg = rank_dg(&x, MAX_LIE_ORDER, DEFAULT_RANK_TOL)?;
    for k in 4..=MAX_LIE_ORDER {
        lie_derivative_stack(k, &x)?;
    }
    let deviations = lie_deviation_rows(&x)?;

    let mut sink = Sink::new(&cli.out)?;
    sink.write_with("singular_values.csv", |w| {
        writeln!(w, "index,sigma")?;
        sv.iter().enumerate().try_for_each(|(i, s)| writeln!(w, "{i},{s}"))
    })?;
    sink.write_with("nullspace.csv", |w| {
        let labels: Vec<String> = reduced
            .cols
            .iter()
            .flat_map(|b| (0..b.dim).map(move |i| format!("{}[{i}]", b.label)))
            .collect();
        writeln!(w, "{}", labels.join(","))?;
        for c in 0..null.ncols() {
            let row: Vec<String> = null.column(c).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })?;

    println!("columns (full)              {}", full.matrix.ncols());
    println!("rank (full)                 {}", full.rank(DEFAULT_RANK_TOL));
    println!("rank (gauge-fixed, with ω)  {}", fixed.rank(DEFAULT_RANK_TOL));
    println!("rank (gauge-fixed, ω elim.) {} of {}", reduced.rank(DEFAULT_RANK_TOL), reduced.matrix.ncols());
    println!("singular values             {}", fmt_list(&sv));
    println!("nullspace dimension         {}", null.ncols());
    for (k, d) in &deviations {
        println!("Lie order {k} deviation      {d:.3e}");
    }
    for k in 4..=MAX_LIE_ORDER {
        println!("rotation coefficients k={k}  {:?}", rotation_row_coefficients(k));
    }
    println!("rank(dG)                    {} (dynamics {})", dg.rank, dg.dynamics_rank);
    Ok(sink.finish())
}

fn cmd_lie_check(cli: &Cli) -> Result<Outputs> {
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let mut rows = Vec::new();
    let mut ranks = Vec::new();
    for s in 0..cli.states {
        let x = LieInputs::random(&mut rng);
        for (k, d) in lie_deviation_rows(&x)? {
            rows.push((s, k, d));
        }
        ranks.push(rank_dg(&x, MAX_LIE_ORDER, DEFAULT_RANK_TOL)?.rank);
    }
    let mut sink = Sink::new(&cli.out)?;
    sink.write_with("lie_check.csv", |w| {
        writeln!(w, "state,order,relative_deviation")?;
        rows.iter().try_for_each(|(s, k, d)| writeln!(w, "{s},{k},{d}"))
    })?;
    sink.write_with("dg_rank.csv", |w| {
        writeln!(w, "state,rank")?;
        ranks.iter().enumerate().try_for_each(|(s, r)| writeln!(w, "{s},{r}"))
    })?;
    for k in 1..=3 {
        let worst = rows.iter().filter(|r| r.1 == k).map(|r| r.2).fold(0.0, f64::max);
        println!("order {k}: worst relative deviation {worst:.3e} over {} states", cli.states);
    }
    for k in 4..=MAX_LIE_ORDER {
        println!("order {k}: rotation coefficients {:?}", rotation_row_coefficients(k));
    }
    let generic = ranks.iter().filter(|&&r| r == 7).count();
    println!("rank(dG) = 7 at {generic}/{} states", ranks.len());
    Ok(sink.finish())
}

fn cmd_simulate(cli: &Cli) -> Result<Outputs> {
    let sensors = SensorConfig {
        rng_seed: cli.seed,
        gnss_noise_sigma: cli.sigma_gnss,
        gyro_noise_sigma: cli.gyro_noise.unwrap_or(SIM_GYRO_SIGMA),
        accel_noise_sigma: cli.accel_noise.unwrap_or(SIM_ACCEL_SIGMA),
        ..SensorConfig::default()
    };
    let model = cli.trajectory.model(cli.duration);
    let sim = generate(&model, &sensors)?;
    let gt: Vec<GroundTruthSample> = sim
        .truth
        .iter()
        .map(|s| GroundTruthSample {
            timestamp: s.timestamp,
            rotation: s.rotation,
            position: s.position,
            velocity: Some(s.velocity),
        })
        .collect();
    let mut sink = Sink::new(&cli.out)?;
    write_imu(&sink.path("imu.csv"), &sim.imu)?;
    write_groundtruth(&sink.path("groundtruth.csv"), &gt)?;
    write_gnss(&sink.path("gnss.csv"), &sim.gnss)?;
    sink.json("trajectory.json", &model)?;
    println!(
        "{} samples, {} GNSS epochs over {:.1} s (timestamps in seconds)",
        sim.imu.len(),
        sim.gnss.len(),
        model.duration
    );
    Ok(sink.finish())
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" ")
}

/// Runs the command selected by `cli.mode`.
pub fn execute(cli: &Cli) -> Result<Outputs> {
    if !(cli.sigma_gnss > 0.0 && cli.sigma_gnss.is_finite()) {
        return Err(Error::Config(format!("--sigma-gnss must be positive, got {}", cli.sigma_gnss)));
    }
    if !(cli.threshold > 0.0) {
        return Err(Error::Config(format!("--threshold must be positive, got {}", cli.threshold)));
    }
    match cli.mode.ok_or_else(|| Error::Config("--mode is required".into()))? {
        Mode::Init => cmd_init(cli),
        Mode::Sweep => cmd_sweep(cli),
        Mode::TriggerOnly => cmd_trigger_only(cli),
        Mode::Observability => cmd_observability(cli),
        Mode::LieCheck => cmd_lie_check(cli),
        Mode::Simulate => cmd_simulate(cli),
    }
}

/// Entry point of the binary: zero exit status iff the outputs were written.
pub fn main_with_args<I, T>(args: I) -> std::process::ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse_args(args) {
        Ok(cli) => cli,
        Err(ParseFailure::Clap(e)) => e.exit(),
        Err(ParseFailure::Config(e)) => {
            eprintln!("error: {e}");
            return std::process::ExitCode::FAILURE;
        }
    };
    match execute(&cli) {
        Ok(out) => {
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}
