//! Experiment configuration, the job runner and result persistence.
//!
//! A run directory holds `manifest.json` plus one `traj_<label>_<idx>.csv` per
//! trajectory, where `idx` is the job index. The manifest embeds the full
//! configuration, so a run can be reproduced from its own output.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrotterError};
use crate::evolve::KrylovConfig;
use crate::noise::{
    ensemble_noise_run, lindblad_oracle, timing_noise_run, LindbladConfig, LindbladGenerator, NoiseConfig,
    NoiseDistribution, NoiseKind, MAX_LINDBLAD_SITES,
};
use crate::observables::{
    ipr_dynamical, otoc_run, run_dynamics, stroboscopic_average, trotter_error_trajectory, LongTimeAverage,
    ObservableKind, TrajectoryMeta, TrajectoryRecord,
};
use crate::perturbation::{
    compute_coefficients, global_trotter_defect, lloyd_commutator_bound, DEFAULT_DEGENERACY_TOL, MAX_LLOYD_SITES,
    MAX_MAGNUS_SITES,
};
use crate::spin::IsingModel;
use crate::CODE_VERSION;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

pub const DEFAULT_TAU_MIN: f64 = 0.02;
pub const DEFAULT_TAU_MAX: f64 = 2.5;
pub const DEFAULT_TAU_POINTS: usize = 16;

pub const DEFAULT_STEPS: usize = 20_000;
pub const DEFAULT_WINDOW: usize = 10_000;
pub const OTOC_STEPS: usize = 1_000;
pub const OTOC_WINDOW: usize = 300;
/// From this size on the defaults shrink to `LARGE_N_STEPS`/`LARGE_N_WINDOW`.
pub const LARGE_N: usize = 18;
pub const LARGE_N_STEPS: usize = 2_000;
pub const LARGE_N_WINDOW: usize = 1_000;
/// Simulated time of a `collapse` run when `n_steps` is not given.
pub const COLLAPSE_TIME: f64 = 20.0;
/// Total time `t = nτ` of a `lloyd-bound` run when not given.
pub const LLOYD_TIME: f64 = 10.0;
/// Fewest grid points `locate_threshold` accepts.
pub const MIN_THRESHOLD_POINTS: usize = 8;

/// `points` values from `min` to `max`, evenly spaced in `log τ`.
pub fn log_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![min],
        _ => {
            let (a, b) = (min.ln(), max.ln());
            let step = (b - a) / (points - 1) as f64;
            let mut grid: Vec<f64> = (0..points).map(|k| (a + step * k as f64).exp()).collect();
            grid[0] = min;
            grid[points - 1] = max;
            grid
        }
    }
}

pub fn default_tau_grid() -> Vec<f64> {
    log_grid(DEFAULT_TAU_MIN, DEFAULT_TAU_MAX, DEFAULT_TAU_POINTS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Observable trajectories for every τ.
    Dynamics,
    /// `ΔM(t)/(hτ)²` against the exact evolution.
    Collapse,
    /// Dynamical IPR and the `λ_IPR/λ_D` ratio.
    IprSweep,
    /// Long-time OTO correlator.
    OtocSweep,
    /// Long-time `Q_E` and `M`.
    QeSweep,
    /// Perturbative coefficients `q_E` and `m`.
    Coeffs,
    /// Noisy gates, optionally with the Lindblad oracle.
    Noise,
    /// Lloyd commutator bound against the actual global defect.
    LloydBound,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Dynamics,
        Experiment::Collapse,
        Experiment::IprSweep,
        Experiment::OtocSweep,
        Experiment::QeSweep,
        Experiment::Coeffs,
        Experiment::Noise,
        Experiment::LloydBound,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Dynamics => "dynamics",
            Experiment::Collapse => "collapse",
            Experiment::IprSweep => "ipr-sweep",
            Experiment::OtocSweep => "otoc-sweep",
            Experiment::QeSweep => "qe-sweep",
            Experiment::Coeffs => "coeffs",
            Experiment::Noise => "noise",
            Experiment::LloydBound => "lloyd-bound",
        }
    }

    /// Scalar that `locate_threshold` tracks for this experiment, if any.
    pub fn threshold_quantity(&self) -> Option<&'static str> {
        match self {
            Experiment::QeSweep => Some("Q_E"),
            Experiment::IprSweep => Some("ratio"),
            _ => None,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = TrotterError;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| TrotterError::Config(format!("unknown experiment `{s}`")))
    }
}

/// The `[noise]` table of a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: NoiseKind,
    pub etas: Vec<f64>,
    pub realizations: usize,
    #[serde(default)]
    pub distribution: NoiseDistribution,
    /// Also integrate the master equation (timing noise, small chains only).
    #[serde(default)]
    pub lindblad: bool,
    #[serde(default)]
    pub lindblad_generator: LindbladGenerator,
}

fn default_observables() -> Vec<ObservableKind> {
    ObservableKind::ALL.to_vec()
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn default_degeneracy_tol() -> f64 {
    DEFAULT_DEGENERACY_TOL
}

/// A complete, schema-versioned experiment description (TOML on disk).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    pub model: IsingModel,
    #[serde(default = "default_tau_grid")]
    pub tau_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    /// Trailing averaging window in periods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    /// Simulated time, for `collapse` and `lloyd-bound`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_time: Option<f64>,
    #[serde(default = "default_observables")]
    pub observables: Vec<ObservableKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSection>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_degeneracy_tol")]
    pub degeneracy_tol: f64,
}

impl ExperimentConfig {
    /// A configuration with every optional field at its default.
    pub fn new(experiment: Experiment, model: IsingModel) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            experiment,
            model,
            tau_grid: default_tau_grid(),
            n_steps: None,
            window: None,
            total_time: None,
            observables: default_observables(),
            noise: None,
            seed: 0,
            output: default_output(),
            workers: default_workers(),
            degeneracy_tol: DEFAULT_DEGENERACY_TOL,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| TrotterError::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| TrotterError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| TrotterError::Config(e.to_string()))
    }

    /// Periods per trajectory for a given τ.
    pub fn steps_for(&self, tau: f64) -> usize {
        if let Some(n) = self.n_steps {
            return n;
        }
        match self.experiment {
            Experiment::Collapse => (self.total_time.unwrap_or(COLLAPSE_TIME) / tau).round().max(1.0) as usize,
            Experiment::LloydBound => (self.total_time.unwrap_or(LLOYD_TIME) / tau).round().max(1.0) as usize,
            Experiment::OtocSweep => OTOC_STEPS,
            _ if self.model.n >= LARGE_N => LARGE_N_STEPS,
            _ => DEFAULT_STEPS,
        }
    }

    /// Trailing window in periods for a given τ.
    pub fn window_for(&self, tau: f64) -> usize {
        if let Some(w) = self.window {
            return w;
        }
        match self.experiment {
            Experiment::OtocSweep => OTOC_WINDOW,
            Experiment::Collapse => (self.steps_for(tau) + 1) / 2,
            _ if self.model.n >= LARGE_N => LARGE_N_WINDOW,
            _ => DEFAULT_WINDOW,
        }
    }

    /// Checks everything a run needs; called before any file is touched.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TrotterError::Config(msg));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.model.validate().map_err(|e| TrotterError::Config(format!("model: {e}")))?;
        if self.tau_grid.is_empty() {
            return bad("tau_grid is empty".into());
        }
        if let Some(t) = self.tau_grid.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return bad(format!("tau_grid entries must be finite and positive, got {t}"));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.n_steps == Some(0) {
            return bad("n_steps must be at least 1".into());
        }
        if self.window == Some(0) {
            return bad("window must be at least 1".into());
        }
        if let Some(t) = self.total_time {
            if !(t.is_finite() && t > 0.0) {
                return bad(format!("total_time must be finite and positive, got {t}"));
            }
        }
        if !(self.degeneracy_tol >= 0.0) {
            return bad("degeneracy_tol must be non-negative".into());
        }
        let n = self.model.n;
        let cap = |max: usize, what: &str| -> Result<()> {
            if n > max {
                return Err(TrotterError::Config(format!("{what} supports N <= {max}, got N = {n}")));
            }
            Ok(())
        };
        for &tau in &self.tau_grid {
            let (steps, window) = (self.steps_for(tau), self.window_for(tau));
            let needed = match self.experiment {
                Experiment::IprSweep => 2 * window,
                Experiment::Dynamics | Experiment::QeSweep | Experiment::OtocSweep | Experiment::Collapse => window,
                _ => 0,
            };
            if needed > steps + 1 {
                return bad(format!(
                    "window of {window} periods does not fit {steps} periods at tau = {tau} ({} needs {needed} samples)",
                    self.experiment
                ));
            }
        }
        match self.experiment {
            Experiment::Coeffs => cap(MAX_MAGNUS_SITES, "coeffs")?,
            Experiment::LloydBound => cap(MAX_LLOYD_SITES, "lloyd-bound")?,
            Experiment::Dynamics if self.observables.is_empty() => return bad("observables is empty".into()),
            _ => {}
        }
        match (&self.noise, self.experiment) {
            (None, Experiment::Noise) => return bad("experiment `noise` needs a [noise] table".into()),
            (Some(ns), Experiment::Noise) => {
                if ns.etas.is_empty() {
                    return bad("noise.etas is empty".into());
                }
                if let Some(e) = ns.etas.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
                    return bad(format!("noise.etas entries must be finite and positive, got {e}"));
                }
                if ns.realizations < 2 {
                    return bad("noise.realizations must be at least 2".into());
                }
                if ns.lindblad {
                    if ns.kind != NoiseKind::Timing {
                        return bad("the Lindblad oracle models timing noise only".into());
                    }
                    cap(MAX_LINDBLAD_SITES, "the Lindblad oracle")?;
                }
            }
            (Some(_), e) => warn!("[noise] table ignored by experiment `{e}`"),
            (None, _) => {}
        }
        Ok(())
    }

    /// The jobs of this configuration, in manifest order.
    pub fn jobs(&self) -> Vec<JobSpec> {
        let mut jobs = Vec::new();
        let mut push = |tau: Option<f64>, eta: Option<f64>, task: Task| {
            let idx = jobs.len();
            jobs.push(JobSpec { idx, tau, eta, task });
        };
        match self.experiment {
            Experiment::Coeffs => push(None, None, Task::Coeffs),
            Experiment::Noise => {
                let ns = self.noise.as_ref().expect("validated");
                for &tau in &self.tau_grid {
                    for &eta in &ns.etas {
                        push(Some(tau), Some(eta), Task::Noise);
                        if ns.lindblad {
                            push(Some(tau), Some(eta), Task::Lindblad);
                        }
                    }
                }
            }
            e => {
                let task = match e {
                    Experiment::Dynamics => Task::Dynamics,
                    Experiment::Collapse => Task::Collapse,
                    Experiment::IprSweep => Task::Ipr,
                    Experiment::OtocSweep => Task::Otoc,
                    Experiment::QeSweep => Task::Qe,
                    _ => Task::Lloyd,
                };
                for &tau in &self.tau_grid {
                    push(Some(tau), None, task);
                }
            }
        }
        jobs
    }

    /// Noise seed of one job. Jobs get decorrelated streams so that curves
    /// for different (τ, η) are statistically independent.
    pub fn job_seed(&self, idx: usize) -> u64 {
        self.seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Dynamics,
    Collapse,
    Ipr,
    Otoc,
    Qe,
    Coeffs,
    Noise,
    Lindblad,
    Lloyd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JobSpec {
    pub idx: usize,
    pub tau: Option<f64>,
    pub eta: Option<f64>,
    pub task: Task,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Ok,
    Failed,
}

/// One trajectory file written by a job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub label: String,
    /// File name relative to the run directory.
    pub file: String,
    pub meta: TrajectoryMeta,
}

/// Manifest entry of a job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub idx: usize,
    pub task: Task,
    pub tau: Option<f64>,
    pub eta: Option<f64>,
    pub n_steps: Option<usize>,
    pub seed: Option<u64>,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub scalars: BTreeMap<String, f64>,
    #[serde(default)]
    pub long_time: BTreeMap<String, LongTimeAverage>,
    #[serde(default)]
    pub trajectories: Vec<TrajectoryFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<serde_json::Value>,
    pub wall_seconds: f64,
}

impl JobRecord {
    fn pending(spec: &JobSpec) -> Self {
        Self {
            idx: spec.idx,
            task: spec.task,
            tau: spec.tau,
            eta: spec.eta,
            n_steps: None,
            seed: None,
            status: JobStatus::Pending,
            error: None,
            scalars: BTreeMap::new(),
            long_time: BTreeMap::new(),
            trajectories: Vec::new(),
            data: None,
            wall_seconds: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Partial,
}

/// A located crossover, with the grid spacing around it as uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tau: f64,
    pub uncertainty: f64,
    /// Grid points bracketing the crossing.
    pub lower_tau: f64,
    pub upper_tau: f64,
    pub low_plateau: f64,
    pub high_plateau: f64,
    pub midpoint: f64,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub manifest_schema_version: u32,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub status: RunStatus,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub jobs: Vec<JobRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Threshold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_error: Option<String>,
}

impl ResultBundle {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let bundle: Self = serde_json::from_str(&text)?;
        if bundle.manifest_schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(TrotterError::Config(format!(
                "manifest schema {} is not supported",
                bundle.manifest_schema_version
            )));
        }
        Ok(bundle)
    }

    /// Writes the manifest through a temporary file, so readers never see a
    /// half-written one.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        fs::rename(&tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }

    pub fn failed_jobs(&self) -> impl Iterator<Item = &JobRecord> {
        self.jobs.iter().filter(|j| j.status == JobStatus::Failed)
    }

    /// 0 if every job succeeded, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.jobs.iter().all(|j| j.status == JobStatus::Ok) {
            0
        } else {
            3
        }
    }

    /// `(τ, value)` of a scalar over the successful jobs, sorted by τ.
    pub fn series(&self, quantity: &str) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self
            .jobs
            .iter()
            .filter(|j| j.status == JobStatus::Ok)
            .filter_map(|j| Some((j.tau?, *j.scalars.get(quantity)?)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    }

    /// Reads a trajectory of a job back from its CSV.
    pub fn trajectory(&self, dir: &Path, job: usize, label: &str) -> Result<TrajectoryRecord> {
        let f = self
            .jobs
            .get(job)
            .and_then(|j| j.trajectories.iter().find(|t| t.label == label))
            .ok_or_else(|| TrotterError::Config(format!("job {job} has no trajectory `{label}`")))?;
        TrajectoryRecord::read_csv(&dir.join(&f.file), f.meta.clone())
    }
}

fn median3(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

/// Finds where `values` first rises through the midpoint between its
/// small-τ plateau (median of the first three points) and its large-τ plateau
/// (median of the last three). Interpolates linearly in `log τ`.
pub fn locate_crossing(points: &[(f64, f64)]) -> Result<Threshold> {
    if points.len() < MIN_THRESHOLD_POINTS {
        return Err(TrotterError::ThresholdNotFound(format!(
            "need at least {MIN_THRESHOLD_POINTS} grid points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(t, v)| !(t.is_finite() && *t > 0.0 && v.is_finite())) {
        return Err(TrotterError::ThresholdNotFound("non-finite grid point".into()));
    }
    let values: Vec<f64> = points.iter().map(|p| p.1).collect();
    let low = median3(&values[..3]);
    let high = median3(&values[values.len() - 3..]);
    let midpoint = 0.5 * (low + high);
    let diag = format!("low plateau {low:.4}, high plateau {high:.4}");
    if !(high > low) {
        return Err(TrotterError::ThresholdNotFound(format!("no rise across the grid ({diag})")));
    }
    for w in points.windows(2) {
        let ((t0, v0), (t1, v1)) = (w[0], w[1]);
        if v0 < midpoint && v1 >= midpoint {
            let frac = (midpoint - v0) / (v1 - v0);
            let tau = (t0.ln() + frac * (t1.ln() - t0.ln())).exp();
            return Ok(Threshold {
                tau,
                uncertainty: t1 - t0,
                lower_tau: t0,
                upper_tau: t1,
                low_plateau: low,
                high_plateau: high,
                midpoint,
            });
        }
    }
    Err(TrotterError::ThresholdNotFound(format!("no crossing of the midpoint {midpoint:.4} ({diag})")))
}

/// Threshold of a `qe-sweep` (long-time `Q_E`) or `ipr-sweep` (λ ratio) bundle.
pub fn locate_threshold(bundle: &ResultBundle) -> Result<Threshold> {
    let quantity = bundle.config.experiment.threshold_quantity().ok_or_else(|| {
        TrotterError::ThresholdNotFound(format!("experiment `{}` has no threshold quantity", bundle.config.experiment))
    })?;
    locate_threshold_of(bundle, quantity)
}

/// Threshold of an arbitrary per-τ scalar of a bundle.
pub fn locate_threshold_of(bundle: &ResultBundle, quantity: &str) -> Result<Threshold> {
    locate_crossing(&bundle.series(quantity))
}

/// Job outputs before they are merged into the manifest.
#[derive(Default)]
struct JobOutput {
    scalars: BTreeMap<String, f64>,
    long_time: BTreeMap<String, LongTimeAverage>,
    trajectories: Vec<TrajectoryFile>,
    data: Option<serde_json::Value>,
}

impl JobOutput {
    fn save(&mut self, dir: &Path, idx: usize, label: &str, traj: &TrajectoryRecord) -> Result<()> {
        let file = format!("traj_{label}_{idx}.csv");
        traj.write_csv(&dir.join(&file))?;
        self.trajectories.push(TrajectoryFile { label: label.to_string(), file, meta: traj.meta.clone() });
        Ok(())
    }

    fn average(&mut self, key: &str, traj: &TrajectoryRecord, window: usize) -> Result<LongTimeAverage> {
        let avg = stroboscopic_average(traj, window)?;
        self.long_time.insert(key.to_string(), avg);
        self.scalars.insert(key.to_string(), avg.mean);
        Ok(avg)
    }
}

fn with_window(mut traj: TrajectoryRecord, window: usize) -> TrajectoryRecord {
    traj.meta.window_start_period = Some(traj.len() - window.min(traj.len()));
    traj.meta.window_len = Some(window);
    traj
}

fn run_job(cfg: &ExperimentConfig, spec: &JobSpec, dir: &Path, record: &mut JobRecord) -> Result<JobOutput> {
    let model = &cfg.model;
    let idx = spec.idx;
    let mut out = JobOutput::default();
    let tau = spec.tau.unwrap_or(f64::NAN);
    let (steps, window) = (cfg.steps_for(tau), cfg.window_for(tau));
    if spec.tau.is_some() {
        record.n_steps = Some(steps);
    }
    match spec.task {
        Task::Dynamics | Task::Qe => {
            let kinds: Vec<ObservableKind> = if spec.task == Task::Qe {
                vec![ObservableKind::Accuracy, ObservableKind::Magnetization]
            } else {
                cfg.observables.clone()
            };
            for traj in run_dynamics(model, tau, steps, &kinds)? {
                let traj = with_window(traj, window);
                let label = traj.meta.observable.clone();
                if traj.meta.observable != ObservableKind::Energy.label() {
                    traj.checked_real()?;
                }
                out.average(&label, &traj, window)?;
                out.save(dir, idx, &label, &traj)?;
            }
            if let Some(q) = out.scalars.get("Q_E").copied() {
                out.scalars.insert("Q_E_over_htau2".into(), q / (model.h * tau).powi(2));
            }
        }
        Task::Collapse => {
            let err = trotter_error_trajectory(model, tau, steps, &KrylovConfig::default())?;
            let norm = with_window(err.normalized, window);
            out.average("dM_norm", &norm, window)?;
            out.save(dir, idx, "dM_norm", &norm)?;
            out.save(dir, idx, "dM", &err.delta_m)?;
            out.save(dir, idx, "dM_signed", &err.signed)?;
            out.save(dir, idx, "M_trotter", &err.trotter)?;
            out.save(dir, idx, "M_exact", &err.exact)?;
        }
        Task::Ipr => {
            let (res, traj) = ipr_dynamical(model, tau, steps, window)?;
            out.scalars.insert("ipr".into(), res.ipr);
            out.scalars.insert("lambda_ipr".into(), res.lambda_ipr);
            out.scalars.insert("lambda_d".into(), res.lambda_d);
            out.scalars.insert("ratio".into(), res.ratio);
            out.scalars.insert("ratio_full_space".into(), res.ratio_full_space);
            out.scalars.insert("accessible_states".into(), res.accessible_states as f64);
            out.long_time.insert("P".into(), res.loschmidt);
            out.save(dir, idx, "P", &traj)?;
        }
        Task::Otoc => {
            let res = otoc_run(model, tau, steps, window)?;
            out.scalars.insert("F_re_norm".into(), res.re_normalized.mean);
            out.scalars.insert("F_abs_norm".into(), res.abs_normalized.mean);
            out.long_time.insert("F_re_norm".into(), res.re_normalized);
            out.long_time.insert("F_abs_norm".into(), res.abs_normalized);
            out.save(dir, idx, "F", &res.trajectory)?;
        }
        Task::Coeffs => {
            let c = compute_coefficients(model, cfg.degeneracy_tol)?;
            out.scalars.insert("q_e".into(), c.qe.q_e);
            out.scalars.insert("m".into(), c.m.m);
            out.data = Some(serde_json::to_value(&c)?);
        }
        Task::Noise => {
            let ns = cfg.noise.as_ref().expect("validated");
            let seed = cfg.job_seed(idx);
            record.seed = Some(seed);
            let mut nc = NoiseConfig::new(ns.kind, spec.eta.expect("noise job"), ns.realizations, seed)?;
            nc.distribution = ns.distribution;
            let runs = match ns.kind {
                NoiseKind::Timing => vec![timing_noise_run(model, tau, steps, &nc)?],
                NoiseKind::Ensemble => ensemble_noise_run(model, tau, steps, &nc)?,
            };
            for run in runs {
                let label = run.mean.meta.observable.clone();
                out.scalars.insert(format!("{label}_final"), run.mean.values.last().map_or(f64::NAN, |v| v.re));
                out.save(dir, idx, &format!("{label}_mean"), &run.mean)?;
                out.save(dir, idx, &format!("{label}_stderr"), &run.stderr)?;
            }
        }
        Task::Lindblad => {
            let ns = cfg.noise.as_ref().expect("validated");
            let lc = LindbladConfig { generator: ns.lindblad_generator, distribution: ns.distribution, ..Default::default() };
            let run = lindblad_oracle(model, tau, spec.eta.expect("noise job"), steps as f64 * tau, &lc)?;
            out.scalars.insert("max_trace_drift".into(), run.max_trace_drift);
            out.scalars.insert("max_hermiticity_defect".into(), run.max_hermiticity_defect);
            out.scalars.insert("Q_E_final".into(), run.accuracy.values.last().map_or(f64::NAN, |v| v.re));
            out.save(dir, idx, "Q_E_lindblad", &run.accuracy)?;
        }
        Task::Lloyd => {
            let t = steps as f64 * tau;
            out.scalars.insert("time".into(), t);
            out.scalars.insert("lloyd_bound".into(), lloyd_commutator_bound(model, t, steps)?);
            out.scalars.insert("global_defect".into(), global_trotter_defect(model, t, steps)?);
        }
    }
    Ok(out)
}

/// Validates `cfg`, then runs every job on a pool of `cfg.workers` threads,
/// writing trajectories and the manifest into `cfg.output`.
///
/// Failed jobs are recorded in the manifest and do not stop the others.
/// Only configuration and I/O problems with the run directory are returned as
/// errors.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultBundle> {
    cfg.validate()?;
    let dir = cfg.output.clone();
    fs::create_dir_all(&dir)?;
    let specs = cfg.jobs();
    let started = Instant::now();
    let bundle = ResultBundle {
        manifest_schema_version: MANIFEST_SCHEMA_VERSION,
        code_version: CODE_VERSION.to_string(),
        config: cfg.clone(),
        status: RunStatus::Running,
        started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        wall_seconds: 0.0,
        jobs: specs.iter().map(JobRecord::pending).collect(),
        threshold: None,
        threshold_error: None,
    };
    bundle.write(&dir)?;
    let shared = Mutex::new(bundle);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| TrotterError::Config(format!("cannot start worker pool: {e}")))?;
    let write_errors: Vec<TrotterError> = pool.install(|| {
        specs
            .par_iter()
            .filter_map(|spec| {
                let t0 = Instant::now();
                let mut record = JobRecord::pending(spec);
                match run_job(cfg, spec, &dir, &mut record) {
                    Ok(out) => {
                        record.status = JobStatus::Ok;
                        record.scalars = out.scalars;
                        record.long_time = out.long_time;
                        record.trajectories = out.trajectories;
                        record.data = out.data;
                    }
                    Err(e) => {
                        warn!("job {} ({:?}, tau = {:?}) failed: {e}", spec.idx, spec.task, spec.tau);
                        record.status = JobStatus::Failed;
                        record.error = Some(e.to_string());
                    }
                }
                record.wall_seconds = t0.elapsed().as_secs_f64();
                info!("job {} done in {:.1} s", spec.idx, record.wall_seconds);
                let mut b = shared.lock().expect("manifest lock");
                b.jobs[spec.idx] = record;
                b.wall_seconds = started.elapsed().as_secs_f64();
                b.write(&dir).err()
            })
            .collect()
    });
    if let Some(e) = write_errors.into_iter().next() {
        return Err(e);
    }
    let mut bundle = shared.into_inner().expect("manifest lock");
    bundle.status = if bundle.exit_code() == 0 { RunStatus::Complete } else { RunStatus::Partial };
    if cfg.experiment.threshold_quantity().is_some() {
        match locate_threshold(&bundle) {
            Ok(t) => bundle.threshold = Some(t),
            Err(e) => bundle.threshold_error = Some(e.to_string()),
        }
    }
    bundle.wall_seconds = started.elapsed().as_secs_f64();
    bundle.write(&dir)?;
    Ok(bundle)
}
