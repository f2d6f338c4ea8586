//! Measured quantities: magnetization, energy and accuracy trajectories,
//! stroboscopic averages, the dynamical IPR and the OTO correlator.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrotterError};
use crate::evolve::{krylov_evolve, renormalize_if_drifted, KrylovConfig, TrotterStepper, RENORM_INTERVAL};
use crate::spin::{
    apply_h, hz_diagonal, magnetization_diagonal, make_all_up_state, reflection_even_dimension, DiagonalObservable,
    IsingModel, SpinState,
};
use crate::CODE_VERSION;

/// Imaginary parts above this are reported as a contract violation.
pub const REALNESS_TOL: f64 = 1e-10;
/// Normalization of the OTO correlator.
pub const OTOC_F0: f64 = 0.125;

/// Descriptive header attached to every trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub label: String,
    pub observable: String,
    pub model: IsingModel,
    /// Sampling interval: the Trotter step, or the reference grid spacing.
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_start_period: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub code_version: String,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl TrajectoryMeta {
    pub fn new(label: impl Into<String>, observable: impl Into<String>, model: &IsingModel, tau: f64) -> Self {
        Self {
            label: label.into(),
            observable: observable.into(),
            model: *model,
            tau,
            window_start_period: None,
            window_len: None,
            seed: None,
            code_version: CODE_VERSION.to_string(),
            extra: serde_json::Map::new(),
        }
    }
}

/// An observable sampled at stroboscopic times `t_k = k·τ`, `k = 0, 1, …`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub meta: TrajectoryMeta,
    pub values: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryJson {
    meta: TrajectoryMeta,
    step: Vec<usize>,
    time: Vec<f64>,
    value_re: Vec<f64>,
    value_im: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    step: usize,
    time: f64,
    value_re: f64,
    value_im: f64,
}

impl TrajectoryRecord {
    pub fn new(meta: TrajectoryMeta) -> Self {
        Self { meta, values: Vec::new() }
    }

    pub fn from_real(meta: TrajectoryMeta, values: &[f64]) -> Self {
        Self { meta, values: values.iter().map(|&v| Complex64::new(v, 0.0)).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.meta.tau
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn push(&mut self, v: Complex64) {
        self.values.push(v);
    }

    pub fn push_real(&mut self, v: f64) {
        self.values.push(Complex64::new(v, 0.0));
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// Largest imaginary part in the series.
    pub fn max_imag(&self) -> f64 {
        self.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }

    /// Real parts, after checking every imaginary part is below `REALNESS_TOL`.
    pub fn checked_real(&self) -> Result<Vec<f64>> {
        let im = self.max_imag();
        if im > REALNESS_TOL {
            return Err(TrotterError::Contract(format!(
                "{} has imaginary part {im:e} above {REALNESS_TOL:e}",
                self.meta.label
            )));
        }
        Ok(self.real_parts())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for (k, v) in self.values.iter().enumerate() {
            w.serialize(CsvRow { step: k, time: self.time(k), value_re: v.re, value_im: v.im })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the value columns back; the header must be supplied separately.
    pub fn read_csv(path: &Path, meta: TrajectoryMeta) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut values = Vec::new();
        for (k, row) in r.deserialize::<CsvRow>().enumerate() {
            let row = row?;
            if row.step != k {
                return Err(TrotterError::Contract(format!("non-consecutive step {} at row {k}", row.step)));
            }
            values.push(Complex64::new(row.value_re, row.value_im));
        }
        Ok(Self { meta, values })
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = TrajectoryJson {
            meta: self.meta.clone(),
            step: (0..self.len()).collect(),
            time: self.times(),
            value_re: self.values.iter().map(|v| v.re).collect(),
            value_im: self.values.iter().map(|v| v.im).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(self.to_json()?.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TrajectoryJson = serde_json::from_str(text)?;
        if doc.value_re.len() != doc.value_im.len() {
            return Err(TrotterError::DimensionMismatch { expected: doc.value_re.len(), got: doc.value_im.len() });
        }
        let values = doc.value_re.iter().zip(&doc.value_im).map(|(&r, &i)| Complex64::new(r, i)).collect();
        Ok(Self { meta: doc.meta, values })
    }
}

/// Mean and spread of a series over a trailing window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongTimeAverage {
    pub mean: f64,
    pub window_start_period: usize,
    pub window_len: usize,
    /// Population standard deviation over the window.
    pub fluctuation: f64,
}

/// Pairwise summation, so results do not depend on how a caller chunks data.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean and standard deviation of the last `window` entries of `values`.
pub fn trailing_average(values: &[f64], window: usize) -> Result<LongTimeAverage> {
    if window == 0 || window > values.len() {
        return Err(TrotterError::Window { window, len: values.len() });
    }
    let start = values.len() - window;
    let tail = &values[start..];
    let mean = pairwise_sum(tail) / window as f64;
    let sq: Vec<f64> = tail.iter().map(|v| (v - mean) * (v - mean)).collect();
    let fluctuation = (pairwise_sum(&sq) / window as f64).sqrt();
    Ok(LongTimeAverage { mean, window_start_period: start, window_len: window, fluctuation })
}

/// Stroboscopic mean of the real part over the trailing `window` periods.
pub fn stroboscopic_average(traj: &TrajectoryRecord, window: usize) -> Result<LongTimeAverage> {
    trailing_average(&traj.real_parts(), window)
}

/// Observables recorded by [`run_dynamics`] and [`exact_reference`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    /// `M = N⁻¹ Σ S^z_l`.
    Magnetization,
    /// `⟨H⟩`.
    Energy,
    /// `Q_E = (E − E₀)/(E_{T=∞} − E₀)`.
    Accuracy,
    /// Loschmidt probability `|⟨ψ₀|ψ⟩|²`.
    Loschmidt,
}

impl ObservableKind {
    pub const ALL: [ObservableKind; 4] =
        [ObservableKind::Magnetization, ObservableKind::Energy, ObservableKind::Accuracy, ObservableKind::Loschmidt];

    pub fn label(&self) -> &'static str {
        match self {
            ObservableKind::Magnetization => "M",
            ObservableKind::Energy => "E",
            ObservableKind::Accuracy => "Q_E",
            ObservableKind::Loschmidt => "P",
        }
    }
}

/// Evaluates observables on states of one model with fixed `|ψ₀⟩`.
pub struct Probe {
    model: IsingModel,
    hz: DiagonalObservable,
    mag: DiagonalObservable,
    psi0: SpinState,
    e0: f64,
    e_inf: f64,
    scratch: SpinState,
}

impl Probe {
    pub fn new(model: &IsingModel) -> Result<Self> {
        let psi0 = make_all_up_state(model.n)?;
        let hz = hz_diagonal(model);
        let mag = magnetization_diagonal(model.n)?;
        let mut scratch = SpinState::zeros(model.n)?;
        apply_h(&psi0, model, &hz, &mut scratch)?;
        let e0 = psi0.inner(&scratch).re;
        // Every term of H is a traceless Pauli product.
        let e_inf = 0.0;
        Ok(Self { model: *model, hz, mag, psi0, e0, e_inf, scratch })
    }

    pub fn psi0(&self) -> &SpinState {
        &self.psi0
    }

    pub fn e0(&self) -> f64 {
        self.e0
    }

    pub fn accuracy_denominator(&self) -> Result<f64> {
        let d = self.e_inf - self.e0;
        if d.abs() < 1e-12 {
            return Err(TrotterError::IllConditioned("E_inf - E_0 vanishes".into()));
        }
        Ok(d)
    }

    /// `⟨ψ|H|ψ⟩` including its (numerically zero) imaginary part.
    pub fn energy(&mut self, state: &SpinState) -> Result<Complex64> {
        apply_h(state, &self.model, &self.hz, &mut self.scratch)?;
        Ok(state.inner(&self.scratch))
    }

    pub fn magnetization(&self, state: &SpinState) -> f64 {
        self.mag.expectation(state)
    }

    pub fn loschmidt(&self, state: &SpinState) -> f64 {
        self.psi0.inner(state).norm_sqr()
    }

    pub fn measure(&mut self, kind: ObservableKind, state: &SpinState) -> Result<Complex64> {
        Ok(match kind {
            ObservableKind::Magnetization => Complex64::new(self.magnetization(state), 0.0),
            ObservableKind::Energy => self.energy(state)?,
            ObservableKind::Accuracy => {
                let e = self.energy(state)?;
                (e - self.e0) / self.accuracy_denominator()?
            }
            ObservableKind::Loschmidt => Complex64::new(self.loschmidt(state), 0.0),
        })
    }
}

fn new_records(model: &IsingModel, tau: f64, kinds: &[ObservableKind], prefix: &str) -> Vec<TrajectoryRecord> {
    kinds
        .iter()
        .map(|k| {
            let label = format!("{prefix}{}", k.label());
            TrajectoryRecord::new(TrajectoryMeta::new(label, k.label(), model, tau))
        })
        .collect()
}

/// Trotterized dynamics from `|ψ₀⟩`, recording each observable at
/// `k = 0..=n_steps` periods.
pub fn run_dynamics(
    model: &IsingModel,
    tau: f64,
    n_steps: usize,
    kinds: &[ObservableKind],
) -> Result<Vec<TrajectoryRecord>> {
    let stepper = TrotterStepper::new(model, tau)?;
    let mut probe = Probe::new(model)?;
    if kinds.contains(&ObservableKind::Accuracy) {
        probe.accuracy_denominator()?;
    }
    let mut records = new_records(model, tau, kinds, "");
    let mut state = probe.psi0().clone();
    for (rec, k) in records.iter_mut().zip(kinds) {
        rec.push(probe.measure(*k, &state)?);
    }
    stepper.run(&mut state, n_steps, |_, s| {
        for (rec, k) in records.iter_mut().zip(kinds) {
            rec.push(probe.measure(*k, s)?);
        }
        Ok(())
    })?;
    Ok(records)
}

/// Exact dynamics `exp(-iHt)|ψ₀⟩` sampled at `t_k = k·dt`, `k = 0..=n_steps`.
pub fn exact_reference(
    model: &IsingModel,
    dt: f64,
    n_steps: usize,
    kinds: &[ObservableKind],
    cfg: &KrylovConfig,
) -> Result<Vec<TrajectoryRecord>> {
    if !(dt > 0.0) {
        return Err(TrotterError::InvalidParameter("reference grid spacing must be positive".into()));
    }
    let mut probe = Probe::new(model)?;
    let mut records = new_records(model, dt, kinds, "exact_");
    let mut state = probe.psi0().clone();
    for step in 0..=n_steps {
        if step > 0 {
            state = krylov_evolve(&state, model, dt, cfg)?;
            if step % RENORM_INTERVAL == 0 {
                renormalize_if_drifted(&mut state, step);
            }
        }
        for (rec, k) in records.iter_mut().zip(kinds) {
            rec.push(probe.measure(*k, &state)?);
        }
    }
    Ok(records)
}

/// Magnetization error of the Trotterized dynamics against the exact one.
#[derive(Debug, Clone)]
pub struct TrotterErrorTrajectory {
    /// `ΔM(t) = |M_{τ=0}(t) − M_τ(t)|`.
    pub delta_m: TrajectoryRecord,
    /// `ΔM(t)/(hτ)²`.
    pub normalized: TrajectoryRecord,
    /// Signed difference `M_{τ=0}(t) − M_τ(t)`.
    pub signed: TrajectoryRecord,
    pub trotter: TrajectoryRecord,
    pub exact: TrajectoryRecord,
}

pub fn trotter_error_trajectory(
    model: &IsingModel,
    tau: f64,
    n_steps: usize,
    cfg: &KrylovConfig,
) -> Result<TrotterErrorTrajectory> {
    let scale = model.h * tau;
    if scale == 0.0 {
        return Err(TrotterError::IllConditioned("h·tau vanishes".into()));
    }
    let kinds = [ObservableKind::Magnetization];
    let trotter = run_dynamics(model, tau, n_steps, &kinds)?.remove(0);
    let exact = exact_reference(model, tau, n_steps, &kinds, cfg)?.remove(0);
    let signed_vals: Vec<f64> = exact.values.iter().zip(&trotter.values).map(|(a, b)| a.re - b.re).collect();
    let abs_vals: Vec<f64> = signed_vals.iter().map(|d| d.abs()).collect();
    let norm_vals: Vec<f64> = abs_vals.iter().map(|d| d / (scale * scale)).collect();
    let meta = |label: &str| TrajectoryMeta::new(label, label, model, tau);
    Ok(TrotterErrorTrajectory {
        delta_m: TrajectoryRecord::from_real(meta("dM"), &abs_vals),
        normalized: TrajectoryRecord::from_real(meta("dM_norm"), &norm_vals),
        signed: TrajectoryRecord::from_real(meta("dM_signed"), &signed_vals),
        trotter,
        exact,
    })
}

/// Result of the dynamical (Loschmidt-echo) IPR measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IprResult {
    pub ipr: f64,
    pub lambda_ipr: f64,
    pub lambda_d: f64,
    /// `log IPR / −(log D − log 2)`: 0 when localized, 1 when fully delocalized.
    pub ratio: f64,
    /// Number of accessible states `D` entering `λ_D`.
    pub accessible_states: usize,
    /// The ratio with `D = 2^N`, for comparison.
    pub ratio_full_space: f64,
    pub loschmidt: LongTimeAverage,
}

/// `λ_D` and the ratio convention for a given IPR and accessible-state count.
pub fn ipr_rates(ipr: f64, n: usize, d: usize) -> (f64, f64, f64) {
    let nf = n as f64;
    let lambda_ipr = ipr.ln() / nf;
    let log_d = (d as f64).ln() - std::f64::consts::LN_2;
    let lambda_d = log_d / nf;
    let ratio = if log_d > 0.0 { ipr.ln() / -log_d } else { f64::NAN };
    (lambda_ipr, lambda_d, ratio)
}

/// IPR as the stroboscopic mean of `P_n = |⟨ψ₀|ψ(nτ)⟩|²` over the trailing window.
///
/// `D` is the dimension of the reflection-even sector, the space actually
/// explored from the reflection-symmetric `|ψ₀⟩`.
pub fn ipr_dynamical(model: &IsingModel, tau: f64, n_steps: usize, window: usize) -> Result<(IprResult, TrajectoryRecord)> {
    if window == 0 || 2 * window > n_steps + 1 {
        return Err(TrotterError::Window { window: 2 * window, len: n_steps + 1 });
    }
    let traj = run_dynamics(model, tau, n_steps, &[ObservableKind::Loschmidt])?.remove(0);
    let mut traj = traj;
    traj.meta.window_start_period = Some(n_steps + 1 - window);
    traj.meta.window_len = Some(window);
    let avg = stroboscopic_average(&traj, window)?;
    let d = reflection_even_dimension(model.n);
    let (lambda_ipr, lambda_d, ratio) = ipr_rates(avg.mean, model.n, d);
    let (_, _, ratio_full_space) = ipr_rates(avg.mean, model.n, model.dim());
    Ok((
        IprResult { ipr: avg.mean, lambda_ipr, lambda_d, ratio, accessible_states: d, ratio_full_space, loschmidt: avg },
        traj,
    ))
}

/// Result of the OTO-correlator run.
#[derive(Debug, Clone)]
pub struct OtocResult {
    /// Complex `F(nτ)`, `n = 0..=n_steps`.
    pub trajectory: TrajectoryRecord,
    /// Trailing average of `Re F / F₀`.
    pub re_normalized: LongTimeAverage,
    /// Trailing average of `|F| / F₀`.
    pub abs_normalized: LongTimeAverage,
}

/// `F(nτ) = ⟨ψ₁|ψ₂⟩` with `|ψ₁⟩ = W U†VU|ψ₀⟩`, `|ψ₂⟩ = U†VUW|ψ₀⟩` and
/// `V = W = M`, `U` being `n` Trotter periods.
///
/// The forward states are carried along; each time point re-runs the
/// backward evolution from scratch, so the cost grows as `n²`.
pub fn otoc_run(model: &IsingModel, tau: f64, n_steps: usize, window: usize) -> Result<OtocResult> {
    if window == 0 || window > n_steps + 1 {
        return Err(TrotterError::Window { window, len: n_steps + 1 });
    }
    let stepper = TrotterStepper::new(model, tau)?;
    let mag = magnetization_diagonal(model.n)?;
    let psi0 = make_all_up_state(model.n)?;
    let mut fwd_a = psi0.clone();
    let mut fwd_b = psi0.clone();
    mag.apply_in_place(&mut fwd_b);
    let mut meta = TrajectoryMeta::new("F", "OTOC", model, tau);
    meta.window_start_period = Some(n_steps + 1 - window);
    meta.window_len = Some(window);
    let mut trajectory = TrajectoryRecord::new(meta);
    for n in 0..=n_steps {
        if n > 0 {
            stepper.step(&mut fwd_a);
            stepper.step(&mut fwd_b);
            if n % RENORM_INTERVAL == 0 {
                renormalize_if_drifted(&mut fwd_a, n);
            }
        }
        let backward = |src: &SpinState| {
            let mut s = src.clone();
            mag.apply_in_place(&mut s);
            for _ in 0..n {
                stepper.step_back(&mut s);
            }
            s
        };
        let (mut psi1, psi2) = rayon::join(|| backward(&fwd_a), || backward(&fwd_b));
        mag.apply_in_place(&mut psi1);
        trajectory.push(psi1.inner(&psi2));
    }
    let re: Vec<f64> = trajectory.values.iter().map(|f| f.re / OTOC_F0).collect();
    let abs: Vec<f64> = trajectory.values.iter().map(|f| f.norm() / OTOC_F0).collect();
    Ok(OtocResult {
        re_normalized: trailing_average(&re, window)?,
        abs_normalized: trailing_average(&abs, window)?,
        trajectory,
    })
}
