//! Extrinsic gate errors: per-gate timing noise, static ensemble noise, and a
//! Lindblad master-equation oracle for the white-noise limit.
//!
//! Random gate strengths are drawn from a counter-addressed ChaCha stream: the
//! draw for (seed, realization, period, gate) never depends on how many other
//! draws were made, so growing `R` extends an ensemble instead of reshuffling
//! it, and results do not depend on the worker count.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrotterError};
use crate::evolve::{apply_diagonal_phase, apply_x_rotation, floquet_eigensystem, renormalize_if_drifted, RENORM_INTERVAL};
use crate::observables::{pairwise_sum, ObservableKind, Probe, TrajectoryMeta, TrajectoryRecord};
use crate::perturbation::build_magnus;
use crate::spin::{build_dense, hz_diagonal, IsingModel, OperatorKind};

/// Largest chain for the density-matrix oracle.
pub const MAX_LINDBLAD_SITES: usize = 6;
/// Trace drift above which the Lindblad integrator is rejected.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// Independent strength errors for every gate of every period.
    Timing,
    /// One strength error per gate type, fixed for a whole trajectory.
    Ensemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDistribution {
    /// Uniform on `[-η/2, η/2]`: zero mean, variance `η²/12`.
    #[default]
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub eta: f64,
    pub realizations: usize,
    pub seed: u64,
    #[serde(default)]
    pub distribution: NoiseDistribution,
}

impl NoiseConfig {
    pub fn new(kind: NoiseKind, eta: f64, realizations: usize, seed: u64) -> Result<Self> {
        let cfg = Self { kind, eta, realizations, seed, distribution: NoiseDistribution::Uniform };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(TrotterError::InvalidParameter(format!("eta must be non-negative, got {}", self.eta)));
        }
        if self.realizations == 0 {
            return Err(TrotterError::InvalidParameter("at least one noise realization is required".into()));
        }
        Ok(())
    }

    /// Variance of a single strength error.
    pub fn variance(&self) -> f64 {
        match self.distribution {
            NoiseDistribution::Uniform => self.eta * self.eta / 12.0,
        }
    }
}

/// Gate index inside a period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Z = 0,
    X = 1,
}

/// Relative strength error `ξ` for one gate application.
///
/// Each (realization, period, gate) owns a fixed position of the ChaCha
/// stream selected by `realization`, so draws are independent and addressable.
pub fn draw_xi(cfg: &NoiseConfig, realization: usize, period: u64, gate: Gate) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(realization as u64);
    // One f64 draw consumes two 32-bit words; leave four per slot.
    rng.set_word_pos(((period as u128) * 2 + gate as u128) * 4);
    match cfg.distribution {
        NoiseDistribution::Uniform => cfg.eta * (rng.gen::<f64>() - 0.5),
    }
}

/// Mean and standard error over noise realizations.
#[derive(Debug, Clone)]
pub struct EnsembleTrajectory {
    pub mean: TrajectoryRecord,
    pub stderr: TrajectoryRecord,
    pub realizations: usize,
    pub eta: f64,
    /// `t·η²` for each sample.
    pub rescaled_times: Vec<f64>,
}

impl EnsembleTrajectory {
    fn from_samples(samples: &[Vec<f64>], mut meta: TrajectoryMeta, cfg: &NoiseConfig) -> Self {
        let r = samples.len();
        let len = samples[0].len();
        let mut mean = Vec::with_capacity(len);
        let mut stderr = Vec::with_capacity(len);
        let mut column = vec![0.0; r];
        for k in 0..len {
            for (c, s) in column.iter_mut().zip(samples) {
                *c = s[k];
            }
            let m = pairwise_sum(&column) / r as f64;
            let var = if r > 1 {
                let sq: Vec<f64> = column.iter().map(|x| (x - m) * (x - m)).collect();
                pairwise_sum(&sq) / (r - 1) as f64
            } else {
                0.0
            };
            mean.push(m);
            stderr.push((var / r as f64).sqrt());
        }
        meta.seed = Some(cfg.seed);
        let extra = &mut meta.extra;
        extra.insert("noise_kind".into(), serde_json::to_value(cfg.kind).unwrap_or_default());
        extra.insert("eta".into(), cfg.eta.into());
        extra.insert("realizations".into(), r.into());
        extra.insert("distribution".into(), serde_json::to_value(cfg.distribution).unwrap_or_default());
        let tau = meta.tau;
        let mut err_meta = meta.clone();
        err_meta.label = format!("{}_stderr", meta.label);
        Self {
            mean: TrajectoryRecord::from_real(meta, &mean),
            stderr: TrajectoryRecord::from_real(err_meta, &stderr),
            realizations: r,
            eta: cfg.eta,
            rescaled_times: (0..len).map(|k| k as f64 * tau * cfg.eta * cfg.eta).collect(),
        }
    }
}

/// One noisy trajectory, recording each requested observable every period.
fn noisy_realization(
    model: &IsingModel,
    tau: f64,
    n_steps: usize,
    cfg: &NoiseConfig,
    realization: usize,
    kinds: &[ObservableKind],
) -> Result<Vec<Vec<f64>>> {
    let hz = hz_diagonal(model);
    let mut probe = Probe::new(model)?;
    let mut state = probe.psi0().clone();
    let mut out: Vec<Vec<f64>> = kinds.iter().map(|_| Vec::with_capacity(n_steps + 1)).collect();
    let record = |probe: &mut Probe, state: &crate::spin::SpinState, out: &mut Vec<Vec<f64>>| -> Result<()> {
        for (o, k) in out.iter_mut().zip(kinds) {
            o.push(probe.measure(*k, state)?.re);
        }
        Ok(())
    };
    record(&mut probe, &state, &mut out)?;
    let (static_z, static_x) = match cfg.kind {
        NoiseKind::Ensemble => (draw_xi(cfg, realization, 0, Gate::Z), draw_xi(cfg, realization, 0, Gate::X)),
        NoiseKind::Timing => (0.0, 0.0),
    };
    for p in 0..n_steps {
        let (xi_z, xi_x) = match cfg.kind {
            NoiseKind::Timing => (draw_xi(cfg, realization, p as u64, Gate::Z), draw_xi(cfg, realization, p as u64, Gate::X)),
            NoiseKind::Ensemble => (static_z, static_x),
        };
        apply_x_rotation(&mut state, model.g, tau * (1.0 + xi_x));
        apply_diagonal_phase(&mut state, &hz.values, tau * (1.0 + xi_z));
        if (p + 1) % RENORM_INTERVAL == 0 {
            renormalize_if_drifted(&mut state, p + 1);
        }
        record(&mut probe, &state, &mut out)?;
    }
    Ok(out)
}

/// Noisy dynamics averaged over `cfg.realizations` independent runs.
pub fn noise_run(
    model: &IsingModel,
    tau: f64,
    n_steps: usize,
    cfg: &NoiseConfig,
    kinds: &[ObservableKind],
) -> Result<Vec<EnsembleTrajectory>> {
    cfg.validate()?;
    model.validate()?;
    if !(tau > 0.0) {
        return Err(TrotterError::InvalidParameter("tau must be positive".into()));
    }
    let runs: Vec<Vec<Vec<f64>>> = (0..cfg.realizations)
        .into_par_iter()
        .map(|r| noisy_realization(model, tau, n_steps, cfg, r, kinds))
        .collect::<Result<_>>()?;
    Ok(kinds
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let samples: Vec<Vec<f64>> = runs.iter().map(|run| run[i].clone()).collect();
            let kind = match cfg.kind {
                NoiseKind::Timing => "timing",
                NoiseKind::Ensemble => "ensemble",
            };
            let meta = TrajectoryMeta::new(format!("{kind}_{}", k.label()), k.label(), model, tau);
            EnsembleTrajectory::from_samples(&samples, meta, cfg)
        })
        .collect())
}

/// Mean `Q_E` under independent per-gate strength errors.
pub fn timing_noise_run(model: &IsingModel, tau: f64, n_steps: usize, cfg: &NoiseConfig) -> Result<EnsembleTrajectory> {
    if cfg.kind != NoiseKind::Timing {
        return Err(TrotterError::InvalidParameter("timing_noise_run needs kind = timing".into()));
    }
    Ok(noise_run(model, tau, n_steps, cfg, &[ObservableKind::Accuracy])?.remove(0))
}

/// Mean `Q_E` and `M` under static per-run strength offsets, in that order.
pub fn ensemble_noise_run(
    model: &IsingModel,
    tau: f64,
    n_steps: usize,
    cfg: &NoiseConfig,
) -> Result<Vec<EnsembleTrajectory>> {
    if cfg.kind != NoiseKind::Ensemble {
        return Err(TrotterError::InvalidParameter("ensemble_noise_run needs kind = ensemble".into()));
    }
    noise_run(model, tau, n_steps, cfg, &[ObservableKind::Accuracy, ObservableKind::Magnetization])
}

/// Coherent generator of the master equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LindbladGenerator {
    /// `H + τC₁`. Misses the `O(τ²)` coherent drift, which at `η ~ τ` is as
    /// large as the noise-induced heating.
    MagnusFirst,
    /// `H + τC₁ + τ²C₂`.
    #[default]
    MagnusSecond,
    /// The exact Floquet Hamiltonian `i log(U₁U₂)/τ`.
    Floquet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LindbladConfig {
    pub generator: LindbladGenerator,
    /// Integration steps per Trotter period.
    pub steps_per_period: usize,
    pub distribution: NoiseDistribution,
}

impl Default for LindbladConfig {
    fn default() -> Self {
        Self { generator: LindbladGenerator::MagnusSecond, steps_per_period: 20, distribution: NoiseDistribution::Uniform }
    }
}

/// `Q_E(t)` from the Lindblad oracle, plus integrator diagnostics.
#[derive(Debug, Clone)]
pub struct LindbladRun {
    /// Samples at every Trotter period `t = kτ`.
    pub accuracy: TrajectoryRecord,
    pub max_trace_drift: f64,
    pub max_hermiticity_defect: f64,
}

fn commutator_part(h: &Array2<Complex64>, rho: &Array2<Complex64>) -> Array2<Complex64> {
    let hr = h.dot(rho);
    let rh = rho.dot(h);
    (hr - rh) * Complex64::new(0.0, -1.0)
}

/// `dρ/dt = −i[H_eff, ρ] + γ Σ_{l∈{Z,X}} (2H_lρH_l − H_l²ρ − ρH_l²)` with
/// `γ = τ·var(ξ)/2`, var(ξ) = η²/12 for the uniform distribution.
///
/// Integrated with classical RK4 at `dt = τ/steps_per_period`.
pub fn lindblad_oracle(model: &IsingModel, tau: f64, eta: f64, t_max: f64, cfg: &LindbladConfig) -> Result<LindbladRun> {
    model.validate()?;
    if model.n > MAX_LINDBLAD_SITES {
        return Err(TrotterError::Capacity { what: "Lindblad oracle", n: model.n, max: MAX_LINDBLAD_SITES });
    }
    if !(tau > 0.0) || !(eta >= 0.0) || !(t_max >= 0.0) || cfg.steps_per_period == 0 {
        return Err(TrotterError::InvalidParameter("tau > 0, eta >= 0, t_max >= 0 required".into()));
    }
    let dim = model.dim();
    let h = build_dense(model, OperatorKind::H)?.to_complex().matrix;
    let hz = build_dense(model, OperatorKind::HZ)?.to_complex().matrix;
    let hx = build_dense(model, OperatorKind::HX)?.to_complex().matrix;
    let h_eff = match cfg.generator {
        LindbladGenerator::MagnusFirst | LindbladGenerator::MagnusSecond => {
            let ops = build_magnus(model)?;
            let mut m = h.clone();
            m.scaled_add(Complex64::new(tau, 0.0), &ops.c1.matrix);
            if cfg.generator == LindbladGenerator::MagnusSecond {
                m.scaled_add(Complex64::new(tau * tau, 0.0), &ops.c2.to_complex().matrix);
            }
            m
        }
        LindbladGenerator::Floquet => {
            let fs = floquet_eigensystem(model, tau)?;
            let v = &fs.decomposition.vectors;
            let e = fs.decomposition.energies.mapv(|x| Complex64::new(x, 0.0));
            let scaled = v * &e.view().insert_axis(ndarray::Axis(0));
            scaled.dot(&v.t().mapv(|z| z.conj()))
        }
    };
    let variance = match cfg.distribution {
        NoiseDistribution::Uniform => eta * eta / 12.0,
    };
    let gamma = Complex64::new(0.5 * tau * variance, 0.0);
    let hz2 = hz.dot(&hz);
    let hx2 = hx.dot(&hx);
    let rhs = |rho: &Array2<Complex64>| -> Array2<Complex64> {
        let mut d = commutator_part(&h_eff, rho);
        if gamma.re > 0.0 {
            for (l, l2) in [(&hz, &hz2), (&hx, &hx2)] {
                let mut diss = l.dot(rho).dot(l) * Complex64::new(2.0, 0.0);
                diss -= &l2.dot(rho);
                diss -= &rho.dot(l2);
                d.scaled_add(gamma, &diss);
            }
        }
        d
    };

    let probe = Probe::new(model)?;
    let e0 = probe.e0();
    let denom = probe.accuracy_denominator()?;
    let mut rho = Array2::<Complex64>::zeros((dim, dim));
    rho[[0, 0]] = Complex64::new(1.0, 0.0);
    let periods = (t_max / tau).round() as usize;
    let dt = tau / cfg.steps_per_period as f64;
    let mut meta = TrajectoryMeta::new("lindblad_Q_E", "Q_E", model, tau);
    meta.extra.insert("eta".into(), eta.into());
    meta.extra.insert("generator".into(), serde_json::to_value(cfg.generator).unwrap_or_default());
    meta.extra.insert("steps_per_period".into(), cfg.steps_per_period.into());
    let mut accuracy = TrajectoryRecord::new(meta);
    let energy = |rho: &Array2<Complex64>| -> Complex64 { (0..dim).map(|r| h.row(r).dot(&rho.column(r))).sum() };
    let (mut max_trace_drift, mut max_herm) = (0.0f64, 0.0f64);
    let half = Complex64::new(0.5 * dt, 0.0);
    let full = Complex64::new(dt, 0.0);
    let sixth = Complex64::new(dt / 6.0, 0.0);
    accuracy.push((energy(&rho) - e0) / denom);
    for _ in 0..periods {
        for _ in 0..cfg.steps_per_period {
            let k1 = rhs(&rho);
            let k2 = rhs(&(&rho + &(&k1 * half)));
            let k3 = rhs(&(&rho + &(&k2 * half)));
            let k4 = rhs(&(&rho + &(&k3 * full)));
            let inc = (k1 + &k2 * Complex64::new(2.0, 0.0) + &k3 * Complex64::new(2.0, 0.0) + k4) * sixth;
            rho += &inc;
        }
        let trace: Complex64 = rho.diag().sum();
        let drift = (trace - Complex64::new(1.0, 0.0)).norm();
        max_trace_drift = max_trace_drift.max(drift);
        if drift > TRACE_DRIFT_LIMIT {
            return Err(TrotterError::IntegratorStep { drift, limit: TRACE_DRIFT_LIMIT });
        }
        let herm = rho.iter().zip(rho.t().iter()).map(|(a, b)| (a - b.conj()).norm()).fold(0.0, f64::max);
        max_herm = max_herm.max(herm);
        accuracy.push((energy(&rho) - e0) / denom);
    }
    // Drop the rounding-level imaginary part after checking it.
    let im = accuracy.max_imag();
    if im > 1e-8 {
        return Err(TrotterError::Contract(format!("Tr(ρH) has imaginary part {im:e}")));
    }
    accuracy.values.iter_mut().for_each(|v| v.im = 0.0);
    Ok(LindbladRun { accuracy, max_trace_drift, max_hermiticity_defect: max_herm })
}
