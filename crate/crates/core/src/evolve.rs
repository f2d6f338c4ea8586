//! Propagation backends: Trotterized stepping, Krylov exact evolution and
//! dense (static or Floquet) diagonalization.

use std::ops::Range;

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrotterError};
use crate::linalg;
use crate::spin::{apply_h, hz_diagonal, DenseOperator, DiagonalObservable, IsingModel, SpinState};

/// Largest chain for which the one-period unitary is built and diagonalized.
pub const MAX_FLOQUET_SITES: usize = 12;
/// Periods between norm checks of a long Trotter run.
pub const RENORM_INTERVAL: usize = 1000;
/// Norm drift above which a long run is renormalized.
pub const RENORM_THRESHOLD: f64 = 1e-10;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Order of the two gates inside one period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GateOrder {
    /// `U₁U₂`: the transverse-field gate acts first, then the diagonal gate.
    #[default]
    XThenZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrotterConfig {
    pub tau: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub gate_order: GateOrder,
}

impl TrotterConfig {
    pub fn new(tau: f64, n_steps: usize) -> Result<Self> {
        let cfg = Self { tau, n_steps, gate_order: GateOrder::XThenZ };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(TrotterError::InvalidParameter(format!("tau must be positive, got {}", self.tau)));
        }
        if self.n_steps == 0 {
            return Err(TrotterError::InvalidParameter("n_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Multiplies every amplitude by `exp(-i θ d_b)`.
pub fn apply_diagonal_phase(state: &mut SpinState, diag: &[f64], theta: f64) {
    for (a, d) in state.amplitudes_mut().iter_mut().zip(diag) {
        *a *= Complex64::from_polar(1.0, -theta * d);
    }
}

/// Applies `Π_l exp(-i θ g S^x_l)` as independent 2×2 rotations.
pub fn apply_x_rotation(state: &mut SpinState, g: f64, theta: f64) {
    let half = 0.5 * g * theta;
    let n = state.n();
    rotate_pairs(state.amplitudes_mut(), n, half.cos(), half.sin());
}

/// `(a, b) -> (a c - i b s, -i a s + b c)` on every pair differing in one bit.
fn rotate_pairs(amps: &mut [Complex64], n: usize, c: f64, s: f64) {
    for l in 0..n {
        let stride = 1usize << l;
        for base in (0..amps.len()).step_by(2 * stride) {
            let (lo, hi) = amps[base..base + 2 * stride].split_at_mut(stride);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x * c - I * y * s;
                *b = -I * x * s + y * c;
            }
        }
    }
}

/// Precomputed gates for repeated Trotter periods at fixed `τ`.
#[derive(Debug, Clone)]
pub struct TrotterStepper {
    model: IsingModel,
    tau: f64,
    phases: Vec<Complex64>,
    cos: f64,
    sin: f64,
}

impl TrotterStepper {
    pub fn new(model: &IsingModel, tau: f64) -> Result<Self> {
        model.validate()?;
        if !tau.is_finite() {
            return Err(TrotterError::InvalidParameter("tau must be finite".into()));
        }
        let hz = hz_diagonal(model);
        let phases = hz.values.iter().map(|e| Complex64::from_polar(1.0, -tau * e)).collect();
        let half = 0.5 * model.g * tau;
        Ok(Self { model: *model, tau, phases, cos: half.cos(), sin: half.sin() })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn model(&self) -> &IsingModel {
        &self.model
    }

    /// One period `U₁U₂` in place.
    pub fn step(&self, state: &mut SpinState) {
        let amps = state.amplitudes_mut();
        rotate_pairs(amps, self.model.n, self.cos, self.sin);
        for (a, p) in amps.iter_mut().zip(&self.phases) {
            *a *= p;
        }
    }

    /// One inverse period `(U₁U₂)† = U₂†U₁†` in place.
    pub fn step_back(&self, state: &mut SpinState) {
        let amps = state.amplitudes_mut();
        for (a, p) in amps.iter_mut().zip(&self.phases) {
            *a *= p.conj();
        }
        rotate_pairs(amps, self.model.n, self.cos, -self.sin);
    }

    pub fn check(&self, state: &SpinState) -> Result<()> {
        if state.dim() != self.model.dim() {
            return Err(TrotterError::DimensionMismatch { expected: self.model.dim(), got: state.dim() });
        }
        Ok(())
    }

    /// Runs `n` periods, applying the renormalization policy, and calls
    /// `visit(period, state)` after each one.
    pub fn run<F>(&self, state: &mut SpinState, n: usize, mut visit: F) -> Result<()>
    where
        F: FnMut(usize, &SpinState) -> Result<()>,
    {
        self.check(state)?;
        for p in 1..=n {
            self.step(state);
            if p % RENORM_INTERVAL == 0 {
                renormalize_if_drifted(state, p);
            }
            visit(p, state)?;
        }
        Ok(())
    }
}

/// Renormalizes when the norm has drifted by more than the policy threshold.
pub fn renormalize_if_drifted(state: &mut SpinState, period: usize) -> bool {
    let drift = (state.norm() - 1.0).abs();
    if drift > RENORM_THRESHOLD {
        state.normalize();
        log::debug!("renormalized state after period {period}, drift {drift:e}");
        true
    } else {
        false
    }
}

/// `U₁(τ)U₂(τ)|state⟩` for a single period.
pub fn trotter_period(state: &SpinState, model: &IsingModel, tau: f64) -> Result<SpinState> {
    let stepper = TrotterStepper::new(model, tau)?;
    stepper.check(state)?;
    let mut out = state.clone();
    stepper.step(&mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovConfig {
    pub max_dim: usize,
    pub tol: f64,
    pub reorthogonalize: bool,
    pub max_substeps: usize,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self { max_dim: 40, tol: 1e-10, reorthogonalize: true, max_substeps: 100_000 }
    }
}

impl KrylovConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_dim < 2 {
            return Err(TrotterError::InvalidParameter("Krylov max_dim must be at least 2".into()));
        }
        if !(self.tol > 0.0) {
            return Err(TrotterError::InvalidParameter("Krylov tol must be positive".into()));
        }
        if !self.reorthogonalize {
            return Err(TrotterError::InvalidParameter("full reorthogonalization cannot be disabled".into()));
        }
        Ok(())
    }
}

/// Lanczos vectors with the tridiagonal projection of `H`.
struct Lanczos {
    vectors: Vec<SpinState>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    /// Unnormalized residual orthogonal to all current vectors.
    pending: SpinState,
}

impl Lanczos {
    fn new(start: SpinState) -> Result<Self> {
        let pending = SpinState::zeros(start.n())?;
        Ok(Self { vectors: vec![start], alpha: Vec::new(), beta: Vec::new(), pending })
    }

    /// Applies `H` to the newest vector and returns the residual norm `β`.
    fn extend(&mut self, model: &IsingModel, hz: &DiagonalObservable) -> Result<f64> {
        let k = self.vectors.len() - 1;
        let w = &mut self.pending;
        apply_h(&self.vectors[k], model, hz, w)?;
        self.alpha.push(self.vectors[k].inner(w).re);
        // Full reorthogonalization, two passes of classical Gram-Schmidt.
        for _ in 0..2 {
            for v in &self.vectors {
                let ov = v.inner(w);
                for (x, y) in w.amplitudes_mut().iter_mut().zip(v.amplitudes()) {
                    *x -= ov * y;
                }
            }
        }
        let b = w.norm();
        let scale = self.alpha.iter().map(|a| a.abs()).fold(1.0, f64::max);
        // Happy breakdown: the Krylov space is invariant.
        Ok(if b <= 1e-13 * scale { 0.0 } else { b })
    }

    fn push_pending(&mut self, b: f64) {
        let mut next = self.pending.clone();
        next.amplitudes_mut().iter_mut().for_each(|x| *x /= b);
        self.beta.push(b);
        self.vectors.push(next);
    }

    fn tridiagonal_eigh(&self) -> Result<(Array1<f64>, Array2<f64>)> {
        let m = self.alpha.len();
        let mut tri = Array2::<f64>::zeros((m, m));
        for k in 0..m {
            tri[[k, k]] = self.alpha[k];
            if k + 1 < m {
                tri[[k, k + 1]] = self.beta[k];
                tri[[k + 1, k]] = self.beta[k];
            }
        }
        linalg::eigh_real(&tri)
    }

    fn combine(&self, coeffs: &[Complex64]) -> Result<SpinState> {
        let mut out = SpinState::zeros(self.vectors[0].n())?;
        for (v, c) in self.vectors.iter().zip(coeffs) {
            for (x, y) in out.amplitudes_mut().iter_mut().zip(v.amplitudes()) {
                *x += c * y;
            }
        }
        Ok(out)
    }
}

/// `exp(-i T dt) e₁` for the Lanczos tridiagonal matrix `T`.
fn tridiagonal_propagate(evals: &Array1<f64>, evecs: &Array2<f64>, dt: f64) -> Vec<Complex64> {
    let m = evals.len();
    (0..m)
        .map(|r| {
            (0..m)
                .map(|k| Complex64::from_polar(evecs[[r, k]] * evecs[[0, k]], -evals[k] * dt))
                .sum()
        })
        .collect()
}

/// `exp(-iHt)|state⟩` by Lanczos with full reorthogonalization.
///
/// Each substep grows a Krylov basis from the current vector until the
/// a-posteriori estimate `β_m |[exp(-iT dt)]_{m,1}|` drops below
/// `tol · |dt/t|`, so the accumulated error stays below `tol`. If `max_dim`
/// is reached first, the substep is halved until the estimate passes.
pub fn krylov_evolve(state: &SpinState, model: &IsingModel, t: f64, cfg: &KrylovConfig) -> Result<SpinState> {
    cfg.validate()?;
    if state.dim() != model.dim() {
        return Err(TrotterError::DimensionMismatch { expected: model.dim(), got: state.dim() });
    }
    if t == 0.0 {
        return Ok(state.clone());
    }
    let hz = hz_diagonal(model);
    let mut psi = state.clone();
    let norm = psi.normalize();
    let mut elapsed = 0.0;
    let mut substeps = 0;
    let mut dt_try = t;
    while (t - elapsed).abs() > 1e-15 * t.abs() {
        let remaining = t - elapsed;
        if dt_try.abs() > remaining.abs() {
            dt_try = remaining;
        }
        let mut basis = Lanczos::new(psi)?;
        let (dt, coeffs) = loop {
            let b = basis.extend(model, &hz)?;
            let (evals, evecs) = basis.tridiagonal_eigh()?;
            let m = evals.len();
            let coeffs = tridiagonal_propagate(&evals, &evecs, dt_try);
            let err = b * coeffs[m - 1].norm();
            if err <= cfg.tol * (dt_try / t).abs() {
                break (dt_try, coeffs);
            }
            if m < cfg.max_dim {
                basis.push_pending(b);
                continue;
            }
            let mut dt = dt_try;
            loop {
                dt *= 0.5;
                substeps += 1;
                let coeffs = tridiagonal_propagate(&evals, &evecs, dt);
                let err = b * coeffs[m - 1].norm();
                if err <= cfg.tol * (dt / t).abs() {
                    break;
                }
                if substeps > cfg.max_substeps || dt.abs() < 1e-14 * t.abs() {
                    return Err(TrotterError::Convergence { residual: err, substeps });
                }
            }
            break (dt, tridiagonal_propagate(&evals, &evecs, dt));
        };
        psi = basis.combine(&coeffs)?;
        elapsed += dt;
        substeps += 1;
        if substeps > cfg.max_substeps {
            return Err(TrotterError::Convergence { residual: f64::NAN, substeps });
        }
        dt_try = if dt == dt_try { dt } else { 2.0 * dt };
    }
    psi.normalize();
    psi.amplitudes_mut().iter_mut().for_each(|a| *a *= norm);
    Ok(psi)
}

/// Spectrum and eigenvectors (columns) of a Hermitian operator.
#[derive(Debug, Clone)]
pub struct EigenDecomposition<T> {
    pub energies: Array1<f64>,
    pub vectors: Array2<T>,
    pub operator_label: String,
}

impl<T> EigenDecomposition<T> {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// Maximal runs of sorted energies whose consecutive gaps are below `tol`.
    pub fn degenerate_blocks(&self, tol: f64) -> Vec<Range<usize>> {
        energy_blocks(self.energies.as_slice().expect("contiguous energies"), tol)
    }
}

/// Groups ascending values into runs whose consecutive gaps are below `tol`.
pub fn energy_blocks(sorted: &[f64], tol: f64) -> Vec<Range<usize>> {
    let mut blocks = Vec::new();
    let mut start = 0;
    for k in 1..=sorted.len() {
        if k == sorted.len() || sorted[k] - sorted[k - 1] >= tol {
            blocks.push(start..k);
            start = k;
        }
    }
    blocks
}

impl EigenDecomposition<f64> {
    /// `C_λ = ⟨λ|ψ⟩`.
    pub fn amplitudes(&self, state: &SpinState) -> Vec<Complex64> {
        self.vectors
            .columns()
            .into_iter()
            .map(|col| col.iter().zip(state.amplitudes()).map(|(v, a)| a * v).sum())
            .collect()
    }

    /// `max |A − V E Vᵀ|`.
    pub fn reconstruction_error(&self, op: &DenseOperator<f64>) -> f64 {
        let scaled = &self.vectors * &self.energies.view().insert_axis(Axis(0));
        let recon = scaled.dot(&self.vectors.t());
        (&recon - &op.matrix).iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// `max |VᵀV − 1|`.
    pub fn orthogonality_error(&self) -> f64 {
        let gram = self.vectors.t().dot(&self.vectors);
        gram.indexed_iter()
            .map(|((r, c), x)| (x - if r == c { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }
}

impl EigenDecomposition<Complex64> {
    pub fn amplitudes(&self, state: &SpinState) -> Vec<Complex64> {
        self.vectors
            .columns()
            .into_iter()
            .map(|col| col.iter().zip(state.amplitudes()).map(|(v, a)| v.conj() * a).sum())
            .collect()
    }

    pub fn orthogonality_error(&self) -> f64 {
        let gram = self.vectors.t().mapv(|z| z.conj()).dot(&self.vectors);
        gram.indexed_iter()
            .map(|((r, c), x)| (x - if r == c { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) }).norm())
            .fold(0.0, f64::max)
    }
}

/// Full diagonalization of a real symmetric operator.
pub fn dense_eigh(op: &DenseOperator<f64>) -> Result<EigenDecomposition<f64>> {
    let asym = op.max_asymmetry();
    if asym > 1e-10 {
        return Err(TrotterError::Contract(format!("{} is not symmetric (defect {asym:e})", op.label)));
    }
    let (energies, vectors) = linalg::eigh_real(&op.matrix)?;
    Ok(EigenDecomposition { energies, vectors, operator_label: op.label.clone() })
}

/// Full diagonalization of a complex Hermitian operator.
pub fn dense_eigh_complex(op: &DenseOperator<Complex64>) -> Result<EigenDecomposition<Complex64>> {
    let defect = op.max_hermiticity_defect();
    if defect > 1e-10 {
        return Err(TrotterError::Contract(format!("{} is not Hermitian (defect {defect:e})", op.label)));
    }
    let (energies, vectors) = linalg::eigh_complex(&op.matrix)?;
    Ok(EigenDecomposition { energies, vectors, operator_label: op.label.clone() })
}

/// Explicit one-period unitary `U₁U₂`, built column by column with the stepper.
pub fn floquet_unitary(model: &IsingModel, tau: f64) -> Result<Array2<Complex64>> {
    if model.n > MAX_FLOQUET_SITES {
        return Err(TrotterError::Capacity { what: "Floquet unitary", n: model.n, max: MAX_FLOQUET_SITES });
    }
    let stepper = TrotterStepper::new(model, tau)?;
    let dim = model.dim();
    let columns: Vec<Vec<Complex64>> = (0..dim)
        .into_par_iter()
        .map(|k| {
            let mut amps = vec![Complex64::new(0.0, 0.0); dim];
            amps[k] = Complex64::new(1.0, 0.0);
            let mut s = SpinState::from_amplitudes(model.n, amps).expect("valid dimension");
            stepper.step(&mut s);
            s.into_amplitudes()
        })
        .collect();
    let mut u = Array2::<Complex64>::zeros((dim, dim));
    for (k, col) in columns.into_iter().enumerate() {
        u.column_mut(k).assign(&Array1::from(col));
    }
    Ok(u)
}

/// Diagonalized one-period unitary.
#[derive(Debug, Clone)]
pub struct FloquetSpectrum {
    /// Quasi-energies in `(-π/τ, π/τ]`, ascending, with eigenvectors `|φ_ν⟩`.
    pub decomposition: EigenDecomposition<Complex64>,
    /// Unitary eigenvalues `exp(-i E_ν τ)` in the same order.
    pub eigenvalues: Array1<Complex64>,
    pub tau: f64,
    /// Quasi-energy clusters (cyclic on the Floquet zone) with gaps below the tolerance.
    pub blocks: Vec<Vec<usize>>,
    pub degeneracy_tol: f64,
}

impl FloquetSpectrum {
    pub fn has_degeneracies(&self) -> bool {
        self.blocks.iter().any(|b| b.len() > 1)
    }

    /// `p_ν = |⟨φ_ν|ψ⟩|²`.
    pub fn overlaps(&self, state: &SpinState) -> Vec<f64> {
        self.decomposition.amplitudes(state).iter().map(|c| c.norm_sqr()).collect()
    }

    /// `Σ_ν p_ν²` in the returned eigenbasis.
    pub fn ipr(&self, state: &SpinState) -> f64 {
        self.overlaps(state).iter().map(|p| p * p).sum()
    }

    /// `Σ_B (Σ_{ν∈B} p_ν)²`: the long-time mean of the Loschmidt echo, which
    /// does not depend on the basis chosen inside degenerate clusters.
    pub fn blocked_ipr(&self, state: &SpinState) -> f64 {
        let p = self.overlaps(state);
        self.blocks
            .iter()
            .map(|b| {
                let s: f64 = b.iter().map(|&k| p[k]).sum();
                s * s
            })
            .sum()
    }
}

/// Default gap below which Floquet eigenvalues are treated as degenerate.
pub const FLOQUET_DEGENERACY_TOL: f64 = 1e-10;

/// Diagonalizes `U₁(τ)U₂(τ)` by a complex Schur decomposition.
pub fn floquet_eigensystem(model: &IsingModel, tau: f64) -> Result<FloquetSpectrum> {
    if !(tau > 0.0) {
        return Err(TrotterError::InvalidParameter("tau must be positive".into()));
    }
    let u = floquet_unitary(model, tau)?;
    let (w, z) = linalg::schur_complex(&u)?;
    let zone = std::f64::consts::PI / tau;
    let mut order: Vec<(f64, usize)> = w
        .iter()
        .enumerate()
        .map(|(k, lam)| {
            let mut e = -lam.arg() / tau;
            if e <= -zone {
                e += 2.0 * zone;
            }
            (e, k)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let dim = order.len();
    let energies = Array1::from_iter(order.iter().map(|(e, _)| *e));
    let eigenvalues = Array1::from_iter(order.iter().map(|&(_, k)| w[k] / w[k].norm()));
    let mut vectors = Array2::<Complex64>::zeros((dim, dim));
    for (dst, &(_, k)) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&z.column(k));
    }
    // Cluster on the unit circle: a gap in eigenvalue phase below the tolerance.
    let tol = FLOQUET_DEGENERACY_TOL;
    let phase_gap = |a: f64, b: f64| (b - a) * tau;
    let mut blocks: Vec<Vec<usize>> = energy_blocks(energies.as_slice().unwrap(), tol / tau)
        .into_iter()
        .map(|r| r.collect())
        .collect();
    if blocks.len() > 1 {
        let wrap = 2.0 * std::f64::consts::PI - phase_gap(energies[0], energies[dim - 1]);
        if wrap < tol {
            let first = blocks.remove(0);
            blocks.last_mut().unwrap().extend(first);
        }
    }
    Ok(FloquetSpectrum {
        decomposition: EigenDecomposition { energies, vectors, operator_label: format!("H_F(tau={tau})") },
        eigenvalues,
        tau,
        blocks,
        degeneracy_tol: tol,
    })
}
