//! Magnus-expansion operators and perturbative Trotter-error coefficients.
//!
//! The one-period unitary `U₁U₂ = exp(-iτH_F)` has the Floquet Hamiltonian
//! `H_F = H + τC₁ + τ²C₂ + O(τ³)` with `C₁ = (i/2)[H_X, H_Z]` and
//! `C₂ = −(1/12)[H_X − H_Z, [H_X, H_Z]]`. Long-time stroboscopic averages are
//! diagonal-ensemble averages in the eigenbasis of `H_F`, so expanding that
//! ensemble in `τ` gives the coefficients of `(hτ)²` in `Q_E` and `ΔM`.
//!
//! Diagonal ensembles are evaluated blockwise over (near-)degenerate
//! eigenspaces of `H`: `Σ_B Σ_{λ,λ'∈B} C_λ C_λ' ⟨λ|O|λ'⟩`. This is the
//! long-time average for a degenerate spectrum and is independent of the basis
//! chosen inside each block.

use std::ops::Range;

use ndarray::{Array1, Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrotterError};
use crate::evolve::{dense_eigh, energy_blocks, EigenDecomposition};
use crate::linalg;
use crate::spin::{build_dense, hz_diagonal, magnetization_diagonal, DenseOperator, IsingModel, OperatorKind};

/// Largest chain for the dense Magnus and coefficient routines.
pub const MAX_MAGNUS_SITES: usize = 12;
/// Largest chain for the global-unitary commutator diagnostic.
pub const MAX_LLOYD_SITES: usize = 10;
/// Default energy gap below which eigenstates of `H` form one block.
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-8;

fn check_capacity(model: &IsingModel, max: usize, what: &'static str) -> Result<()> {
    model.validate()?;
    if model.n > max {
        return Err(TrotterError::Capacity { what, n: model.n, max });
    }
    Ok(())
}

/// `H_X A`, acting on the rows of `A`.
fn hx_rows(model: &IsingModel, a: &Array2<f64>) -> Array2<f64> {
    let half_g = 0.5 * model.g;
    let mut out = Array2::<f64>::zeros(a.raw_dim());
    for (x, mut row) in out.outer_iter_mut().enumerate() {
        for l in 0..model.n {
            row.scaled_add(half_g, &a.row(x ^ (1 << l)));
        }
    }
    out
}

/// `diag(d) A`.
fn diag_rows(d: &[f64], a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for (mut row, v) in out.outer_iter_mut().zip(d) {
        row *= *v;
    }
    out
}

/// `[H_X, H_Z] A = H_X (h_z A) − h_z (H_X A)`.
fn comm_xz_rows(model: &IsingModel, hz: &[f64], a: &Array2<f64>) -> Array2<f64> {
    let mut out = hx_rows(model, &diag_rows(hz, a));
    out -= &diag_rows(hz, &hx_rows(model, a));
    out
}

/// `C₂ A` using only diagonal and bit-flip row operations.
fn c2_rows(model: &IsingModel, hz: &[f64], a: &Array2<f64>) -> Array2<f64> {
    let xz = |m: &Array2<f64>| hx_rows(model, m) - diag_rows(hz, m);
    let ca = comm_xz_rows(model, hz, a);
    let mut out = xz(&ca);
    out -= &comm_xz_rows(model, hz, &xz(a));
    out *= -1.0 / 12.0;
    out
}

/// Dense `C₁` and `C₂`.
#[derive(Debug, Clone)]
pub struct MagnusOperators {
    pub c1: DenseOperator<Complex64>,
    pub c2: DenseOperator<f64>,
    pub n: usize,
    pub model: IsingModel,
}

pub fn build_magnus(model: &IsingModel) -> Result<MagnusOperators> {
    check_capacity(model, MAX_MAGNUS_SITES, "Magnus operators")?;
    let dim = model.dim();
    let hz = hz_diagonal(model).values;
    let eye = Array2::<f64>::eye(dim);
    let comm = comm_xz_rows(model, &hz, &eye);
    let c1 = comm.mapv(|x| Complex64::new(0.0, 0.5 * x));
    let c2 = c2_rows(model, &hz, &eye);
    let c1 = DenseOperator { matrix: c1, label: "C1".into() };
    let c2 = DenseOperator { matrix: c2, label: "C2".into() };
    let defect = c1.max_hermiticity_defect().max(c2.max_asymmetry());
    if defect > 1e-12 {
        return Err(TrotterError::Contract(format!("Magnus operators not Hermitian (defect {defect:e})")));
    }
    Ok(MagnusOperators { c1, c2, n: model.n, model: *model })
}

/// Truncated Floquet Hamiltonian `H + τC₁` (order 1) or `H + τC₁ + τ²C₂` (order 2).
pub fn magnus_hf(model: &IsingModel, tau: f64, order: u8) -> Result<DenseOperator<Complex64>> {
    if !(1..=2).contains(&order) {
        return Err(TrotterError::InvalidParameter(format!("Magnus order must be 1 or 2, got {order}")));
    }
    let ops = build_magnus(model)?;
    let h = build_dense(model, OperatorKind::H)?;
    let mut m = h.to_complex().matrix;
    m.scaled_add(Complex64::new(tau, 0.0), &ops.c1.matrix);
    if order == 2 {
        m.scaled_add(Complex64::new(tau * tau, 0.0), &ops.c2.matrix.mapv(|x| Complex64::new(x, 0.0)));
    }
    Ok(DenseOperator { matrix: m, label: format!("H_F^({order})") })
}

/// `(t²/2n)·‖[H_Z, H_X]‖₂`, the leading global-unitary Trotter error scale.
pub fn lloyd_commutator_bound(model: &IsingModel, t: f64, n: usize) -> Result<f64> {
    check_capacity(model, MAX_LLOYD_SITES, "Lloyd bound")?;
    if n == 0 {
        return Err(TrotterError::InvalidParameter("n must be at least 1".into()));
    }
    if model.g == 0.0 {
        return Ok(0.0);
    }
    let hz = hz_diagonal(model).values;
    let comm = comm_xz_rows(model, &hz, &Array2::eye(model.dim()));
    let gram = comm.t().dot(&comm);
    let (w, _) = linalg::eigh_real(&gram)?;
    let norm = w.iter().cloned().fold(0.0f64, f64::max).sqrt();
    Ok(t * t / (2.0 * n as f64) * norm)
}

/// Measured `‖exp(-iHt) − (U₁U₂)^n‖₂` with `τ = t/n`.
pub fn global_trotter_defect(model: &IsingModel, t: f64, n: usize) -> Result<f64> {
    check_capacity(model, MAX_LLOYD_SITES, "global Trotter defect")?;
    if n == 0 {
        return Err(TrotterError::InvalidParameter("n must be at least 1".into()));
    }
    let tau = t / n as f64;
    let exact = linalg::expm_symmetric(&build_dense(model, OperatorKind::H)?.matrix, t)?;
    let period = crate::evolve::floquet_unitary(model, tau)?;
    // U^n by repeated squaring; the factors commute.
    let mut prod = Array2::<Complex64>::eye(model.dim());
    let mut base = period;
    let mut k = n;
    while k > 0 {
        if k & 1 == 1 {
            prod = prod.dot(&base);
        }
        k >>= 1;
        if k > 0 {
            base = base.dot(&base);
        }
    }
    linalg::spectral_norm(&(exact - prod))
}

/// Blockwise diagonal ensemble `Σ_B Σ_{λ,λ'∈B} c_λ c_λ' (Vᵀ O V)_{λλ'}`,
/// given `OV = O·V`. Traverses rows only.
fn block_ensemble(v: &Array2<f64>, ov: &Array2<f64>, c: &[f64], blocks: &[Range<usize>]) -> f64 {
    let mut acc = vec![0.0; blocks.len()];
    for (vr, or) in v.outer_iter().zip(ov.outer_iter()) {
        for (b, r) in blocks.iter().enumerate() {
            let (mut s1, mut s2) = (0.0, 0.0);
            for k in r.clone() {
                s1 += c[k] * vr[k];
                s2 += c[k] * or[k];
            }
            acc[b] += s1 * s2;
        }
    }
    acc.iter().sum()
}

/// Same as [`block_ensemble`] for an operator already in the eigenbasis.
fn block_ensemble_eig(o: &Array2<f64>, c: &[f64], blocks: &[Range<usize>]) -> f64 {
    blocks
        .iter()
        .map(|r| {
            let mut s = 0.0;
            for a in r.clone() {
                for b in r.clone() {
                    s += c[a] * c[b] * o[[a, b]];
                }
            }
            s
        })
        .sum()
}

/// Details of the `q_E` evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QeReport {
    /// Coefficient of `(hτ)²` in the long-time `Q_E`: `bracket / ((E_{T=∞} − E₀) h²)`.
    pub q_e: f64,
    /// The bracket divided by `J²E₀`, as the closed form is usually quoted.
    pub q_e_over_j2e0: f64,
    /// `⟨C₂⟩ − Σ p⟨λ|C₂|λ⟩ − ¼ Σ p⟨λ|[H_Z,[H_Z,H_X]]|λ⟩`.
    pub bracket: f64,
    pub e0: f64,
    /// `q_e / q_e_over_j2e0`; −J²/h² for this model.
    pub normalization_ratio: f64,
}

/// Details of the `m` evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MReport {
    /// Coefficient of `(hτ)²` in `M_{τ=0} − M_τ` at long times.
    pub m: f64,
    /// The same coefficient against `(Jτ)²`.
    pub m_jtau: f64,
    /// Diagonal-ensemble magnetization of the exact dynamics.
    pub m_diagonal: f64,
    /// Second-order change of the Floquet diagonal ensemble, `d²M/dτ²/2`.
    pub second_order_shift: f64,
    /// Four-term closed form, diagnostic only.
    pub closed_form: ClosedFormM,
}

/// Terms of the four-term closed form for `m`, each divided by `J²`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedFormM {
    pub anticommutator: f64,
    pub commutator: f64,
    pub lehmann_p: f64,
    pub lehmann_m: f64,
    pub total: f64,
}

/// Everything the coefficient routines need from the eigenbasis of `H`.
struct Eigenbasis<'a> {
    model: IsingModel,
    energies: &'a Array1<f64>,
    v: &'a Array2<f64>,
    hz: Vec<f64>,
    /// `C_λ = ⟨λ|ψ₀⟩`; `|ψ₀⟩` is basis state 0.
    c: Vec<f64>,
    blocks: Vec<Range<usize>>,
    block_of: Vec<usize>,
}

impl<'a> Eigenbasis<'a> {
    fn new(model: &IsingModel, eig: &'a EigenDecomposition<f64>, tol: f64) -> Result<Self> {
        if eig.dim() != model.dim() {
            return Err(TrotterError::DimensionMismatch { expected: model.dim(), got: eig.dim() });
        }
        if !(tol >= 0.0) {
            return Err(TrotterError::InvalidParameter("degeneracy tolerance must be non-negative".into()));
        }
        let blocks = energy_blocks(eig.energies.as_slice().expect("contiguous"), tol);
        let mut block_of = vec![0; eig.dim()];
        for (b, r) in blocks.iter().enumerate() {
            for k in r.clone() {
                block_of[k] = b;
            }
        }
        Ok(Self {
            model: *model,
            energies: &eig.energies,
            v: &eig.vectors,
            hz: hz_diagonal(model).values,
            c: eig.vectors.row(0).to_vec(),
            blocks,
            block_of,
        })
    }

    /// `1/(E_λ − E_μ)`, zero inside a degenerate block.
    #[inline]
    fn g(&self, mu: usize, lam: usize) -> f64 {
        if self.block_of[mu] == self.block_of[lam] {
            0.0
        } else {
            1.0 / (self.energies[lam] - self.energies[mu])
        }
    }

    fn to_eigenbasis(&self, ov: &Array2<f64>) -> Array2<f64> {
        self.v.t().dot(ov)
    }

    fn g_hadamard(&self, a: &mut Array2<f64>) {
        Zip::indexed(a).for_each(|(mu, lam), x| *x *= self.g(mu, lam));
    }
}

fn qe_from_basis(eb: &Eigenbasis) -> Result<QeReport> {
    let model = &eb.model;
    let e0 = eb.hz[0];
    if e0.abs() < 1e-12 {
        return Err(TrotterError::IllConditioned("E_0 vanishes".into()));
    }
    let c2v = c2_rows(model, &eb.hz, eb.v);
    let c2_psi0: f64 = eb.c.iter().zip(c2v.row(0)).map(|(c, x)| c * x).sum();
    let c2_de = block_ensemble(eb.v, &c2v, &eb.c, &eb.blocks);
    drop(c2v);
    // [H_Z,[H_Z,H_X]] V = h_z² H_X V − 2 h_z H_X h_z V + H_X h_z² V
    let hz2: Vec<f64> = eb.hz.iter().map(|x| x * x).collect();
    let hxv = hx_rows(model, eb.v);
    let mut ddv = diag_rows(&hz2, &hxv);
    drop(hxv);
    ddv.scaled_add(-2.0, &diag_rows(&eb.hz, &hx_rows(model, &diag_rows(&eb.hz, eb.v))));
    ddv += &hx_rows(model, &diag_rows(&hz2, eb.v));
    let dd_de = block_ensemble(eb.v, &ddv, &eb.c, &eb.blocks);
    let bracket = c2_psi0 - c2_de - 0.25 * dd_de;
    // E_{T=∞} = 0.
    let q_e = bracket / ((0.0 - e0) * model.h * model.h);
    let q_e_over_j2e0 = bracket / (model.j * model.j * e0);
    Ok(QeReport { q_e, q_e_over_j2e0, bracket, e0, normalization_ratio: q_e / q_e_over_j2e0 })
}

fn m_from_basis(eb: &Eigenbasis) -> Result<MReport> {
    let model = &eb.model;
    let dim = model.dim();
    let c = &eb.c;
    let mz = magnetization_diagonal(model.n)?.values;
    let mm = eb.to_eigenbasis(&diag_rows(&mz, eb.v));
    let m_diagonal = block_ensemble_eig(&mm, c, &eb.blocks);

    // C₁ = i·K with K = ½[H_X, H_Z] real antisymmetric; a = VᵀKV.
    let mut a = eb.to_eigenbasis(&comm_xz_rows(model, &eb.hz, eb.v));
    a *= 0.5;
    let closed_form = closed_form_m(eb, &mm, &mz)?;

    // X = G∘a is symmetric, Z = G∘b antisymmetric, Yᵀ = G∘(X a).
    let mut x = a.clone();
    eb.g_hadamard(&mut x);
    let mut yt = x.dot(&a);
    eb.g_hadamard(&mut yt);
    let mut z = eb.to_eigenbasis(&c2_rows(model, &eb.hz, eb.v));
    eb.g_hadamard(&mut z);
    // Row λ of XM is column λ of Mm·X.
    let xm = x.dot(&mm);

    let dot = |r: ndarray::ArrayView1<f64>, v: &[f64]| -> f64 { r.iter().zip(v).map(|(a, b)| a * b).sum() };
    let xc: Vec<f64> = (0..dim).map(|l| dot(x.row(l), c)).collect();
    let yc: Vec<f64> = (0..dim).map(|l| dot(yt.row(l), c)).collect();
    let zc: Vec<f64> = (0..dim).map(|l| -dot(z.row(l), c)).collect();
    // X2 = G∘X is antisymmetric; X2_λ·c = Σ_μ G(μ,λ) X_λμ c_μ.
    let x2_dot = |l: usize, v: &[f64]| -> f64 { (0..dim).map(|mu| eb.g(mu, l) * x[[l, mu]] * v[mu]).sum() };
    let x2c: Vec<f64> = (0..dim).map(|l| x2_dot(l, c)).collect();

    let mut shift = 0.0;
    let mut w = Array1::<f64>::zeros(dim);
    for r in &eb.blocks {
        w.fill(0.0);
        for l in r.clone() {
            w.scaled_add(c[l], &mm.row(l));
        }
        let ws = w.as_slice().unwrap();
        let mut t2 = 0.0;
        for l in r.clone() {
            t2 -= c[l] * dot(yt.row(l), ws);
            t2 -= ws[l] * yc[l];
            t2 += dot(x.row(l), ws) * xc[l];
            t2 -= c[l] * dot(z.row(l), ws);
            t2 += ws[l] * zc[l];
            let wx2 = x2_dot(l, ws);
            for lp in r.clone() {
                t2 += wx2 * a[[l, lp]] * c[lp];
                t2 += ws[lp] * a[[l, lp]] * x2c[l];
                t2 -= ws[l] * dot(x.row(l), x.row(lp).as_slice().unwrap()) * c[lp];
            }
        }
        // First-order projected state q = Σ_{λ∈B} (X_λ c_λ − e_λ X_λ·c).
        let mut t1 = 0.0;
        for l in r.clone() {
            for lp in r.clone() {
                t1 += c[l] * c[lp] * dot(x.row(l), xm.row(lp).as_slice().unwrap());
                t1 -= 2.0 * xc[lp] * c[l] * xm[[l, lp]];
                t1 += xc[l] * xc[lp] * mm[[l, lp]];
            }
        }
        shift += 2.0 * t2 + t1;
    }
    let h2 = model.h * model.h;
    let m = -shift / h2;
    Ok(MReport {
        m,
        m_jtau: m * h2 / (model.j * model.j),
        m_diagonal,
        second_order_shift: shift,
        closed_form,
    })
}

fn closed_form_m(eb: &Eigenbasis, mm: &Array2<f64>, mz: &[f64]) -> Result<ClosedFormM> {
    let model = &eb.model;
    let j2 = model.j * model.j;
    let c = &eb.c;
    let ez = eb.hz[0];
    // {H_Z², M} − E_Z² M is diagonal.
    let d1: Vec<f64> = eb.hz.iter().zip(mz).map(|(h, m)| (2.0 * h * h - ez * ez) * m).collect();
    let anticommutator = block_ensemble(eb.v, &diag_rows(&d1, eb.v), c, &eb.blocks) / (12.0 * j2);
    // [H_X, M] H_Z V
    let hzv = diag_rows(&eb.hz, eb.v);
    let mut xm_hz = hx_rows(model, &diag_rows(mz, &hzv));
    xm_hz -= &diag_rows(mz, &hx_rows(model, &hzv));
    let commutator = -block_ensemble(eb.v, &xm_hz, c, &eb.blocks) / (6.0 * j2);
    drop(xm_hz);
    // A = [H_Z, H_X] H_Z in the eigenbasis.
    let mut ae = eb.to_eigenbasis(&comm_xz_rows(model, &eb.hz, &hzv));
    ae *= -1.0;
    let p: Vec<f64> = c.iter().map(|x| x * x).collect();
    let md = mm.diag();
    let (mut lp, mut lm) = (0.0, 0.0);
    for ((l, lq), a) in ae.indexed_iter().map(|((l, lq), a)| ((l, lq), *a)) {
        let inv = -eb.g(l, lq);
        if inv != 0.0 {
            lp += p[l] * inv * a * mm[[lq, l]];
            lm += md[l] * inv * c[l] * c[lq] * a;
        }
    }
    let lehmann_p = lp / (6.0 * j2);
    let lehmann_m = lm / (6.0 * j2);
    Ok(ClosedFormM {
        anticommutator,
        commutator,
        lehmann_p,
        lehmann_m,
        total: anticommutator + commutator + lehmann_p + lehmann_m,
    })
}

/// Both coefficients from one diagonalization of `H`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Coefficients {
    pub qe: QeReport,
    pub m: MReport,
    pub degeneracy_tol: f64,
    pub degenerate_blocks: usize,
    pub largest_block: usize,
    /// `max |VᵀV − 1|` of the eigenbasis used.
    pub orthogonality_error: f64,
}

fn diagonalize(model: &IsingModel) -> Result<EigenDecomposition<f64>> {
    check_capacity(model, MAX_MAGNUS_SITES, "perturbative coefficients")?;
    dense_eigh(&build_dense(model, OperatorKind::H)?)
}

/// `q_E` using a supplied eigendecomposition of `H`.
pub fn qe_with_eigensystem(model: &IsingModel, eig: &EigenDecomposition<f64>, tol: f64) -> Result<QeReport> {
    qe_from_basis(&Eigenbasis::new(model, eig, tol)?)
}

/// `m` using a supplied eigendecomposition of `H`.
pub fn m_with_eigensystem(model: &IsingModel, eig: &EigenDecomposition<f64>, tol: f64) -> Result<MReport> {
    m_from_basis(&Eigenbasis::new(model, eig, tol)?)
}

/// Coefficient of `(hτ)²` in the long-time simulation accuracy `Q_E`.
pub fn compute_qe(model: &IsingModel) -> Result<f64> {
    let eig = diagonalize(model)?;
    Ok(qe_with_eigensystem(model, &eig, DEFAULT_DEGENERACY_TOL)?.q_e)
}

/// Coefficient of `(hτ)²` in the long-time magnetization error `M_{τ=0} − M_τ`.
pub fn compute_m(model: &IsingModel, degeneracy_tol: f64) -> Result<f64> {
    let eig = diagonalize(model)?;
    Ok(m_with_eigensystem(model, &eig, degeneracy_tol)?.m)
}

/// `q_E`, `m` and diagnostics from a single diagonalization.
pub fn compute_coefficients(model: &IsingModel, degeneracy_tol: f64) -> Result<Coefficients> {
    let eig = diagonalize(model)?;
    let eb = Eigenbasis::new(model, &eig, degeneracy_tol)?;
    let qe = qe_from_basis(&eb)?;
    let m = m_from_basis(&eb)?;
    let sizes = eb.blocks.iter().map(|r| r.len());
    Ok(Coefficients {
        qe,
        m,
        degeneracy_tol,
        degenerate_blocks: eb.blocks.iter().filter(|r| r.len() > 1).count(),
        largest_block: sizes.max().unwrap_or(0),
        orthogonality_error: if model.n <= 10 { eig.orthogonality_error() } else { f64::NAN },
    })
}

/// Rotates the eigenvectors inside every degenerate block by `mix(block_len)`,
/// a caller-supplied orthogonal matrix. Used to probe basis independence.
pub fn remix_degenerate_blocks<F>(eig: &EigenDecomposition<f64>, tol: f64, mut mix: F) -> EigenDecomposition<f64>
where
    F: FnMut(usize) -> Array2<f64>,
{
    let mut out = eig.clone();
    for r in eig.degenerate_blocks(tol) {
        if r.len() < 2 {
            continue;
        }
        let q = mix(r.len());
        let cols = eig.vectors.slice(ndarray::s![.., r.clone()]);
        let mixed = cols.dot(&q);
        out.vectors.slice_mut(ndarray::s![.., r]).assign(&mixed);
    }
    out
}

/// Degenerate-block sizes of `H`, largest first.
pub fn block_sizes(eig: &EigenDecomposition<f64>, tol: f64) -> Vec<usize> {
    let mut s: Vec<usize> = eig.degenerate_blocks(tol).iter().map(|r| r.len()).collect();
    s.sort_unstable_by(|a, b| b.cmp(a));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::make_all_up_state;

    #[test]
    fn single_site_c1_is_sy() {
        let model = IsingModel::benchmark(1).unwrap();
        let ops = build_magnus(&model).unwrap();
        // C1 = (hg/2) S^y with S^y = [[0, -i/2], [i/2, 0]]
        let hg2 = model.h * model.g / 2.0;
        assert!((ops.c1.matrix[[0, 1]] - Complex64::new(0.0, -0.5 * hg2)).norm() < 1e-14);
        assert!((ops.c1.matrix[[1, 0]] - Complex64::new(0.0, 0.5 * hg2)).norm() < 1e-14);
        assert!(ops.c1.matrix[[0, 0]].norm() < 1e-15);
    }

    #[test]
    fn commuting_gates_have_no_corrections() {
        let model = IsingModel::new(4, 1.0, 2.0, 0.0).unwrap();
        let ops = build_magnus(&model).unwrap();
        assert!(ops.c1.matrix.iter().all(|z| z.norm() == 0.0));
        assert!(ops.c2.matrix.iter().all(|z| *z == 0.0));
        assert_eq!(lloyd_commutator_bound(&model, 1.0, 10).unwrap(), 0.0);
    }

    #[test]
    fn c1_vanishes_on_all_up() {
        let model = IsingModel::benchmark(6).unwrap();
        let ops = build_magnus(&model).unwrap();
        let psi = make_all_up_state(6).unwrap();
        let e: Complex64 = ops.c1.matrix.column(0).iter().zip(psi.amplitudes()).map(|(m, a)| m * a).sum();
        assert!(e.norm() < 1e-14);
    }

    #[test]
    fn magnus_orders() {
        let model = IsingModel::benchmark(3).unwrap();
        let h = build_dense(&model, OperatorKind::H).unwrap().to_complex();
        assert_eq!(magnus_hf(&model, 0.0, 2).unwrap().matrix, h.matrix);
        let tau = 0.3;
        let d = magnus_hf(&model, tau, 2).unwrap().matrix - magnus_hf(&model, tau, 1).unwrap().matrix;
        let c2 = build_magnus(&model).unwrap().c2.matrix.mapv(|x| Complex64::new(x * tau * tau, 0.0));
        assert!((d - c2).iter().all(|z| z.norm() < 1e-14));
        assert!(magnus_hf(&model, tau, 3).is_err());
    }

    #[test]
    fn lloyd_bound_linear_in_n_at_fixed_tau() {
        let model = IsingModel::benchmark(4).unwrap();
        let b1 = lloyd_commutator_bound(&model, 1.0, 10).unwrap();
        let b2 = lloyd_commutator_bound(&model, 2.0, 20).unwrap();
        assert!((b2 / b1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn coefficients_vanish_without_transverse_field() {
        let model = IsingModel::new(5, 1.0, 2.0, 0.0).unwrap();
        assert!(compute_qe(&model).unwrap().abs() < 1e-14);
        assert!(compute_m(&model, DEFAULT_DEGENERACY_TOL).unwrap().abs() < 1e-14);
    }

    #[test]
    fn capacity_guards() {
        let model = IsingModel::benchmark(13).unwrap();
        assert!(matches!(build_magnus(&model), Err(TrotterError::Capacity { .. })));
        assert!(matches!(compute_qe(&model), Err(TrotterError::Capacity { .. })));
        let model = IsingModel::benchmark(11).unwrap();
        assert!(matches!(lloyd_commutator_bound(&model, 1.0, 1), Err(TrotterError::Capacity { .. })));
    }
}
