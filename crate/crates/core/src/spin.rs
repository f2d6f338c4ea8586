//! Spin-1/2 chain basis, the Ising model and its operators.
//!
//! Basis convention, used everywhere in the crate: site `l` (0-based) is bit
//! `l` of the basis index; bit value 0 is spin up (`S^z = +1/2`), bit value 1
//! is spin down. Spin operators are `S^γ = σ^γ / 2`.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrotterError};

/// Largest chain handled by the state-vector kernels (2^24 amplitudes).
pub const MAX_SITES: usize = 24;
/// Largest chain for which explicit matrices may be built.
pub const MAX_DENSE_SITES: usize = 14;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Boundary convention of the chain. Only open chains are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Open,
}

/// `H = H_Z + H_X` with `H_Z = J Σ S^z_l S^z_{l+1} + h Σ S^z_l` and
/// `H_X = g Σ S^x_l` on an open chain of `n` sites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsingModel {
    pub n: usize,
    pub j: f64,
    pub h: f64,
    pub g: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl IsingModel {
    pub fn new(n: usize, j: f64, h: f64, g: f64) -> Result<Self> {
        let model = Self { n, j, h, g, boundary: Boundary::Open };
        model.validate()?;
        Ok(model)
    }

    /// The benchmark point `h/J = g/J = 2` with `J = 1`.
    pub fn benchmark(n: usize) -> Result<Self> {
        Self::new(n, 1.0, 2.0, 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > MAX_SITES {
            return Err(TrotterError::Capacity { what: "state vector", n: self.n, max: MAX_SITES });
        }
        if self.j == 0.0 || !self.j.is_finite() {
            return Err(TrotterError::InvalidParameter("J must be finite and nonzero".into()));
        }
        if !self.h.is_finite() || !self.g.is_finite() {
            return Err(TrotterError::InvalidParameter("h and g must be finite".into()));
        }
        Ok(())
    }

    /// Hilbert-space dimension `2^N`.
    pub fn dim(&self) -> usize {
        1usize << self.n
    }

    pub fn with_g(mut self, g: f64) -> Self {
        self.g = g;
        self
    }
}

/// `S^z` eigenvalue (±1/2) of site `l` in basis configuration `b`.
#[inline]
pub fn spin_z(b: usize, l: usize) -> f64 {
    if (b >> l) & 1 == 0 {
        0.5
    } else {
        -0.5
    }
}

/// Mirror image of configuration `b` under the chain reflection `l -> N-1-l`.
pub fn reflect(b: usize, n: usize) -> usize {
    let mut r = 0;
    for l in 0..n {
        if (b >> l) & 1 == 1 {
            r |= 1 << (n - 1 - l);
        }
    }
    r
}

/// Dimension of the reflection-even sector, `(2^N + 2^ceil(N/2)) / 2`.
///
/// The all-up state and every operator of the model are reflection
/// symmetric, so this is the number of states reachable from `|ψ₀⟩`.
pub fn reflection_even_dimension(n: usize) -> usize {
    ((1usize << n) + (1usize << n.div_ceil(2))) / 2
}

/// Complex amplitudes over the `2^N` z-basis configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinState {
    n: usize,
    amplitudes: Vec<Complex64>,
}

impl SpinState {
    pub fn from_amplitudes(n: usize, amplitudes: Vec<Complex64>) -> Result<Self> {
        if n == 0 || n > MAX_SITES {
            return Err(TrotterError::Capacity { what: "state vector", n, max: MAX_SITES });
        }
        if amplitudes.len() != 1 << n {
            return Err(TrotterError::DimensionMismatch { expected: 1 << n, got: amplitudes.len() });
        }
        Ok(Self { n, amplitudes })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::from_amplitudes(n, vec![ZERO; 1usize.checked_shl(n as u32).unwrap_or(0).max(1)])
    }

    /// Normalized state with independent Gaussian real and imaginary parts.
    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Result<Self> {
        let dim = 1usize << n;
        let amps = (0..dim)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                Complex64::new(a, b)
            })
            .collect();
        let mut s = Self::from_amplitudes(n, amps)?;
        s.normalize();
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Rescales to unit norm and returns the norm before rescaling.
    pub fn normalize(&mut self) -> f64 {
        let norm = self.norm();
        if norm > 0.0 {
            let inv = 1.0 / norm;
            self.amplitudes.iter_mut().for_each(|a| *a *= inv);
        }
        norm
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &SpinState) -> Complex64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn check_same_dim(&self, other: &SpinState) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(TrotterError::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &SpinState) -> f64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn l2_distance(&self, other: &SpinState) -> f64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// `|ψ₀⟩ = ⊗_l |↑⟩_l`: amplitude one on basis index 0.
pub fn make_all_up_state(n: usize) -> Result<SpinState> {
    let mut state = SpinState::zeros(n)?;
    state.amplitudes[0] = Complex64::new(1.0, 0.0);
    Ok(state)
}

/// An operator diagonal in the z basis, stored as one value per configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalObservable {
    pub values: Vec<f64>,
    pub label: String,
}

impl DiagonalObservable {
    /// `⟨ψ|O|ψ⟩`, real by construction.
    pub fn expectation(&self, state: &SpinState) -> f64 {
        self.values
            .iter()
            .zip(state.amplitudes())
            .map(|(v, a)| v * a.norm_sqr())
            .sum()
    }

    /// `out = O · state`.
    pub fn apply(&self, state: &SpinState, out: &mut SpinState) -> Result<()> {
        if state.dim() != self.values.len() {
            return Err(TrotterError::DimensionMismatch { expected: self.values.len(), got: state.dim() });
        }
        state.check_same_dim(out)?;
        for ((o, a), v) in out.amplitudes.iter_mut().zip(&state.amplitudes).zip(&self.values) {
            *o = a * v;
        }
        Ok(())
    }

    /// In-place `state ← O · state`.
    pub fn apply_in_place(&self, state: &mut SpinState) {
        for (a, v) in state.amplitudes.iter_mut().zip(&self.values) {
            *a *= v;
        }
    }

    pub fn trace(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Diagonal of `H_Z`.
pub fn hz_diagonal(model: &IsingModel) -> DiagonalObservable {
    let n = model.n;
    let values = (0..model.dim())
        .map(|b| {
            let zz: f64 = (0..n.saturating_sub(1)).map(|l| spin_z(b, l) * spin_z(b, l + 1)).sum();
            let z: f64 = (0..n).map(|l| spin_z(b, l)).sum();
            model.j * zz + model.h * z
        })
        .collect();
    DiagonalObservable { values, label: "H_Z".into() }
}

/// Diagonal of the magnetization density `M = N⁻¹ Σ S^z_l`.
pub fn magnetization_diagonal(n: usize) -> Result<DiagonalObservable> {
    if n == 0 || n > MAX_SITES {
        return Err(TrotterError::Capacity { what: "state vector", n, max: MAX_SITES });
    }
    let inv = 1.0 / n as f64;
    let values = (0..1usize << n)
        .map(|b| inv * (n as f64 * 0.5 - b.count_ones() as f64))
        .collect();
    Ok(DiagonalObservable { values, label: "M".into() })
}

/// `out = H_X · state`, summing the bit-flipped partner amplitudes times `g/2`.
pub fn apply_hx(state: &SpinState, model: &IsingModel, out: &mut SpinState) -> Result<()> {
    state.check_same_dim(out)?;
    if state.dim() != model.dim() {
        return Err(TrotterError::DimensionMismatch { expected: model.dim(), got: state.dim() });
    }
    let half_g = 0.5 * model.g;
    let src = &state.amplitudes;
    for (b, o) in out.amplitudes.iter_mut().enumerate() {
        let mut acc = ZERO;
        for l in 0..model.n {
            acc += src[b ^ (1 << l)];
        }
        *o = acc * half_g;
    }
    Ok(())
}

/// `out = H · state` given the precomputed `H_Z` diagonal.
pub fn apply_h(state: &SpinState, model: &IsingModel, hz: &DiagonalObservable, out: &mut SpinState) -> Result<()> {
    apply_hx(state, model, out)?;
    for ((o, a), v) in out.amplitudes.iter_mut().zip(&state.amplitudes).zip(&hz.values) {
        *o += a * v;
    }
    Ok(())
}

/// `⟨ψ|H_X|ψ⟩` without allocating.
pub fn hx_expectation(state: &SpinState, model: &IsingModel) -> f64 {
    let amps = &state.amplitudes;
    let mut acc = 0.0;
    for l in 0..model.n {
        let stride = 1usize << l;
        for base in (0..amps.len()).step_by(2 * stride) {
            for k in base..base + stride {
                let p = amps[k].conj() * amps[k + stride];
                acc += p.re;
            }
        }
    }
    // Each unordered pair appears once above; H_X couples it with weight g/2 both ways.
    model.g * acc
}

/// `⟨ψ|H|ψ⟩`.
pub fn energy(state: &SpinState, model: &IsingModel, hz: &DiagonalObservable) -> f64 {
    hz.expectation(state) + hx_expectation(state, model)
}

/// Which model operator to materialize as an explicit matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    H,
    HZ,
    HX,
    M,
}

impl OperatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            OperatorKind::H => "H",
            OperatorKind::HZ => "H_Z",
            OperatorKind::HX => "H_X",
            OperatorKind::M => "M",
        }
    }
}

/// An explicit matrix with a label.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator<T> {
    pub matrix: Array2<T>,
    pub label: String,
}

impl<T> DenseOperator<T> {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

impl DenseOperator<f64> {
    pub fn to_complex(&self) -> DenseOperator<Complex64> {
        DenseOperator { matrix: self.matrix.mapv(|x| Complex64::new(x, 0.0)), label: self.label.clone() }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let m = &self.matrix;
        let mut worst = 0.0f64;
        for r in 0..m.nrows() {
            for c in 0..r {
                worst = worst.max((m[[r, c]] - m[[c, r]]).abs());
            }
        }
        worst
    }
}

impl DenseOperator<Complex64> {
    /// `max |A − A†|`.
    pub fn max_hermiticity_defect(&self) -> f64 {
        let m = &self.matrix;
        let mut worst = 0.0f64;
        for r in 0..m.nrows() {
            for c in 0..=r {
                worst = worst.max((m[[r, c]] - m[[c, r]].conj()).norm());
            }
        }
        worst
    }
}

/// Explicit `2^N × 2^N` matrix of `H`, `H_Z`, `H_X` or `M`.
pub fn build_dense(model: &IsingModel, which: OperatorKind) -> Result<DenseOperator<f64>> {
    if model.n > MAX_DENSE_SITES {
        return Err(TrotterError::Capacity { what: "dense operator", n: model.n, max: MAX_DENSE_SITES });
    }
    let dim = model.dim();
    let mut matrix = Array2::<f64>::zeros((dim, dim));
    let with_diag = |m: &mut Array2<f64>, d: &DiagonalObservable| {
        for (b, v) in d.values.iter().enumerate() {
            m[[b, b]] += v;
        }
    };
    let with_hx = |m: &mut Array2<f64>| {
        for b in 0..dim {
            for l in 0..model.n {
                m[[b, b ^ (1 << l)]] += 0.5 * model.g;
            }
        }
    };
    match which {
        OperatorKind::H => {
            with_diag(&mut matrix, &hz_diagonal(model));
            with_hx(&mut matrix);
        }
        OperatorKind::HZ => with_diag(&mut matrix, &hz_diagonal(model)),
        OperatorKind::HX => with_hx(&mut matrix),
        OperatorKind::M => with_diag(&mut matrix, &magnetization_diagonal(model.n)?),
    }
    Ok(DenseOperator { matrix, label: which.label().into() })
}

/// Dense matrix-vector product used to cross-check the fast appliers.
pub fn dense_apply(op: &DenseOperator<f64>, state: &SpinState) -> Result<SpinState> {
    if op.dim() != state.dim() {
        return Err(TrotterError::DimensionMismatch { expected: op.dim(), got: state.dim() });
    }
    let amps: Vec<Complex64> = op
        .matrix
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(state.amplitudes()).map(|(m, a)| a * m).sum())
        .collect();
    SpinState::from_amplitudes(state.n(), amps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_up_single_site() {
        let s = make_all_up_state(1).unwrap();
        assert_eq!(s.amplitudes(), &[Complex64::new(1.0, 0.0), ZERO]);
    }

    #[test]
    fn all_up_three_sites_is_product_state() {
        let s = make_all_up_state(3).unwrap();
        assert_eq!(s.amplitudes().iter().filter(|a| a.norm() > 0.0).count(), 1);
        assert!((s.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn all_up_out_of_range() {
        assert!(matches!(make_all_up_state(0), Err(TrotterError::Capacity { .. })));
        assert!(matches!(make_all_up_state(25), Err(TrotterError::Capacity { .. })));
    }

    #[test]
    fn hz_on_two_sites() {
        let m = IsingModel::new(2, 1.0, 2.0, 2.0).unwrap();
        let hz = hz_diagonal(&m);
        let psi = make_all_up_state(2).unwrap();
        assert!((hz.expectation(&psi) - 2.25).abs() < 1e-15);
        let m0 = IsingModel::new(2, 1.0, 0.0, 2.0).unwrap();
        // ↑ on site 0, ↓ on site 1 -> index 0b10
        assert!((hz_diagonal(&m0).values[0b10] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn hz_is_traceless() {
        for n in 1..=9 {
            let m = IsingModel::new(n, 1.3, -0.7, 2.0).unwrap();
            assert!(hz_diagonal(&m).trace().abs() < 1e-10);
        }
    }

    #[test]
    fn magnetization_values() {
        let m = magnetization_diagonal(4).unwrap();
        assert_eq!(m.values[0], 0.5);
        assert_eq!(m.values[0b0101], 0.0);
        for b in 0..16 {
            assert_eq!(m.values[b] + m.values[!b & 0xF], 0.0);
        }
    }

    #[test]
    fn hx_flips_single_spin() {
        let m = IsingModel::new(1, 1.0, 2.0, 2.0).unwrap();
        let psi = make_all_up_state(1).unwrap();
        let mut out = SpinState::zeros(1).unwrap();
        apply_hx(&psi, &m, &mut out).unwrap();
        assert_eq!(out.amplitudes(), &[ZERO, Complex64::new(1.0, 0.0)]);
    }

    #[test]
    fn hx_vanishes_on_all_up() {
        for n in 1..=8 {
            let m = IsingModel::benchmark(n).unwrap();
            assert_eq!(hx_expectation(&make_all_up_state(n).unwrap(), &m), 0.0);
        }
    }

    #[test]
    fn hx_dimension_mismatch() {
        let m = IsingModel::benchmark(3).unwrap();
        let psi = make_all_up_state(3).unwrap();
        let mut out = SpinState::zeros(2).unwrap();
        assert!(matches!(apply_hx(&psi, &m, &mut out), Err(TrotterError::DimensionMismatch { .. })));
    }

    #[test]
    fn hx_matches_dense_on_random_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = IsingModel::benchmark(8).unwrap();
        let psi = SpinState::random(8, &mut rng).unwrap();
        let mut out = SpinState::zeros(8).unwrap();
        apply_hx(&psi, &m, &mut out).unwrap();
        let dense = dense_apply(&build_dense(&m, OperatorKind::HX).unwrap(), &psi).unwrap();
        assert!(out.max_abs_diff(&dense) < 1e-12);
        let e = hx_expectation(&psi, &m);
        assert!((e - psi.inner(&out).re).abs() < 1e-12);
    }

    #[test]
    fn dense_single_site_hx() {
        let m = IsingModel::benchmark(1).unwrap();
        let d = build_dense(&m, OperatorKind::HX).unwrap();
        assert_eq!(d.matrix, ndarray::array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn dense_linearity_and_symmetry() {
        let m = IsingModel::benchmark(5).unwrap();
        let h = build_dense(&m, OperatorKind::H).unwrap();
        let hz = build_dense(&m, OperatorKind::HZ).unwrap();
        let hx = build_dense(&m, OperatorKind::HX).unwrap();
        let diff = &h.matrix - &(&hz.matrix + &hx.matrix);
        assert!(diff.iter().all(|x| x.abs() < 1e-14));
        for op in [&h, &hz, &hx, &build_dense(&m, OperatorKind::M).unwrap()] {
            assert_eq!(op.max_asymmetry(), 0.0);
        }
        assert!(h.matrix.diag().sum().abs() < 1e-12);
    }

    #[test]
    fn dense_capacity_guard() {
        let m = IsingModel::benchmark(15).unwrap();
        assert!(matches!(build_dense(&m, OperatorKind::H), Err(TrotterError::Capacity { .. })));
    }

    #[test]
    fn reflection_sector_dimension_counts_even_states() {
        for n in 1..=10 {
            let dim = 1usize << n;
            let palindromes = (0..dim).filter(|&b| reflect(b, n) == b).count();
            assert_eq!(reflection_even_dimension(n), (dim + palindromes) / 2);
        }
        assert_eq!(reflection_even_dimension(12), 2080);
    }

    #[test]
    fn model_validation() {
        assert!(IsingModel::new(4, 0.0, 1.0, 1.0).is_err());
        assert!(IsingModel::new(4, 1.0, f64::NAN, 1.0).is_err());
        assert!(IsingModel::new(0, 1.0, 1.0, 1.0).is_err());
    }
}
