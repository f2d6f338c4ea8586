//! Independent dense oracles for the integration tests: operators built from
//! Kronecker products of 2×2 spin matrices and a Taylor-series exponential,
//! sharing no code with the library.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use trotterlab::{IsingModel, SpinState};

pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn sz() -> Array2<Complex64> {
    Array2::from_shape_vec((2, 2), vec![c(0.5), c(0.0), c(0.0), c(-0.5)]).unwrap()
}

pub fn sx() -> Array2<Complex64> {
    Array2::from_shape_vec((2, 2), vec![c(0.0), c(0.5), c(0.5), c(0.0)]).unwrap()
}

pub fn kron(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    Array2::from_shape_fn((ra * rb, ca * cb), |(i, j)| a[[i / rb, j / cb]] * b[[i % rb, j % cb]])
}

/// `op` acting on site `l` of `n`; site 0 is the least significant bit.
pub fn site_op(op: &Array2<Complex64>, l: usize, n: usize) -> Array2<Complex64> {
    let mut out = Array2::eye(1);
    for site in (0..n).rev() {
        let f = if site == l { op.clone() } else { Array2::eye(2) };
        out = kron(&out, &f);
    }
    out
}

pub fn hz(m: &IsingModel) -> Array2<Complex64> {
    let n = m.n;
    let mut h: Array2<Complex64> = Array2::zeros((1 << n, 1 << n));
    for l in 0..n {
        let z = site_op(&sz(), l, n);
        h = h + z.mapv(|x| x * m.h);
        if l + 1 < n {
            h = h + z.dot(&site_op(&sz(), l + 1, n)).mapv(|x| x * m.j);
        }
    }
    h
}

pub fn hx(m: &IsingModel) -> Array2<Complex64> {
    let n = m.n;
    let mut h: Array2<Complex64> = Array2::zeros((1 << n, 1 << n));
    for l in 0..n {
        h = h + site_op(&sx(), l, n).mapv(|x| x * m.g);
    }
    h
}

pub fn h(m: &IsingModel) -> Array2<Complex64> {
    hz(m) + hx(m)
}

pub fn magnetization(n: usize) -> Array2<Complex64> {
    let mut out: Array2<Complex64> = Array2::zeros((1 << n, 1 << n));
    for l in 0..n {
        out = out + site_op(&sz(), l, n);
    }
    out.mapv(|x| x / n as f64)
}

fn one_norm(a: &Array2<Complex64>) -> f64 {
    (0..a.ncols()).map(|j| a.column(j).iter().map(|x| x.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// `exp(a)` by scaling and squaring with a 30-term Taylor series.
pub fn expm(a: &Array2<Complex64>) -> Array2<Complex64> {
    let norm = one_norm(a);
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scaled = a.mapv(|x| x / 2f64.powi(s as i32));
    let mut term: Array2<Complex64> = Array2::eye(a.nrows());
    let mut sum = term.clone();
    for k in 1..30 {
        term = term.dot(&scaled).mapv(|x| x / k as f64);
        sum = sum + &term;
    }
    for _ in 0..s {
        sum = sum.dot(&sum);
    }
    sum
}

/// `exp(−i t a)`.
pub fn propagator(a: &Array2<Complex64>, t: f64) -> Array2<Complex64> {
    expm(&a.mapv(|x| x * (-I * t)))
}

pub fn to_vec(s: &SpinState) -> Array1<Complex64> {
    Array1::from_vec(s.amplitudes().to_vec())
}

pub fn from_vec(n: usize, v: &Array1<Complex64>) -> SpinState {
    SpinState::from_amplitudes(n, v.to_vec()).unwrap()
}

pub fn expect(op: &Array2<Complex64>, v: &Array1<Complex64>) -> Complex64 {
    v.iter().zip(op.dot(v).iter()).map(|(a, b)| a.conj() * b).sum()
}

pub fn max_diff(a: &Array1<Complex64>, b: &Array1<Complex64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn l2(a: &Array1<Complex64>, b: &Array1<Complex64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

pub fn all_up(n: usize) -> Array1<Complex64> {
    let mut v = Array1::zeros(1 << n);
    v[0] = c(1.0);
    v
}

/// A seeded pseudo-random normalized state.
pub fn random_state(n: usize, seed: u64) -> SpinState {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    SpinState::random(n, &mut rng).unwrap()
}
