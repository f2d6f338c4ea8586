//! Thin wrappers over the LAPACK routines the dense oracles need.
//!
//! All routines take row-major `ndarray` inputs and return eigenvectors as
//! the columns of a standard-layout matrix.

use lapack_sys::{__BindgenComplex, dsyevd_, zgees_, zheevd_};
use ndarray::{Array1, Array2, ShapeBuilder};
use num_complex::Complex64;
use std::os::raw::c_int;

use crate::error::{Result, TrotterError};

// Pull in the OpenBLAS link directives.
use ndarray_linalg as _;

fn lapack_n(n: usize) -> Result<c_int> {
    c_int::try_from(n).map_err(|_| TrotterError::InvalidParameter(format!("matrix size {n} too large for LAPACK")))
}

/// Column-major buffer holding the same matrix as `a`.
fn fortran_buffer<T: Clone>(a: &Array2<T>) -> Vec<T> {
    a.t().as_standard_layout().iter().cloned().collect()
}

fn from_fortran<T>(n: usize, buf: Vec<T>) -> Array2<T>
where
    T: Clone,
{
    Array2::from_shape_vec((n, n).f(), buf)
        .expect("buffer length matches n*n")
        .as_standard_layout()
        .into_owned()
}

/// Full spectrum of a real symmetric matrix (divide and conquer).
///
/// Eigenvalues come back ascending; column `k` of the returned matrix is the
/// eigenvector of eigenvalue `k`.
pub fn eigh_real(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(TrotterError::DimensionMismatch { expected: n, got: a.ncols() });
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    let nn = lapack_n(n)?;
    let mut buf = fortran_buffer(a);
    let mut w = vec![0.0f64; n];
    let mut info: c_int = 0;
    let mut work_query = [0.0f64];
    let mut iwork_query = [0 as c_int];
    let query: c_int = -1;
    unsafe {
        dsyevd_(
            b"V".as_ptr() as *const _,
            b"L".as_ptr() as *const _,
            &nn,
            buf.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work_query.as_mut_ptr(),
            &query,
            iwork_query.as_mut_ptr(),
            &query,
            &mut info,
        );
    }
    if info != 0 {
        return Err(TrotterError::Lapack { routine: "dsyevd", info });
    }
    let lwork = work_query[0] as c_int;
    let liwork = iwork_query[0];
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    let mut iwork = vec![0 as c_int; liwork.max(1) as usize];
    unsafe {
        dsyevd_(
            b"V".as_ptr() as *const _,
            b"L".as_ptr() as *const _,
            &nn,
            buf.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(TrotterError::Lapack { routine: "dsyevd", info });
    }
    Ok((Array1::from(w), from_fortran(n, buf)))
}

fn as_lapack(ptr: *mut Complex64) -> *mut __BindgenComplex<f64> {
    ptr as *mut __BindgenComplex<f64>
}

/// Full spectrum of a complex Hermitian matrix (divide and conquer).
pub fn eigh_complex(a: &Array2<Complex64>) -> Result<(Array1<f64>, Array2<Complex64>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(TrotterError::DimensionMismatch { expected: n, got: a.ncols() });
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    let nn = lapack_n(n)?;
    let mut buf = fortran_buffer(a);
    let mut w = vec![0.0f64; n];
    let mut info: c_int = 0;
    let mut work_query = [Complex64::new(0.0, 0.0)];
    let mut rwork_query = [0.0f64];
    let mut iwork_query = [0 as c_int];
    let query: c_int = -1;
    unsafe {
        zheevd_(
            b"V".as_ptr() as *const _,
            b"L".as_ptr() as *const _,
            &nn,
            as_lapack(buf.as_mut_ptr()),
            &nn,
            w.as_mut_ptr(),
            as_lapack(work_query.as_mut_ptr()),
            &query,
            rwork_query.as_mut_ptr(),
            &query,
            iwork_query.as_mut_ptr(),
            &query,
            &mut info,
        );
    }
    if info != 0 {
        return Err(TrotterError::Lapack { routine: "zheevd", info });
    }
    let lwork = work_query[0].re as c_int;
    let lrwork = rwork_query[0] as c_int;
    let liwork = iwork_query[0];
    let mut work = vec![Complex64::new(0.0, 0.0); lwork.max(1) as usize];
    let mut rwork = vec![0.0f64; lrwork.max(1) as usize];
    let mut iwork = vec![0 as c_int; liwork.max(1) as usize];
    unsafe {
        zheevd_(
            b"V".as_ptr() as *const _,
            b"L".as_ptr() as *const _,
            &nn,
            as_lapack(buf.as_mut_ptr()),
            &nn,
            w.as_mut_ptr(),
            as_lapack(work.as_mut_ptr()),
            &lwork,
            rwork.as_mut_ptr(),
            &lrwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(TrotterError::Lapack { routine: "zheevd", info });
    }
    Ok((Array1::from(w), from_fortran(n, buf)))
}

/// Complex Schur decomposition `A = Z T Z†`.
///
/// Returns the diagonal of `T` and the unitary `Z`. For a normal matrix `T`
/// is diagonal up to rounding, so the columns of `Z` form an orthonormal
/// eigenbasis even inside (near-)degenerate clusters.
pub fn schur_complex(a: &Array2<Complex64>) -> Result<(Array1<Complex64>, Array2<Complex64>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(TrotterError::DimensionMismatch { expected: n, got: a.ncols() });
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    let nn = lapack_n(n)?;
    let mut buf = fortran_buffer(a);
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    let mut vs = vec![Complex64::new(0.0, 0.0); n * n];
    let mut rwork = vec![0.0f64; n];
    let mut bwork = vec![0 as c_int; n];
    let mut sdim: c_int = 0;
    let mut info: c_int = 0;
    let mut work_query = [Complex64::new(0.0, 0.0)];
    let query: c_int = -1;
    unsafe {
        zgees_(
            b"V".as_ptr() as *const _,
            b"N".as_ptr() as *const _,
            None,
            &nn,
            as_lapack(buf.as_mut_ptr()),
            &nn,
            &mut sdim,
            as_lapack(w.as_mut_ptr()),
            as_lapack(vs.as_mut_ptr()),
            &nn,
            as_lapack(work_query.as_mut_ptr()),
            &query,
            rwork.as_mut_ptr(),
            bwork.as_mut_ptr(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(TrotterError::Lapack { routine: "zgees", info });
    }
    let lwork = work_query[0].re as c_int;
    let mut work = vec![Complex64::new(0.0, 0.0); lwork.max(1) as usize];
    unsafe {
        zgees_(
            b"V".as_ptr() as *const _,
            b"N".as_ptr() as *const _,
            None,
            &nn,
            as_lapack(buf.as_mut_ptr()),
            &nn,
            &mut sdim,
            as_lapack(w.as_mut_ptr()),
            as_lapack(vs.as_mut_ptr()),
            &nn,
            as_lapack(work.as_mut_ptr()),
            &lwork,
            rwork.as_mut_ptr(),
            bwork.as_mut_ptr(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(TrotterError::Lapack { routine: "zgees", info });
    }
    Ok((Array1::from(w), from_fortran(n, vs)))
}

/// `exp(-i t A)` for a complex Hermitian `A`.
pub fn expm_hermitian(a: &Array2<Complex64>, t: f64) -> Result<Array2<Complex64>> {
    let (w, v) = eigh_complex(a)?;
    let phases = w.mapv(|e| Complex64::from_polar(1.0, -e * t));
    let scaled = &v * &phases.view().insert_axis(ndarray::Axis(0));
    Ok(scaled.dot(&v.t().mapv(|z| z.conj())))
}

/// `exp(-i t A)` for a real symmetric `A`.
pub fn expm_symmetric(a: &Array2<f64>, t: f64) -> Result<Array2<Complex64>> {
    let (w, v) = eigh_real(a)?;
    let vc = v.mapv(|x| Complex64::new(x, 0.0));
    let phases = w.mapv(|e| Complex64::from_polar(1.0, -e * t));
    let scaled = &vc * &phases.view().insert_axis(ndarray::Axis(0));
    Ok(scaled.dot(&vc.t()))
}

/// Spectral norm (largest singular value) of a complex matrix.
pub fn spectral_norm(a: &Array2<Complex64>) -> Result<f64> {
    let gram = a.t().mapv(|z| z.conj()).dot(a);
    let (w, _) = eigh_complex(&gram)?;
    Ok(w.iter().cloned().fold(0.0f64, f64::max).sqrt())
}

/// Checks the linked BLAS against a naive product on a matrix large enough
/// to reach the optimized kernels.
///
/// Some OpenBLAS builds pick a kernel family on AVX-512 hosts whose `dgemm`
/// is wrong; every dense oracle would then be silently corrupted. Setting
/// `OPENBLAS_CORETYPE=SkylakeX` (or `Haswell`) in the environment avoids it.
pub fn blas_self_check() -> Result<()> {
    let n = 256;
    let a = Array2::from_shape_fn((n, n), |(i, j)| ((i * 7 + j * 13) % 17) as f64 - 8.0);
    let b = Array2::from_shape_fn((n, n), |(i, j)| ((i * 3 + j * 5) % 11) as f64 - 5.0);
    let fast = a.t().dot(&b);
    for i in (0..n).step_by(17) {
        for j in 0..n {
            let exact: f64 = (0..n).map(|k| a[[k, i]] * b[[k, j]]).sum();
            if (fast[[i, j]] - exact).abs() > 1e-9 {
                return Err(TrotterError::Contract(
                    "the linked BLAS returns wrong matrix products; set OPENBLAS_CORETYPE=SkylakeX (or Haswell)"
                        .into(),
                ));
            }
        }
    }
    Ok(())
}

/// Largest absolute entry.
pub fn max_abs(a: &Array2<Complex64>) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
