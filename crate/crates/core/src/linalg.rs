//! Small dense helpers for Hermitian matrices.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type CMatrix<R> = DMatrix<Complex<R>>;

pub fn c<R: Real>(re: f64, im: f64) -> Complex<R> {
    Complex::new(R::lit(re), R::lit(im))
}

pub fn real<R: Real>(x: R) -> Complex<R> {
    Complex::new(x, R::zero())
}

pub fn hermitian_part<R: Real>(m: &CMatrix<R>) -> CMatrix<R> {
    (m + m.adjoint()).scale(R::lit(0.5))
}

/// Eigen-decomposition of the Hermitian part of `m`; eigenvalues ascending.
pub fn eigh<R: Real>(m: &CMatrix<R>) -> (Vec<R>, CMatrix<R>) {
    let eig = SymmetricEigen::new(hermitian_part(m));
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn eigenvalues<R: Real>(m: &CMatrix<R>) -> Vec<R> {
    eigh(m).0
}

/// Rebuilds `V f(D) V†` from an eigen-decomposition.
pub fn spectral_map<R: Real, F: Fn(R) -> R>(m: &CMatrix<R>, f: F) -> CMatrix<R> {
    let (vals, vecs) = eigh(m);
    let mut d = CMatrix::zeros(vals.len(), vals.len());
    for (i, v) in vals.iter().enumerate() {
        d[(i, i)] = real(f(*v));
    }
    &vecs * d * vecs.adjoint()
}

/// Square root of a positive semidefinite matrix (negative round-off clipped).
pub fn psd_sqrt<R: Real>(m: &CMatrix<R>) -> CMatrix<R> {
    spectral_map(m, |x| x.max(R::zero()).sqrt())
}

pub fn trace<R: Real>(m: &CMatrix<R>) -> Complex<R> {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)]).fold(real(R::zero()), |a, b| a + b)
}

pub fn max_abs_diff<R: Real>(a: &CMatrix<R>, b: &CMatrix<R>) -> R {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (*x - *y).norm_sqr().sqrt())
        .fold(R::zero(), |m, d| m.max(d))
}

pub fn kron<R: Real>(a: &CMatrix<R>, b: &CMatrix<R>) -> CMatrix<R> {
    a.kronecker(b)
}

/// Checks Hermiticity, positivity and (optionally) unit trace.
pub fn check_density<R: Real>(rho: &CMatrix<R>, herm_tol: R, psd_tol: R, unit_trace: bool) -> Result<()> {
    if rho.nrows() != rho.ncols() {
        return Err(Error::NotPhysical("matrix is not square".into()));
    }
    let asym = max_abs_diff(rho, &rho.adjoint());
    if asym > herm_tol {
        return Err(Error::NotPhysical(format!(
            "not Hermitian (deviation {:e})",
            asym.to_f64().unwrap_or(f64::NAN)
        )));
    }
    let min = eigenvalues(rho).first().copied().unwrap_or(R::zero());
    if min < -psd_tol {
        return Err(Error::NotPhysical(format!(
            "negative eigenvalue {:e}",
            min.to_f64().unwrap_or(f64::NAN)
        )));
    }
    if unit_trace {
        let t = trace(rho);
        if (t.re - R::one()).abs() > R::lit(1e-8).max(herm_tol) || t.im.abs() > herm_tol {
            return Err(Error::NotPhysical(format!(
                "trace {} != 1",
                t.re.to_f64().unwrap_or(f64::NAN)
            )));
        }
    }
    Ok(())
}

pub fn ket_to_density<R: Real>(ket: &[Complex<R>]) -> CMatrix<R> {
    let v = nalgebra::DVector::from_column_slice(ket);
    &v * v.adjoint()
}
