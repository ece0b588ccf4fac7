//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const LOG2_E: f64 = std::f64::consts::LOG2_E;

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Diagonal complex matrix from real entries.
pub fn diag_real(d: &[f64]) -> CMat {
    let n = d.len();
    CMat::from_fn(n, n, |i, j| if i == j { c(d[i]) } else { Complex64::new(0.0, 0.0) })
}

/// `U · diag(d) · Uᴴ`.
pub fn unitary_congruence(u: &CMat, d: &[f64]) -> CMat {
    let mut ud = u.clone();
    for (j, &dj) in d.iter().enumerate() {
        ud.column_mut(j).scale_mut(dj);
    }
    &ud * u.adjoint()
}

/// ‖U·Uᴴ − I‖_F.
pub fn unitarity_error(u: &CMat) -> f64 {
    let n = u.nrows();
    (u * u.adjoint() - identity(n)).norm()
}

/// Hermitian-symmetric part `(A + Aᴴ)/2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// Re tr(Aᴴ B), the real Frobenius inner product.
pub fn re_inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Quadratic form uᴴ A u for a column of `basis`, real part.
pub fn column_quadratic_form(basis: &CMat, col: usize, a: &CMat) -> f64 {
    let u = basis.column(col);
    let au = a * u;
    u.iter().zip(au.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(a: &CMat) -> (Vec<f64>, CMat) {
    let eig = hermitian_part(a).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMat::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    (vals, vecs)
}

/// Hermitian PSD square root. Eigenvalues below `-tol` are rejected; small
/// negative ones are clipped to zero.
pub fn psd_sqrt(a: &CMat, tol: f64) -> Result<CMat> {
    let (vals, vecs) = hermitian_eigen(a);
    if let Some(&min) = vals.first() {
        if min < -tol {
            return Err(Error::invalid(format!(
                "matrix is not positive semidefinite (min eigenvalue {min:e})"
            )));
        }
    }
    let roots: Vec<f64> = vals.iter().map(|&v| v.max(0.0).sqrt()).collect();
    Ok(unitary_congruence(&vecs, &roots))
}

/// Numerically stable ln Σ exp(x_i).
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Real-valued matrix rows as nested vectors, used by the JSON schemas.
pub fn real_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Complex matrix rows as `[re, im]` pairs.
pub fn complex_rows(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn complex_from_rows(rows: &[Vec<[f64; 2]>]) -> Result<CMat> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::invalid("ragged complex matrix rows"));
    }
    Ok(CMat::from_fn(nr, nc, |i, j| {
        Complex64::new(rows[i][j][0], rows[i][j][1])
    }))
}

pub fn real_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::invalid("ragged real matrix rows"));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_survives_large_offsets() {
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[0.0]) - 0.0).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = CMat::from_row_slice(
            2,
            2,
            &[c(2.0), Complex64::new(0.5, 0.3), Complex64::new(0.5, -0.3), c(1.0)],
        );
        let s = psd_sqrt(&a, 1e-10).unwrap();
        assert!((&s * &s - &a).norm() < 1e-12);
        assert!(psd_sqrt(&diag_real(&[1.0, -1.0]), 1e-8).is_err());
    }

    #[test]
    fn eigen_is_sorted_and_reconstructs() {
        let a = diag_real(&[3.0, 1.0, 2.0]);
        let (vals, vecs) = hermitian_eigen(&a);
        assert_eq!(vals, vec![1.0, 2.0, 3.0]);
        assert!((unitary_congruence(&vecs, &vals) - a).norm() < 1e-12);
    }
}
