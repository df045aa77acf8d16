//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Relative pivot threshold below which a matrix is treated as singular.
const SINGULAR_RTOL: f64 = 1e-13;

/// Solves `a x = b` with full pivoting; `None` when `a` is numerically singular.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Some(DVector::zeros(0));
    }
    let lu = a.clone().full_piv_lu();
    let u = lu.u();
    let max_pivot = u.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let min_pivot = u.diagonal().iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
    if max_pivot == 0.0 || min_pivot <= SINGULAR_RTOL * max_pivot {
        return None;
    }
    let x = lu.solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// Smallest singular value of a (possibly rectangular) matrix; 0 for an empty
/// matrix with columns but no rows.
pub fn min_singular_value(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().min()
}

/// `‖a⁻¹‖₂`, or `+∞` when `a` is singular.
pub fn inverse_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let s = min_singular_value(a);
    if s <= SINGULAR_RTOL * spectral_norm(a) {
        f64::INFINITY
    } else {
        1.0 / s
    }
}

/// Central-difference Jacobian of `f` at `z`, step `1e-6 (1 + ‖z‖)`.
pub fn fd_jacobian<F>(f: F, z: &DVector<f64>, rows: usize) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let h = 1e-6 * (1.0 + z.norm());
    let mut jac = DMatrix::zeros(rows, z.len());
    let mut zp = z.clone();
    for j in 0..z.len() {
        zp[j] = z[j] + h;
        let fp = f(&zp);
        zp[j] = z[j] - h;
        let fm = f(&zp);
        zp[j] = z[j];
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    jac
}

/// Reshapes a length-`n²` vector into an `n × n` matrix (column major).
pub fn square_from_vec(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v.as_slice())
}
