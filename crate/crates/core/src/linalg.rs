//! Dense linear-algebra helpers over `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
const SYMMETRY_TOL: f64 = 1e-9;

/// Check that `m` is square, symmetric and positive definite with
/// minimum eigenvalue above `1e-12 * trace / K`.
pub fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let k = m.nrows();
    if k == 0 || m.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be square and nonempty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("{what} has non-finite entries")));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..k {
        for j in (i + 1)..k {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::NotPositiveDefinite(format!(
                    "{what} is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let trace = m.trace();
    let min_eig = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if !(trace > 0.0) || min_eig <= 1e-12 * trace / k as f64 {
        return Err(Error::NotPositiveDefinite(format!(
            "{what} has minimum eigenvalue {min_eig:.3e} (trace {trace:.3e})"
        )));
    }
    Ok(())
}

/// Cholesky factor of an SPD matrix, with an error instead of `None`.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| Error::NotPositiveDefinite(format!("Cholesky factorization of {what} failed")))
}

/// The `(K-1) x K` matrix `(-1 | I)` mapping responses to differences from placebo.
pub fn placebo_difference_matrix(k: usize) -> DMatrix<f64> {
    let mut c0 = DMatrix::zeros(k - 1, k);
    for i in 0..k - 1 {
        c0[(i, 0)] = -1.0;
        c0[(i, i + 1)] = 1.0;
    }
    c0
}

/// Collapse `(mu, S)` on K groups to placebo differences `(C0 mu, C0 S C0')`.
pub fn collapse_to_placebo_differences(
    mu: &DVector<f64>,
    s: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let c0 = placebo_difference_matrix(mu.len());
    let mu_c = &c0 * mu;
    let s_c = &c0 * s * c0.transpose();
    (mu_c, s_c)
}

/// Symmetrize in place: `(m + m') / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for i in 0..k {
        for j in (i + 1)..k {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
