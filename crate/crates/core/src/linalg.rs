//! Small dense linear-algebra helpers on complex matrices.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{numerical, Error, Result};
use crate::{CMatrix, CVector, C64};

pub(crate) const J: C64 = C64::new(0.0, 1.0);

/// Solves `a * x = b`, naming `stage` in the error on singularity.
pub fn solve(a: &CMatrix, b: &CMatrix, stage: &str) -> Result<CMatrix> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return numerical(format!(
            "{stage}: dimension mismatch ({}x{} vs {}x{})",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        ));
    }
    if a.nrows() == 0 {
        return Ok(b.clone());
    }
    let lu = a.clone().lu();
    match lu.solve(b) {
        Some(x) if x.iter().all(|v| v.re.is_finite() && v.im.is_finite()) => Ok(x),
        _ => Err(singular(a, stage)),
    }
}

/// Inverse of `a`, naming `stage` in the error on singularity.
pub fn inverse(a: &CMatrix, stage: &str) -> Result<CMatrix> {
    let n = a.nrows();
    solve(a, &CMatrix::identity(n, n), stage)
}

fn singular(a: &CMatrix, stage: &str) -> Error {
    let norm = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let cond = condition_estimate(a);
    Error::Numerical(format!(
        "{stage}: singular {n}x{n} matrix (max |a| = {norm:.3e}, condition estimate {cond:.3e})",
        n = a.nrows()
    ))
}

/// Ratio of extreme singular values, `inf` when the smallest one vanishes.
pub fn condition_estimate(a: &CMatrix) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let sv = a.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Element-wise real part, kept complex.
pub fn re(m: &CMatrix) -> CMatrix {
    m.map(|v| C64::new(v.re, 0.0))
}

/// Element-wise imaginary part, kept complex (real-valued entries).
pub fn im(m: &CMatrix) -> CMatrix {
    m.map(|v| C64::new(v.im, 0.0))
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Eigen-decomposition of a Hermitian matrix (lower triangle is trusted).
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(hermitian_part(m));
    (eig.eigenvalues.iter().cloned().collect(), eig.eigenvectors)
}

/// `m^p` for a Hermitian positive definite `m`.
pub fn hermitian_pow(m: &CMatrix, p: f64, what: &str) -> Result<CMatrix> {
    let (vals, vecs) = hermitian_eigen(m);
    let scale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if vals.iter().any(|&v| v <= 1e-14 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Domain(format!(
            "{what}: matrix is not positive definite (eigenvalues {vals:?})"
        )));
    }
    Ok(from_eigen(&vals.iter().map(|v| v.powf(p)).collect::<Vec<_>>(), &vecs))
}

/// Principal square root of a Hermitian positive semidefinite matrix.
pub fn hermitian_sqrt(m: &CMatrix) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    from_eigen(&vals.iter().map(|v| v.max(0.0).sqrt()).collect::<Vec<_>>(), &vecs)
}

/// `V diag(vals) V^H`.
pub fn from_eigen(vals: &[f64], vecs: &CMatrix) -> CMatrix {
    let n = vals.len();
    let mut scaled = vecs.clone();
    for (j, &v) in vals.iter().enumerate() {
        for i in 0..n {
            scaled[(i, j)] *= v;
        }
    }
    scaled * vecs.adjoint()
}

/// Largest absolute entry.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// `max |m - m^T| / max |m|`; zero for the zero matrix.
pub fn symmetry_error(m: &CMatrix) -> f64 {
    let scale = max_abs(m);
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&(m - m.transpose())) / scale
}

/// `max |m - m^H| / max |m|`.
pub fn hermiticity_error(m: &CMatrix) -> f64 {
    let scale = max_abs(m);
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&(m - m.adjoint())) / scale
}

/// Smallest eigenvalue of the Hermitian part divided by the (real) trace.
pub fn min_eigen_over_trace(m: &CMatrix) -> f64 {
    let (vals, _) = hermitian_eigen(m);
    let trace: f64 = vals.iter().sum();
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if trace.abs() == 0.0 {
        min
    } else {
        min / trace.abs()
    }
}

/// Clips eigenvalues in `[-tol * trace, 0)` to zero; larger negative excursions are errors.
pub fn repair_psd(m: &CMatrix, tol: f64, what: &str) -> Result<CMatrix> {
    let (vals, vecs) = hermitian_eigen(m);
    let trace: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        return Ok(hermitian_part(m));
    }
    if min < -tol * trace {
        return numerical(format!(
            "{what}: not positive semidefinite (min eigenvalue {min:.3e}, trace {trace:.3e})"
        ));
    }
    Ok(from_eigen(&vals.iter().map(|v| v.max(0.0)).collect::<Vec<_>>(), &vecs))
}

/// Complex matrix from a real one.
pub fn complexify(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| C64::new(v, 0.0))
}

pub fn diag(values: &[C64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_column_slice(values))
}

pub fn real_diag(values: &[f64]) -> CMatrix {
    CMatrix::from_fn(values.len(), values.len(), |i, j| {
        if i == j {
            C64::new(values[i], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Sub-block `rows x cols` starting at `(r0, c0)`.
pub fn block(m: &CMatrix, r0: usize, c0: usize, rows: usize, cols: usize) -> CMatrix {
    m.view((r0, c0), (rows, cols)).into_owned()
}

/// Relative Frobenius distance `|a - b| / max(|a|, |b|)`.
pub fn rel_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

/// `h^H K^{-1} h` via Cholesky, real by construction.
pub fn quadratic_form_inverse(h: &CVector, k: &CMatrix, what: &str) -> Result<f64> {
    let chol = k
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("{what}: matrix is not positive definite")))?;
    let x = chol.solve(h);
    Ok(h.dotc(&x).re)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_of_spd_squares_back() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(4.0, 0.0), C64::new(1.0, 1.0), C64::new(1.0, -1.0), C64::new(3.0, 0.0)],
        );
        let s = hermitian_sqrt(&m);
        assert!(rel_diff(&(&s * &s), &m) < 1e-13);
        let inv_sqrt = hermitian_pow(&m, -0.5, "test").unwrap();
        assert!(rel_diff(&(&inv_sqrt * &m * &inv_sqrt), &CMatrix::identity(2, 2)) < 1e-13);
    }

    #[test]
    fn singular_solve_reports_stage() {
        let a = CMatrix::zeros(2, 2);
        let err = inverse(&a, "stage-x").unwrap_err();
        assert!(err.to_string().contains("stage-x"));
    }

    #[test]
    fn repair_clips_only_tiny_negatives() {
        let m = real_diag(&[1.0, -1e-15]);
        let fixed = repair_psd(&m, 1e-12, "t").unwrap();
        assert!(min_eigen_over_trace(&fixed) >= 0.0);
        let bad = real_diag(&[1.0, -1e-3]);
        assert!(repair_psd(&bad, 1e-12, "t").is_err());
    }
}
