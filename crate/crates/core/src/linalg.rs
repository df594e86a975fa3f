//! Small dense helpers shared across modules, plus the in-house cyclic
//! Jacobi eigensolver used for spectral decomposition and certificate
//! verification.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const JACOBI_MAX_SWEEPS: usize = 100;
pub const JACOBI_REL_TOL: f64 = 1e-12;

/// Eigenpairs of a symmetric matrix. Columns of `vectors` are aligned with
/// `values`; no particular ordering is imposed.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

fn off_diagonal_mass(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi rotations on a symmetric matrix.
///
/// Only the symmetric part of `m` is used. Sweeps stop once the off-diagonal
/// Frobenius mass falls to `JACOBI_REL_TOL * ||m||_F`.
pub fn jacobi_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension(format!(
            "eigensolver needs a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix passed to the eigensolver".into()));
    }
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let target = JACOBI_REL_TOL * a.norm();

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_mass(&a) <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        let off = off_diagonal_mass(&a);
        if off > target {
            return Err(Error::NoConvergence {
                sweeps: JACOBI_MAX_SWEEPS,
                off,
            });
        }
    }
    Ok(SymmetricEigen {
        values: (0..n).map(|i| a[(i, i)]).collect(),
        vectors: v,
    })
}

/// Smallest and largest eigenvalue of a symmetric matrix (Jacobi route).
pub fn extremal_eigenvalues(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    if m.nrows() == 0 {
        return Ok((f64::INFINITY, f64::NEG_INFINITY));
    }
    let eig = jacobi_eigen(m)?;
    let lo = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Unit symmetric matrix for the independent entry `(i, j)` of a symmetric
/// matrix: `E_ii` on the diagonal, `E_ij + E_ji` off it.
pub fn sym_unit(n: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    m[(i, j)] = 1.0;
    m[(j, i)] = 1.0;
    m
}

/// Unit skew-symmetric matrix `E_ij - E_ji` for `i < j`.
pub fn skew_unit(n: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    m[(i, j)] = 1.0;
    m[(j, i)] = -1.0;
    m
}

/// Upper-triangle index pairs `(i, j)`, `i <= j`, in row-major order.
pub fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push((i, j));
        }
    }
    out
}

/// Strict upper-triangle index pairs `(i, j)`, `i < j`, in row-major order.
pub fn strict_upper_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push((i, j));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonal_input_is_fixed_point() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, -1.0, 2.0]));
        let eig = jacobi_eigen(&m).unwrap();
        assert_eq!(eig.values, vec![3.0, -1.0, 2.0]);
    }

    #[test]
    fn jacobi_two_by_two() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (lo, hi) = extremal_eigenvalues(&m).unwrap();
        assert!((lo - 1.0).abs() < 1e-14);
        assert!((hi - 3.0).abs() < 1e-14);
    }

    #[test]
    fn jacobi_rejects_non_square() {
        assert!(jacobi_eigen(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 5, 12] {
            let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let m = symmetrize(&r);
            let eig = jacobi_eigen(&m).unwrap();
            let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eig.values.clone()));
            let rec = &eig.vectors * d * eig.vectors.transpose();
            assert!(max_abs(&(rec - &m)) < 1e-12);
            let orth = eig.vectors.transpose() * &eig.vectors - DMatrix::identity(n, n);
            assert!(max_abs(&orth) < 1e-12);
        }
    }
}
