//! Independent algebraic check of a certificate.
//!
//! The per-eigenvalue conditions are rebuilt directly from the certificate
//! matrices by index arithmetic (no selector products, no assembled blocks)
//! and tested with the Jacobi eigensolver.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::certificate::Certificate;
use crate::error::{Error, Result};
use crate::linalg::{extremal_eigenvalues, max_abs};
use crate::polybasis::{MonomialBasis, SlackBasis};

pub const DEFAULT_VERIFY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenvalueCheck {
    pub lambda: f64,
    /// Smallest eigenvalue of `sum_j lambda^j L_j`.
    pub positivity_min_eig: f64,
    pub positivity_scale: f64,
    pub positivity_pass: bool,
    /// Largest eigenvalue of the projected derivative matrix.
    pub derivative_max_eig: f64,
    pub derivative_scale: f64,
    pub derivative_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub tol: f64,
    pub checks: Vec<EigenvalueCheck>,
    pub verified: bool,
    /// Largest scaled violation over all checks (negative when every
    /// check passes with room to spare).
    pub worst_violation: f64,
}

/// `sum_j lambda^j L_j`.
pub fn positivity_matrix(lyap: &[DMatrix<f64>], lambda: f64) -> DMatrix<f64> {
    let n = lyap.first().map_or(0, |m| m.nrows());
    let mut p = DMatrix::zeros(n, n);
    let mut pw = 1.0;
    for l in lyap {
        pw *= lambda;
        p += l * pw;
    }
    p
}

/// Derivative matrix at `lambda` with the constant monomial row and column
/// removed, together with a scale bound on its entries.
#[allow(clippy::too_many_arguments)]
pub fn derivative_matrix(
    basis: &MonomialBasis,
    slack: &SlackBasis,
    a_agent: &DMatrix<f64>,
    a_coupling: &DMatrix<f64>,
    lyap: &[DMatrix<f64>],
    tau: &[f64],
    epsilon: f64,
    lambda: f64,
) -> (DMatrix<f64>, f64) {
    let n = basis.n();
    let rho = basis.rho();
    let mut full = DMatrix::zeros(rho, rho);
    let mut scale = 0.0;
    for (q, &t) in slack.matrices().iter().zip(tau) {
        let mut qmax = 0i64;
        for (a, b, v) in q.nonzeros() {
            full[(a, b)] += t * v as f64;
            qmax = qmax.max(v.abs());
        }
        scale += t.abs() * qmax as f64;
    }
    let mut pw = 1.0;
    for l in lyap {
        pw *= lambda;
        for (coef, a, eps) in [(pw, a_agent, epsilon), (pw * lambda, a_coupling, 0.0)] {
            // Rows 1..=n of Gamma^T L A are L A; the transpose fills columns.
            let la = l * a;
            let mut term = DMatrix::zeros(rho, rho);
            for i in 0..n {
                for k in 0..rho {
                    term[(1 + i, k)] += la[(i, k)];
                    term[(k, 1 + i)] += la[(i, k)];
                }
                for j in 0..n {
                    term[(1 + i, 1 + j)] += eps * l[(i, j)];
                }
            }
            scale += coef.abs() * max_abs(&term);
            full += term * coef;
        }
    }
    let projected = full.view((1, 1), (rho - 1, rho - 1)).into_owned();
    (projected, scale)
}

#[allow(clippy::too_many_arguments)]
pub fn verify_certificate(
    cert: &Certificate,
    basis: &MonomialBasis,
    slack: &SlackBasis,
    a_agent: &DMatrix<f64>,
    a_coupling: &DMatrix<f64>,
    eigenvalues: &[f64],
    tol: f64,
) -> Result<VerificationReport> {
    let lyap = cert.lyapunov_matrices()?;
    let n = basis.n();
    if lyap.is_empty() || lyap.iter().any(|m| m.nrows() != n || m.ncols() != n) {
        return Err(Error::Dimension(format!(
            "certificate Lyapunov matrices must be {n}x{n}"
        )));
    }
    if cert.tau.len() != slack.iota() {
        return Err(Error::Dimension(format!(
            "certificate has {} slack multipliers, model needs {}",
            cert.tau.len(),
            slack.iota()
        )));
    }
    if cert.tau.iter().any(|v| !v.is_finite()) || !cert.epsilon.is_finite() {
        return Err(Error::NonFinite(
            "certificate contains non-finite values".into(),
        ));
    }
    let mut checks = Vec::with_capacity(eigenvalues.len());
    let mut worst = f64::NEG_INFINITY;
    for &lambda in eigenvalues {
        let p = positivity_matrix(&lyap, lambda);
        let p_scale: f64 = lyap
            .iter()
            .enumerate()
            .map(|(j, l)| lambda.abs().powi(j as i32 + 1) * max_abs(l))
            .sum();
        let (p_min, _) = extremal_eigenvalues(&p)?;
        let (d, d_scale) = derivative_matrix(
            basis,
            slack,
            a_agent,
            a_coupling,
            &lyap,
            &cert.tau,
            cert.epsilon,
            lambda,
        );
        let (_, d_max) = extremal_eigenvalues(&d)?;
        let positivity_pass = p_min > tol * p_scale;
        let derivative_pass = d_max <= tol * d_scale;
        let rel = |v: f64, s: f64| {
            if s > 0.0 {
                v / s
            } else if v > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        };
        worst = worst
            .max(tol - rel(p_min, p_scale))
            .max(rel(d_max, d_scale) - tol);
        checks.push(EigenvalueCheck {
            lambda,
            positivity_min_eig: p_min,
            positivity_scale: p_scale,
            positivity_pass,
            derivative_max_eig: d_max,
            derivative_scale: d_scale,
            derivative_pass,
        });
    }
    let verified = !checks.is_empty()
        && checks
            .iter()
            .all(|c| c.positivity_pass && c.derivative_pass);
    Ok(VerificationReport {
        tol,
        checks,
        verified,
        worst_violation: worst,
    })
}
