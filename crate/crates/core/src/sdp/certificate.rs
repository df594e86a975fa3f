//! Serialisable consensus certificate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::DecisionLayout;

pub const CERTIFICATE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// One pair of blocks per distinct nonzero eigenvalue.
    Theorem1,
    /// Interval-lifted KYP pencils, size independent of the agent count.
    Theorem2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KypMultipliers {
    pub m: usize,
    pub d: [Vec<Vec<f64>>; 2],
    pub g: [Vec<Vec<f64>>; 2],
    pub interval: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub name: String,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub schema_version: u32,
    pub model_hash: String,
    pub method: Method,
    pub l: usize,
    pub epsilon: f64,
    /// `L_1 .. L_l`, each `n x n`, row-major.
    pub lyapunov: Vec<Vec<Vec<f64>>>,
    pub tau: Vec<f64>,
    pub kyp: Option<KypMultipliers>,
    /// Eigenvalues the certificate was solved for.
    pub eigenvalues: Vec<f64>,
    pub achieved_margin: f64,
    pub required_margin: f64,
    /// Per-block normalisation factors in assembly order.
    pub normalization: Vec<f64>,
    pub solver: SolverInfo,
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn rows_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix entry is not finite".into()));
    }
    Ok(DMatrix::from_fn(n, c, |i, j| rows[i][j]))
}

impl Certificate {
    /// Split a solved decision vector into certificate fields.
    #[allow(clippy::too_many_arguments)]
    pub fn from_decisions(
        layout: &DecisionLayout,
        y: &[f64],
        method: Method,
        epsilon: f64,
        eigenvalues: Vec<f64>,
        interval: Option<(f64, f64)>,
        margins: (f64, f64),
        normalization: Vec<f64>,
        model_hash: String,
        solver: SolverInfo,
    ) -> Self {
        let lyapunov = layout
            .lyapunov_matrices(y)
            .iter()
            .map(matrix_rows)
            .collect();
        let tau = layout.taus(y).to_vec();
        let kyp = layout.kyp.map(|k| KypMultipliers {
            m: k.m,
            d: [
                matrix_rows(&layout.kyp_d(y, 1)),
                matrix_rows(&layout.kyp_d(y, 2)),
            ],
            g: [
                matrix_rows(&layout.kyp_g(y, 1)),
                matrix_rows(&layout.kyp_g(y, 2)),
            ],
            interval: interval.unwrap_or_default(),
        });
        Self {
            schema_version: CERTIFICATE_SCHEMA_VERSION,
            model_hash,
            method,
            l: layout.l,
            epsilon,
            lyapunov,
            tau,
            kyp,
            eigenvalues,
            achieved_margin: margins.0,
            required_margin: margins.1,
            normalization,
            solver,
        }
    }

    pub fn lyapunov_matrices(&self) -> Result<Vec<DMatrix<f64>>> {
        self.lyapunov.iter().map(|r| rows_matrix(r)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Certificate = serde_json::from_str(s)?;
        if c.schema_version != CERTIFICATE_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported certificate schema_version {} (expected {})",
                c.schema_version, CERTIFICATE_SCHEMA_VERSION
            )));
        }
        if c.lyapunov.len() != c.l {
            return Err(Error::Dimension(format!(
                "certificate lists {} Lyapunov matrices but l = {}",
                c.lyapunov.len(),
                c.l
            )));
        }
        Ok(c)
    }
}
