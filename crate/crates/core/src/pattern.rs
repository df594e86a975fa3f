//! Interconnection pattern matrices and their spectral decomposition.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, max_abs};

/// Default relative threshold below which an eigenvalue counts as zero.
pub const DEFAULT_ZERO_TOL: f64 = 1e-8;

/// Relative tolerance used when merging repeated eigenvalues.
pub const DEDUP_REL_TOL: f64 = 1e-9;

/// Symmetric `N x N` interconnection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternMatrix {
    entries: DMatrix<f64>,
}

/// Why a matrix fails the connected-symmetric-Laplacian assumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "kebab-case")]
pub enum Assumption1Violation {
    Asymmetric {
        row: usize,
        col: usize,
        difference: f64,
    },
    RowSum {
        row: usize,
        sum: f64,
    },
    ZeroMultiplicity {
        count: usize,
    },
}

impl fmt::Display for Assumption1Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Asymmetric {
                row,
                col,
                difference,
            } => write!(
                f,
                "asymmetric: entries ({row},{col}) and ({col},{row}) differ by {difference:e}"
            ),
            Self::RowSum { row, sum } => {
                write!(f, "row-sum: row {row} sums to {sum:e}, so P*1 != 0")
            }
            Self::ZeroMultiplicity { count } => write!(
                f,
                "zero-multiplicity: eigenvalue 0 has multiplicity {count}, expected exactly 1 \
                 (graph disconnected or kernel degenerate)"
            ),
        }
    }
}

impl std::error::Error for Assumption1Violation {}

impl PatternMatrix {
    /// Wrap a dense matrix; it must be square and exactly symmetric.
    pub fn from_dense(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 || entries.ncols() != n {
            return Err(Error::Dimension(format!(
                "pattern matrix must be square and non-empty, got {}x{}",
                n,
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pattern matrix entry".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if entries[(i, j)] != entries[(j, i)] {
                    return Err(Assumption1Violation::Asymmetric {
                        row: i + 1,
                        col: j + 1,
                        difference: entries[(i, j)] - entries[(j, i)],
                    }
                    .into());
                }
            }
        }
        Ok(Self { entries })
    }

    /// Ring Laplacian: `2c` on the diagonal, `-c` towards both neighbours.
    pub fn cycle_laplacian(n_agents: usize, weight: f64) -> Result<Self> {
        if n_agents < 3 {
            return Err(Error::InvalidArgument(format!(
                "cycle needs at least 3 agents, got {n_agents}"
            )));
        }
        let mut m = DMatrix::zeros(n_agents, n_agents);
        for i in 0..n_agents {
            m[(i, i)] = 2.0 * weight;
            m[(i, (i + 1) % n_agents)] = -weight;
            m[(i, (i + n_agents - 1) % n_agents)] = -weight;
        }
        Ok(Self { entries: m })
    }

    /// Weighted graph Laplacian from 1-based undirected edges.
    pub fn from_edge_list(n_agents: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::InvalidArgument(
                "pattern needs at least one agent".into(),
            ));
        }
        let mut m = DMatrix::zeros(n_agents, n_agents);
        for &(i, j, w) in edges {
            if i == 0 || j == 0 || i > n_agents || j > n_agents {
                return Err(Error::InvalidArgument(format!(
                    "edge ({i},{j}) out of range 1..={n_agents}"
                )));
            }
            if i == j {
                return Err(Error::InvalidArgument(format!("self-loop on node {i}")));
            }
            if !w.is_finite() {
                return Err(Error::NonFinite(format!("weight of edge ({i},{j})")));
            }
            let (a, b) = (i - 1, j - 1);
            m[(a, b)] -= w;
            m[(b, a)] -= w;
            m[(a, a)] += w;
            m[(b, b)] += w;
        }
        Ok(Self { entries: m })
    }

    pub fn n_agents(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Check symmetry, `P 1 = 0` and a simple zero eigenvalue.
    pub fn check_assumption1(&self, tol: f64) -> std::result::Result<(), Assumption1Violation> {
        let n = self.n_agents();
        let scale = max_abs(&self.entries).max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in (i + 1)..n {
                let diff = self.entries[(i, j)] - self.entries[(j, i)];
                if diff.abs() > tol * scale {
                    return Err(Assumption1Violation::Asymmetric {
                        row: i + 1,
                        col: j + 1,
                        difference: diff,
                    });
                }
            }
        }
        for i in 0..n {
            let row = self.entries.row(i);
            let sum: f64 = row.iter().sum();
            let row_scale = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if sum.abs() > tol * row_scale.max(f64::MIN_POSITIVE) {
                return Err(Assumption1Violation::RowSum { row: i + 1, sum });
            }
        }
        let eig = match jacobi_eigen(&self.entries) {
            Ok(e) => e,
            // Cannot certify a simple zero eigenvalue without a spectrum.
            Err(_) => return Err(Assumption1Violation::ZeroMultiplicity { count: 0 }),
        };
        let norm = self.entries.norm();
        let count = eig.values.iter().filter(|v| v.abs() <= tol * norm).count();
        if count != 1 {
            return Err(Assumption1Violation::ZeroMultiplicity { count });
        }
        Ok(())
    }

    /// Orthonormal eigendecomposition with the zero eigenvalue first.
    pub fn eigendecompose(&self) -> Result<SpectralData> {
        let eig = jacobi_eigen(&self.entries)?;
        let n = self.n_agents();
        let kernel = (0..n)
            .min_by(|&a, &b| eig.values[a].abs().total_cmp(&eig.values[b].abs()))
            .expect("non-empty pattern");
        let mut rest: Vec<usize> = (0..n).filter(|&i| i != kernel).collect();
        rest.sort_by(|&a, &b| eig.values[a].total_cmp(&eig.values[b]));
        let order: Vec<usize> = std::iter::once(kernel).chain(rest).collect();

        let lambdas: Vec<f64> = order.iter().map(|&i| eig.values[i]).collect();
        let mut vectors = DMatrix::zeros(n, n);
        for (col, &src) in order.iter().enumerate() {
            vectors.set_column(col, &eig.vectors.column(src));
        }
        // Kernel vector points along +1.
        if vectors.column(0).sum() < 0.0 {
            let c = -vectors.column(0);
            vectors.set_column(0, &c);
        }
        let (lambda_min, lambda_max) = if n > 1 {
            (
                lambdas[1..].iter().cloned().fold(f64::INFINITY, f64::min),
                lambdas[1..]
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max),
            )
        } else {
            (f64::NAN, f64::NAN)
        };
        Ok(SpectralData {
            lambdas,
            vectors,
            lambda_min,
            lambda_max,
        })
    }
}

/// Spectrum of a pattern matrix, zero eigenvalue first.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub lambdas: Vec<f64>,
    /// Orthonormal eigenvectors, columns aligned with `lambdas`.
    pub vectors: DMatrix<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl SpectralData {
    /// Nonzero eigenvalues with repeats merged (relative tolerance
    /// [`DEDUP_REL_TOL`]), ascending.
    pub fn distinct_nonzero(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &lam in self.lambdas.iter().skip(1) {
            let dup = out
                .iter()
                .any(|&u| (u - lam).abs() <= DEDUP_REL_TOL * u.abs().max(lam.abs()).max(1.0));
            if !dup {
                out.push(lam);
            }
        }
        out.sort_by(|a, b| a.total_cmp(b));
        out
    }

    pub fn nonzero(&self) -> &[f64] {
        &self.lambdas[1..]
    }
}
