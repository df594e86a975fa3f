//! Polynomial vector fields, the coupled formation ODE, fixed-step RK4
//! integration and trajectory diagnostics.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::{PatternMatrix, SpectralData, DEFAULT_ZERO_TOL};
use crate::polybasis::{Exponent, MonomialBasis};

/// Trajectories are cut off once any state entry exceeds this magnitude.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// One monomial term `coeff * x^powers` in component `row` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub row: usize,
    pub coeff: f64,
    pub powers: Vec<u32>,
}

impl Term {
    pub fn new(row: usize, coeff: f64, powers: &[u32]) -> Self {
        Self {
            row,
            coeff,
            powers: powers.to_vec(),
        }
    }
}

/// `xdot = A chi(x)` over a graded monomial basis.
#[derive(Debug, Clone)]
pub struct PolynomialVectorField {
    basis: MonomialBasis,
    a: DMatrix<f64>,
}

impl PolynomialVectorField {
    pub fn new(basis: MonomialBasis, a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != basis.n() || a.ncols() != basis.rho() {
            return Err(Error::Dimension(format!(
                "coefficient matrix is {}x{}, basis needs {}x{}",
                a.nrows(),
                a.ncols(),
                basis.n(),
                basis.rho()
            )));
        }
        Ok(Self { basis, a })
    }

    pub fn from_terms(basis: &MonomialBasis, terms: &[Term]) -> Result<Self> {
        let n = basis.n();
        let mut a = DMatrix::zeros(n, basis.rho());
        for t in terms {
            if t.row == 0 || t.row > n {
                return Err(Error::InvalidArgument(format!(
                    "term row {} out of range 1..={n}",
                    t.row
                )));
            }
            if t.powers.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "term has {} powers, state dimension is {n}",
                    t.powers.len()
                )));
            }
            if !t.coeff.is_finite() {
                return Err(Error::NonFinite(format!("term coefficient {}", t.coeff)));
            }
            let e = Exponent::new(t.powers.clone());
            let col = basis.index_of(&e).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "term degree {} exceeds basis degree {}",
                    e.degree(),
                    basis.d()
                ))
            })?;
            a[(t.row - 1, col)] += t.coeff;
        }
        Ok(Self {
            basis: basis.clone(),
            a,
        })
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let chi = self.basis.eval_chi(x);
        (0..self.a.nrows())
            .map(|i| (0..chi.len()).map(|k| self.a[(i, k)] * chi[k]).sum())
            .collect()
    }
}

/// Largest total degree among the terms, at least 1.
pub fn inferred_degree(term_sets: &[&[Term]]) -> usize {
    term_sets
        .iter()
        .flat_map(|ts| ts.iter())
        .map(|t| t.powers.iter().sum::<u32>() as usize)
        .max()
        .unwrap_or(1)
        .max(1)
}

/// Build agent and coupling fields over one shared basis whose degree is
/// the largest term degree in either set.
pub fn fields_from_terms(
    n: usize,
    agent_terms: &[Term],
    coupling_terms: &[Term],
) -> Result<(PolynomialVectorField, PolynomialVectorField)> {
    let d = inferred_degree(&[agent_terms, coupling_terms]);
    let basis = MonomialBasis::new(n, d)?;
    Ok((
        PolynomialVectorField::from_terms(&basis, agent_terms)?,
        PolynomialVectorField::from_terms(&basis, coupling_terms)?,
    ))
}

/// `xdot_i = A_a chi(x_i) + sum_j P_ij A_b chi(x_j)`.
#[derive(Debug, Clone)]
pub struct FormationModel {
    pub agent: PolynomialVectorField,
    pub coupling: PolynomialVectorField,
    pub pattern: PatternMatrix,
    pub spectral: SpectralData,
}

impl FormationModel {
    pub fn new(
        agent: PolynomialVectorField,
        coupling: PolynomialVectorField,
        pattern: PatternMatrix,
    ) -> Result<Self> {
        Self::with_zero_tol(agent, coupling, pattern, DEFAULT_ZERO_TOL)
    }

    /// As [`FormationModel::new`] with an explicit tolerance for the
    /// pattern-matrix checks.
    pub fn with_zero_tol(
        agent: PolynomialVectorField,
        coupling: PolynomialVectorField,
        pattern: PatternMatrix,
        zero_tol: f64,
    ) -> Result<Self> {
        if agent.basis().n() != coupling.basis().n() || agent.basis().d() != coupling.basis().d() {
            return Err(Error::Dimension(
                "agent and coupling fields use different bases".into(),
            ));
        }
        pattern.check_assumption1(zero_tol)?;
        let spectral = pattern.eigendecompose()?;
        Ok(Self {
            agent,
            coupling,
            pattern,
            spectral,
        })
    }

    pub fn n(&self) -> usize {
        self.agent.basis().n()
    }

    pub fn n_agents(&self) -> usize {
        self.pattern.n_agents()
    }

    pub fn state_len(&self) -> usize {
        self.n() * self.n_agents()
    }

    pub fn rhs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let big_n = self.n_agents();
        if x.len() != n * big_n {
            return Err(Error::Dimension(format!(
                "state has length {}, expected {}",
                x.len(),
                n * big_n
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state contains non-finite entries".into()));
        }
        let mut out = Vec::with_capacity(x.len());
        let coupled: Vec<Vec<f64>> = x.chunks(n).map(|xi| self.coupling.eval(xi)).collect();
        let p = self.pattern.entries();
        for (i, xi) in x.chunks(n).enumerate() {
            let mut fi = self.agent.eval(xi);
            for (j, cj) in coupled.iter().enumerate() {
                let w = p[(i, j)];
                if w != 0.0 {
                    for (f, c) in fi.iter_mut().zip(cj) {
                        *f += w * c;
                    }
                }
            }
            debug_assert_eq!(fi.len(), n);
            out.extend(fi);
        }
        Ok(out)
    }
}

/// Max pairwise Euclidean distance between agent states.
pub fn disagreement(x: &[f64], n: usize, n_agents: usize) -> f64 {
    let mut best = 0.0_f64;
    for i in 0..n_agents {
        for j in (i + 1)..n_agents {
            let d: f64 = (0..n)
                .map(|k| (x[i * n + k] - x[j * n + k]).powi(2))
                .sum::<f64>()
                .sqrt();
            best = best.max(d);
        }
    }
    best
}

fn reshape(x: &[f64], n: usize, n_agents: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(n_agents, n, x)
}

/// `sum_j P^j X L_j` with `X` the agent-by-state reshaping of `x`, i.e. the
/// formation matrix applied to `x`, returned in the same layout as `x`.
pub fn formation_apply(
    lyap: &[DMatrix<f64>],
    pattern: &PatternMatrix,
    x: &[f64],
) -> Result<Vec<f64>> {
    let big_n = pattern.n_agents();
    let n = lyap.first().map_or(0, |l| l.nrows());
    if n == 0 || x.len() != n * big_n {
        return Err(Error::Dimension(format!(
            "state has length {}, expected {}",
            x.len(),
            n * big_n
        )));
    }
    let p = pattern.entries();
    let mut px = reshape(x, n, big_n);
    let mut acc = DMatrix::zeros(big_n, n);
    for l in lyap {
        px = p * px;
        acc += &px * l;
    }
    Ok(acc.transpose().iter().copied().collect())
}

/// `V(x) = x^T (sum_j P^j kron L_j) x`.
pub fn lyapunov_value(lyap: &[DMatrix<f64>], pattern: &PatternMatrix, x: &[f64]) -> Result<f64> {
    let lx = formation_apply(lyap, pattern, x)?;
    Ok(x.iter().zip(&lx).map(|(a, b)| a * b).sum())
}

/// Time derivative of `V` along `xdot`: `2 x^T (sum_j P^j kron L_j) xdot`.
pub fn lyapunov_derivative(
    lyap: &[DMatrix<f64>],
    pattern: &PatternMatrix,
    x: &[f64],
    xdot: &[f64],
) -> Result<f64> {
    let lx = formation_apply(lyap, pattern, x)?;
    Ok(2.0 * lx.iter().zip(xdot).map(|(a, b)| a * b).sum::<f64>())
}

/// Uniform initial state in `[-amplitude, amplitude]^len`.
pub fn random_initial_state(len: usize, amplitude: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| rng.random_range(-amplitude..=amplitude))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub n: usize,
    pub n_agents: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub v: Option<Vec<f64>>,
    pub disagreement: Vec<f64>,
    /// Set when the divergence guard stopped the integration early.
    pub diverged: bool,
}

impl SimulationTrace {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map_or(&[], Vec::as_slice)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn write_csv_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut header = vec!["t".to_string()];
        for i in 1..=self.n_agents {
            for k in 1..=self.n {
                header.push(format!("x_{i}_{k}"));
            }
        }
        header.push("V".into());
        header.push("disagreement".into());
        writeln!(w, "{}", header.join(","))?;
        for (s, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = format!("{t:.6}");
            for v in x {
                row.push_str(&format!(",{v:.12e}"));
            }
            match &self.v {
                Some(v) => row.push_str(&format!(",{:.12e}", v[s])),
                None => row.push(','),
            }
            row.push_str(&format!(",{:.12e}", self.disagreement[s]));
            writeln!(w, "{row}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub seed: Option<u64>,
    pub dt: f64,
    pub t_final: f64,
    pub steps: usize,
    pub model_hash: String,
    pub certificate_hash: Option<String>,
    pub diverged: bool,
}

fn axpy(x: &[f64], k: &[f64], h: f64) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Classical fixed-step RK4. `lyap`, when given, adds `V` to the trace.
pub fn rk4_simulate(
    model: &FormationModel,
    x0: &[f64],
    dt: f64,
    t_final: f64,
    lyap: Option<&[DMatrix<f64>]>,
) -> Result<SimulationTrace> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "dt and t_final must be positive, got dt={dt}, t_final={t_final}"
        )));
    }
    if x0.len() != model.state_len() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, expected {}",
            x0.len(),
            model.state_len()
        )));
    }
    let n = model.n();
    let big_n = model.n_agents();
    let steps = (t_final / dt).round() as usize;
    let mut trace = SimulationTrace {
        n,
        n_agents: big_n,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        v: lyap.map(|_| Vec::with_capacity(steps + 1)),
        disagreement: Vec::with_capacity(steps + 1),
        diverged: false,
    };
    let record = |trace: &mut SimulationTrace, t: f64, x: Vec<f64>| -> Result<()> {
        if let (Some(l), Some(v)) = (lyap, trace.v.as_mut()) {
            v.push(lyapunov_value(l, &model.pattern, &x)?);
        }
        trace.disagreement.push(disagreement(&x, n, big_n));
        trace.times.push(t);
        trace.states.push(x);
        Ok(())
    };
    let mut x = x0.to_vec();
    record(&mut trace, 0.0, x.clone())?;
    for s in 1..=steps {
        let k1 = model.rhs(&x)?;
        let k2 = model.rhs(&axpy(&x, &k1, dt / 2.0))?;
        let k3 = model.rhs(&axpy(&x, &k2, dt / 2.0))?;
        let k4 = model.rhs(&axpy(&x, &k3, dt))?;
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter()
            .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
        {
            trace.diverged = true;
            break;
        }
        record(&mut trace, s as f64 * dt, x.clone())?;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vdp_terms_expand_to_coefficients() {
        let agent = [
            Term::new(1, 1.0, &[0, 1]),
            Term::new(2, 0.5, &[0, 1]),
            Term::new(2, -0.5, &[1, 1]),
            Term::new(2, -1.0, &[1, 0]),
        ];
        let (a, b) = fields_from_terms(2, &agent, &[]).unwrap();
        let expect = DMatrix::from_row_slice(
            2,
            6,
            &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.5, 0.0, -0.5, 0.0],
        );
        assert_eq!(a.coefficients(), &expect);
        assert!(b.coefficients().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degree_is_shared_across_fields() {
        let agent = [Term::new(1, 1.0, &[1])];
        let coupling = [Term::new(1, 1.0, &[3])];
        let (a, b) = fields_from_terms(1, &agent, &coupling).unwrap();
        assert_eq!(a.basis().d(), 3);
        assert_eq!(b.basis().d(), 3);
    }

    #[test]
    fn bad_rows_are_rejected() {
        let basis = MonomialBasis::new(2, 1).unwrap();
        assert!(PolynomialVectorField::from_terms(&basis, &[Term::new(3, 1.0, &[1, 0])]).is_err());
        assert!(PolynomialVectorField::from_terms(&basis, &[Term::new(0, 1.0, &[1, 0])]).is_err());
    }

    #[test]
    fn disagreement_examples() {
        assert_eq!(disagreement(&[0.0, 0.0, 3.0, 4.0], 2, 2), 5.0);
        assert_eq!(disagreement(&[1.0, 2.0, 1.0, 2.0], 2, 2), 0.0);
    }

    #[test]
    fn two_agent_integrator_rhs() {
        let (a, b) = fields_from_terms(1, &[], &[Term::new(1, -1.0, &[1])]).unwrap();
        let p = PatternMatrix::from_dense(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]))
            .unwrap();
        let model = FormationModel::new(a, b, p).unwrap();
        assert_eq!(model.rhs(&[3.0, 1.0]).unwrap(), vec![-2.0, 2.0]);
    }
}
