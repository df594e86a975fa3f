//! End-to-end certification: assemble, solve, package, verify.

use serde::{Deserialize, Serialize};

use crate::dynamics::FormationModel;
use crate::error::{Error, Result};
use crate::lmi::{assemble_theorem1, assemble_theorem2, LmiOptions, LmiSystem};
use crate::model::MethodDefaults;
use crate::polybasis::SlackBasis;
use crate::sdp::certificate::{Certificate, Method, SolverInfo};
use crate::sdp::verify::{verify_certificate, VerificationReport};
use crate::sdp::{
    self, structural_check, FeasibilityProblem, InfeasibilityEvidence, Margins, SolveOptions,
    SolveOutcome,
};

pub const BUILTIN_SOLVER: &str = "builtin-ipm";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub method: Method,
    pub l: usize,
    pub epsilon: f64,
    pub margins: Margins,
    pub solve: SolveOptions,
    pub verify_tol: f64,
}

impl CertifyOptions {
    pub fn from_defaults(d: &MethodDefaults) -> Self {
        Self {
            method: d.method,
            l: d.l,
            epsilon: d.epsilon,
            margins: Margins {
                strict: d.margin,
                non_strict: d.non_strict_margin,
            },
            solve: SolveOptions {
                max_iters: d.max_iters,
                tol: d.solver_tol,
                seed: 0,
            },
            verify_tol: d.verify_tol,
        }
    }

    fn lmi(&self) -> LmiOptions {
        LmiOptions {
            l: self.l,
            epsilon: self.epsilon,
        }
    }
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self::from_defaults(&MethodDefaults::default())
    }
}

pub fn assemble(model: &FormationModel, method: Method, opts: &LmiOptions) -> Result<LmiSystem> {
    let basis = model.agent.basis();
    let slack = SlackBasis::new(basis)?;
    let a = model.agent.coefficients();
    let b = model.coupling.coefficients();
    match method {
        Method::Theorem1 => assemble_theorem1(basis, &slack, a, b, &model.spectral, opts),
        Method::Theorem2 => assemble_theorem2(
            basis,
            &slack,
            a,
            b,
            model.spectral.lambda_min,
            model.spectral.lambda_max,
            opts,
        ),
    }
}

pub fn feasibility_problem(
    model: &FormationModel,
    opts: &CertifyOptions,
) -> Result<(LmiSystem, FeasibilityProblem)> {
    let system = assemble(model, opts.method, &opts.lmi())?;
    let problem = FeasibilityProblem::new(&system, opts.margins);
    Ok((system, problem))
}

/// Check a certificate against the model at every nonzero eigenvalue.
pub fn verify(model: &FormationModel, cert: &Certificate, tol: f64) -> Result<VerificationReport> {
    let basis = model.agent.basis();
    let slack = SlackBasis::new(basis)?;
    verify_certificate(
        cert,
        basis,
        &slack,
        model.agent.coefficients(),
        model.coupling.coefficients(),
        model.spectral.nonzero(),
        tol,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum CertifyStatus {
    /// Solved and independently verified.
    Certified,
    /// The solver returned a point that failed independent verification.
    Rejected,
    Infeasible {
        evidence: InfeasibilityEvidence,
    },
    Unknown {
        reason: String,
    },
}

#[derive(Debug, Clone)]
pub struct CertifyOutcome {
    pub status: CertifyStatus,
    pub certificate: Option<Certificate>,
    pub report: Option<VerificationReport>,
    pub warnings: Vec<String>,
}

/// Package a decision vector (from any solver) and verify it.
pub fn finish(
    model: &FormationModel,
    system: &LmiSystem,
    problem: &FeasibilityProblem,
    y: &[f64],
    opts: &CertifyOptions,
    model_hash: &str,
    solver: SolverInfo,
) -> Result<(Certificate, VerificationReport)> {
    if y.len() != problem.n_vars() {
        return Err(Error::Dimension(format!(
            "solution has {} decisions, problem has {}",
            y.len(),
            problem.n_vars()
        )));
    }
    let (margin, _) = sdp::oriented_margins(problem, y);
    let eigenvalues = match opts.method {
        Method::Theorem1 => system.eigenvalues.clone(),
        Method::Theorem2 => model.spectral.distinct_nonzero(),
    };
    let cert = Certificate::from_decisions(
        &system.layout,
        y,
        opts.method,
        opts.epsilon,
        eigenvalues,
        system.interval,
        (margin, opts.margins.strict),
        system.blocks.iter().map(|b| b.normalization).collect(),
        model_hash.to_string(),
        solver,
    );
    let report = verify(model, &cert, opts.verify_tol)?;
    Ok((cert, report))
}

pub fn certify(
    model: &FormationModel,
    model_hash: &str,
    opts: &CertifyOptions,
) -> Result<CertifyOutcome> {
    let (system, problem) = feasibility_problem(model, opts)?;
    let warnings = system.warnings.clone();
    if opts.method == Method::Theorem2 {
        // The lifted test implies the per-eigenvalue one, so a structural
        // obstruction there settles the lifted test too.
        let (_, implied) = feasibility_problem(
            model,
            &CertifyOptions {
                method: Method::Theorem1,
                ..*opts
            },
        )?;
        if let Err(evidence) = structural_check(&implied) {
            return Ok(CertifyOutcome {
                status: CertifyStatus::Infeasible {
                    evidence: InfeasibilityEvidence::Implied {
                        system: "per-eigenvalue conditions".into(),
                        evidence: Box::new(evidence),
                    },
                },
                certificate: None,
                report: None,
                warnings,
            });
        }
    }
    let outcome = sdp::solve(&problem, &opts.solve)?;
    let (status, certificate, report) = match outcome {
        SolveOutcome::Certified { y, iterations, .. } => {
            let solver = SolverInfo {
                name: BUILTIN_SOLVER.into(),
                iterations,
            };
            let (cert, report) = finish(model, &system, &problem, &y, opts, model_hash, solver)?;
            let status = if report.verified {
                CertifyStatus::Certified
            } else {
                CertifyStatus::Rejected
            };
            (status, Some(cert), Some(report))
        }
        SolveOutcome::Infeasible { evidence } => {
            (CertifyStatus::Infeasible { evidence }, None, None)
        }
        SolveOutcome::Unknown { reason, .. } => (CertifyStatus::Unknown { reason }, None, None),
    };
    Ok(CertifyOutcome {
        status,
        certificate,
        report,
        warnings,
    })
}
