//! Feasibility solving for assembled LMI systems.
//!
//! The system is turned into a margin-maximisation problem: every strict
//! block must clear a common margin `t`, non-strict blocks must clear the
//! fixed non-strict margin, and the decision vector is confined to a unit box
//! so the (homogeneous) problem stays bounded. Before the interior-point
//! solve, non-strict blocks with structurally zero diagonal entries are
//! reduced: such an entry forces its whole row to vanish, which is a set of
//! linear equalities on the decisions that are eliminated explicitly.

pub mod certificate;
pub mod ipm;
pub mod sdpa;
pub mod verify;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{BlockKind, DecisionLayout, LmiBlock, LmiSystem, Orientation, Strictness};
use ipm::{ConeBlock, ConeProblem, IpmOptions, IpmStatus, SparseSym};

/// Entries below this (blocks are unit-normalised) count as structural zeros.
const STRUCTURAL_TOL: f64 = 1e-12;
/// Slack allowed on non-strict blocks when accepting a solver point.
const NON_STRICT_ACCEPT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    /// Required margin for strict blocks.
    pub strict: f64,
    /// Required margin for non-strict blocks.
    pub non_strict: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Self {
            strict: 1e-6,
            non_strict: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeasibilityProblem {
    pub layout: DecisionLayout,
    pub blocks: Vec<LmiBlock>,
    pub margins: Margins,
}

impl FeasibilityProblem {
    pub fn new(system: &LmiSystem, margins: Margins) -> Self {
        Self {
            layout: system.layout.clone(),
            blocks: system.blocks.clone(),
            margins,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.layout.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Seeds the restart strategy used when the first solve stalls.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-9,
            seed: 0,
        }
    }
}

/// Why a problem was declared infeasible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum InfeasibilityEvidence {
    /// A diagonal entry of a block does not depend on the decisions and
    /// already misses its required sign.
    ConstantDiagonal {
        block: usize,
        index: usize,
        value: f64,
        required: f64,
    },
    /// Rows forced to zero by non-strict blocks imply inconsistent equations.
    InconsistentEqualities { residual: f64 },
    /// Upper bound on the achievable margin from the converged dual problem.
    MarginBound { bound: f64, required: f64 },
    /// The non-strict blocks alone admit no solution in the unit box.
    NonStrictEmpty,
    /// A weaker system implied by this one is already infeasible.
    Implied {
        system: String,
        evidence: Box<InfeasibilityEvidence>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveOutcome {
    Certified {
        y: Vec<f64>,
        /// Smallest oriented eigenvalue over strict blocks, unit-normalised.
        margin: f64,
        iterations: usize,
    },
    Infeasible {
        evidence: InfeasibilityEvidence,
    },
    Unknown {
        reason: String,
        /// Best point found, if any.
        y: Option<Vec<f64>>,
        margin: Option<f64>,
    },
}

fn orientation_sign(o: Orientation) -> f64 {
    match o {
        Orientation::RequirePositive => 1.0,
        Orientation::RequireNegative => -1.0,
    }
}

/// Current affine parametrisation `y = y0 + N z` (`N = None` is identity).
struct Param {
    y0: DVector<f64>,
    basis: Option<DMatrix<f64>>,
    dim_y: usize,
}

impl Param {
    fn dim_z(&self) -> usize {
        self.basis.as_ref().map_or(self.dim_y, |n| n.ncols())
    }

    /// Affine form of entry `(p, q)` of a block in `z`: constant and gradient.
    fn entry(&self, block: &LmiBlock, p: usize, q: usize) -> (f64, DVector<f64>) {
        let mut c0 = block.value.constant()[(p, q)];
        let mut g_y = DVector::zeros(self.dim_y);
        for (r, m) in block.value.terms() {
            let v = m[(p, q)];
            c0 += self.y0[r] * v;
            g_y[r] = v;
        }
        let g = match &self.basis {
            None => g_y,
            Some(n) => n.tr_mul(&g_y),
        };
        (c0, g)
    }

    fn to_y(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            None => &self.y0 + z,
            Some(n) => &self.y0 + n * z,
        }
    }
}

/// Result of the structural pass.
struct Reduced {
    param: Param,
    /// Surviving row/column indices per block.
    active: Vec<Vec<usize>>,
}

fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// Solve `E z = e` in the least-squares sense and return the particular
/// solution together with an orthonormal basis of the null space of `E`.
fn solve_equalities(
    rows: &[(DVector<f64>, f64)],
    dim: usize,
) -> std::result::Result<(DVector<f64>, DMatrix<f64>), f64> {
    let k = rows.len();
    let padded = k.max(dim);
    let mut e = DMatrix::zeros(padded, dim);
    let mut rhs = DVector::zeros(padded);
    for (i, (g, c)) in rows.iter().enumerate() {
        e.row_mut(i).copy_from(&g.transpose());
        rhs[i] = *c;
    }
    let svd = e.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = 1e-10 * smax.max(1.0);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let mut z = DVector::zeros(dim);
    let mut null_cols = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut {
            let coef = u.column(i).dot(&rhs) / s;
            z += vt.row(i).transpose() * coef;
        } else {
            null_cols.push(vt.row(i).transpose());
        }
    }
    let residual = (&e * &z - &rhs).norm();
    if residual > 1e-9 * (1.0 + rhs.norm()) {
        return Err(residual);
    }
    let null = if null_cols.is_empty() {
        DMatrix::zeros(dim, 0)
    } else {
        DMatrix::from_columns(&null_cols)
    };
    Ok((z, null))
}

fn reduce(problem: &FeasibilityProblem) -> std::result::Result<Reduced, InfeasibilityEvidence> {
    let dim_y = problem.n_vars();
    let mut param = Param {
        y0: DVector::zeros(dim_y),
        basis: None,
        dim_y,
    };
    let mut active: Vec<Vec<usize>> = problem
        .blocks
        .iter()
        .map(|b| (0..b.size()).collect())
        .collect();
    loop {
        let mut rows = Vec::new();
        let mut changed = false;
        for (bi, block) in problem.blocks.iter().enumerate() {
            let sigma = orientation_sign(block.orientation);
            let required = match block.strictness {
                Strictness::Strict => problem.margins.strict,
                Strictness::NonStrict => problem.margins.non_strict,
            };
            let mut keep = Vec::with_capacity(active[bi].len());
            let current = active[bi].clone();
            for (pos, &p) in current.iter().enumerate() {
                let (c0, g) = param.entry(block, p, p);
                if max_abs_vec(&g) > STRUCTURAL_TOL {
                    keep.push(p);
                    continue;
                }
                let zero_row_allowed = block.strictness == Strictness::NonStrict
                    && required <= 0.0
                    && c0.abs() <= STRUCTURAL_TOL;
                if zero_row_allowed {
                    changed = true;
                    for &q in current.iter().skip(pos + 1).chain(keep.iter()) {
                        if q == p {
                            continue;
                        }
                        let (cq, gq) = param.entry(block, p, q);
                        rows.push((gq, -cq));
                    }
                    continue;
                }
                if sigma * c0 < required {
                    return Err(InfeasibilityEvidence::ConstantDiagonal {
                        block: bi,
                        index: p,
                        value: c0,
                        required,
                    });
                }
                keep.push(p);
            }
            active[bi] = keep;
        }
        // Drop equations that are identically satisfied.
        rows.retain(|(g, c)| max_abs_vec(g) > STRUCTURAL_TOL || c.abs() > STRUCTURAL_TOL);
        if !rows.is_empty() {
            let dim_z = param.dim_z();
            let (zp, null) = solve_equalities(&rows, dim_z)
                .map_err(|residual| InfeasibilityEvidence::InconsistentEqualities { residual })?;
            let y0 = param.to_y(&zp);
            let basis = match &param.basis {
                None => null,
                Some(n) => n * null,
            };
            param = Param {
                y0,
                basis: Some(basis),
                dim_y,
            };
        }
        if !changed {
            break;
        }
    }
    Ok(Reduced { param, active })
}

/// Run only the structural pass. An error here is a proof of infeasibility.
pub fn structural_check(
    problem: &FeasibilityProblem,
) -> std::result::Result<(), InfeasibilityEvidence> {
    reduce(problem).map(|_| ())
}

fn submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

/// Reduced coefficient matrices of one block in `z`.
fn reduced_block(
    block: &LmiBlock,
    param: &Param,
    idx: &[usize],
) -> (DMatrix<f64>, Vec<(usize, DMatrix<f64>)>) {
    let k = idx.len();
    let mut c0 = submatrix(block.value.constant(), idx);
    for (r, m) in block.value.terms() {
        if param.y0[r] != 0.0 {
            c0 += submatrix(m, idx) * param.y0[r];
        }
    }
    let coeffs = match &param.basis {
        None => block
            .value
            .terms()
            .map(|(r, m)| (r, submatrix(m, idx)))
            .collect(),
        Some(n) => {
            let mut out: Vec<DMatrix<f64>> = vec![DMatrix::zeros(k, k); n.ncols()];
            for (r, m) in block.value.terms() {
                let sub = submatrix(m, idx);
                for (s, acc) in out.iter_mut().enumerate() {
                    let w = n[(r, s)];
                    if w != 0.0 {
                        *acc += &sub * w;
                    }
                }
            }
            out.into_iter()
                .enumerate()
                .filter(|(_, m)| m.iter().any(|v| v.abs() > STRUCTURAL_TOL))
                .collect()
        }
    };
    (c0, coeffs)
}

struct Lifted {
    cone: ConeProblem,
    /// `z_s = w_j / scale_j` for `(s, scale_j)` at position `j`.
    vars: Vec<(usize, f64)>,
}

fn lift(problem: &FeasibilityProblem, red: &Reduced) -> Lifted {
    let parts: Vec<(DMatrix<f64>, Vec<(usize, DMatrix<f64>)>)> = problem
        .blocks
        .iter()
        .zip(&red.active)
        .map(|(b, idx)| reduced_block(b, &red.param, idx))
        .collect();
    let dim_z = red.param.dim_z();
    let mut scale = vec![0.0_f64; dim_z];
    for (_, coeffs) in &parts {
        for (s, m) in coeffs {
            scale[*s] = scale[*s].max(m.iter().fold(0.0_f64, |a, v| a.max(v.abs())));
        }
    }
    let mut var_of = vec![usize::MAX; dim_z];
    let mut vars = Vec::new();
    for (s, &sc) in scale.iter().enumerate() {
        if sc > 0.0 {
            var_of[s] = vars.len();
            vars.push((s, sc));
        }
    }
    let t_var = vars.len();
    let n_vars = t_var + 1;
    let mut blocks = Vec::new();
    for ((block, idx), (c0, coeffs)) in problem.blocks.iter().zip(&red.active).zip(parts) {
        if idx.is_empty() {
            continue;
        }
        let sigma = orientation_sign(block.orientation);
        let k = idx.len();
        let mut c = c0 * sigma;
        let mut a = Vec::new();
        for (s, m) in coeffs {
            let j = var_of[s];
            a.push((j, SparseSym::from_dense(&(m * (-sigma / scale[s])))));
        }
        match block.strictness {
            Strictness::Strict => a.push((t_var, SparseSym::identity(k))),
            Strictness::NonStrict => {
                for i in 0..k {
                    c[(i, i)] -= problem.margins.non_strict;
                }
            }
        }
        blocks.push(ConeBlock::Dense { c, a });
    }
    // Unit box on the scaled variables, and t <= 1.
    let n_box = 2 * vars.len() + 1;
    let mut box_a = Vec::with_capacity(n_vars);
    for j in 0..vars.len() {
        box_a.push((j, vec![(2 * j, 1.0), (2 * j + 1, -1.0)]));
    }
    box_a.push((t_var, vec![(n_box - 1, 1.0)]));
    blocks.push(ConeBlock::Diagonal {
        c: DVector::from_element(n_box, 1.0),
        a: box_a,
    });
    let mut b = DVector::zeros(n_vars);
    b[t_var] = 1.0;
    Lifted {
        cone: ConeProblem { n_vars, b, blocks },
        vars,
    }
}

/// Oriented extremal check of every block at `y`: returns the strict margin
/// (infinite when there are no strict blocks) and the worst non-strict slack.
pub fn oriented_margins(problem: &FeasibilityProblem, y: &[f64]) -> (f64, f64) {
    let mut strict = f64::INFINITY;
    let mut non_strict = f64::INFINITY;
    for block in &problem.blocks {
        let m = block.value.eval(y) * orientation_sign(block.orientation);
        let lmin = if m.nrows() == 0 {
            f64::INFINITY
        } else {
            m.symmetric_eigenvalues().min()
        };
        match block.strictness {
            Strictness::Strict => strict = strict.min(lmin),
            Strictness::NonStrict => non_strict = non_strict.min(lmin - problem.margins.non_strict),
        }
    }
    (strict, non_strict)
}

pub fn solve(problem: &FeasibilityProblem, opts: &SolveOptions) -> Result<SolveOutcome> {
    for b in &problem.blocks {
        if b.value.constant().iter().any(|v| !v.is_finite())
            || b.value
                .terms()
                .any(|(_, m)| m.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite(format!(
                "block {:?} has non-finite entries",
                b.kind
            )));
        }
    }
    let red = match reduce(problem) {
        Ok(r) => r,
        Err(evidence) => return Ok(SolveOutcome::Infeasible { evidence }),
    };
    let lifted = lift(problem, &red);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut last_reason = String::new();
    let mut total_iters = 0;
    for attempt in 0..3 {
        let start_scale = if attempt == 0 {
            1.0
        } else {
            rng.random_range(0.1..100.0)
        };
        let ipm_opts = IpmOptions {
            max_iters: opts.max_iters,
            tol: opts.tol,
            start_scale,
        };
        let sol = ipm::solve(&lifted.cone, &ipm_opts);
        total_iters += sol.iterations;
        let mut z = DVector::zeros(red.param.dim_z());
        for (j, &(s, sc)) in lifted.vars.iter().enumerate() {
            z[s] = sol.y[j] / sc;
        }
        let y: Vec<f64> = red.param.to_y(&z).iter().copied().collect();
        let (margin, ns) = oriented_margins(problem, &y);
        let ok = margin.is_finite() && ns >= -NON_STRICT_ACCEPT_TOL;
        if ok && margin >= problem.margins.strict {
            return Ok(SolveOutcome::Certified {
                y,
                margin,
                iterations: total_iters,
            });
        }
        if !margin.is_finite() && ns >= -NON_STRICT_ACCEPT_TOL {
            // No strict blocks: only the non-strict ones had to hold.
            return Ok(SolveOutcome::Certified {
                y,
                margin: problem.margins.strict,
                iterations: total_iters,
            });
        }
        match sol.status {
            IpmStatus::Optimal => {
                let bound = sol.primal_objective.max(sol.dual_objective);
                if bound < problem.margins.strict {
                    return Ok(SolveOutcome::Infeasible {
                        evidence: InfeasibilityEvidence::MarginBound {
                            bound,
                            required: problem.margins.strict,
                        },
                    });
                }
                last_reason = format!(
                    "solver reached margin bound {bound:.3e} but the rounded point misses it \
                     (strict {margin:.3e}, non-strict {ns:.3e})"
                );
            }
            IpmStatus::DualInfeasible => {
                return Ok(SolveOutcome::Infeasible {
                    evidence: InfeasibilityEvidence::NonStrictEmpty,
                });
            }
            ref other => {
                last_reason = format!(
                    "solver status {other:?} after {} iterations",
                    sol.iterations
                );
            }
        }
        if best.as_ref().is_none_or(|(_, m)| margin > *m) {
            best = Some((y, margin));
        }
    }
    let (y, margin) = match best {
        Some((y, m)) => (Some(y), Some(m)),
        None => (None, None),
    };
    Ok(SolveOutcome::Unknown {
        reason: last_reason,
        y,
        margin,
    })
}

/// Short human-readable block label.
pub fn block_label(kind: &BlockKind) -> String {
    match kind {
        BlockKind::LyapunovPositivity { lambda } => format!("positivity(lambda={lambda})"),
        BlockKind::DerivativeBound { lambda } => format!("derivative(lambda={lambda})"),
        BlockKind::KypPencil { k } => format!("kyp-pencil-{k}"),
        BlockKind::KypMultiplier { k } => format!("kyp-multiplier-{k}"),
        BlockKind::Custom { name } => name.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::AffineSym;

    fn scalar_block(
        orientation: Orientation,
        strictness: Strictness,
        c0: f64,
        c1: f64,
    ) -> LmiBlock {
        let mut v = AffineSym::zeros(1);
        v.set_constant(DMatrix::from_element(1, 1, c0));
        if c1 != 0.0 {
            v.add_term(0, &DMatrix::from_element(1, 1, c1), 1.0);
        }
        LmiBlock::new(
            BlockKind::Custom { name: "t".into() },
            orientation,
            strictness,
            v,
        )
    }

    fn layout(n_vars: usize) -> DecisionLayout {
        // One 1x1 Lyapunov variable per entry is enough for these tests.
        DecisionLayout {
            n: 1,
            l: n_vars,
            iota: 0,
            kyp: None,
        }
    }

    #[test]
    fn single_positive_variable() {
        let p = FeasibilityProblem {
            layout: layout(1),
            blocks: vec![scalar_block(
                Orientation::RequirePositive,
                Strictness::Strict,
                0.0,
                1.0,
            )],
            margins: Margins::default(),
        };
        match solve(&p, &SolveOptions::default()).unwrap() {
            SolveOutcome::Certified { y, margin, .. } => {
                assert!(y[0] > 0.0);
                assert!(margin >= 1e-6);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn contradictory_signs_are_infeasible() {
        let p = FeasibilityProblem {
            layout: layout(1),
            blocks: vec![
                scalar_block(Orientation::RequirePositive, Strictness::Strict, 0.0, 1.0),
                scalar_block(
                    Orientation::RequireNegative,
                    Strictness::NonStrict,
                    0.0,
                    1.0,
                ),
            ],
            margins: Margins::default(),
        };
        match solve(&p, &SolveOptions::default()).unwrap() {
            SolveOutcome::Infeasible { .. } => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constant_zero_strict_block_is_infeasible() {
        let p = FeasibilityProblem {
            layout: layout(1),
            blocks: vec![scalar_block(
                Orientation::RequirePositive,
                Strictness::Strict,
                0.0,
                0.0,
            )],
            margins: Margins::default(),
        };
        assert!(matches!(
            solve(&p, &SolveOptions::default()).unwrap(),
            SolveOutcome::Infeasible {
                evidence: InfeasibilityEvidence::ConstantDiagonal { .. }
            }
        ));
    }

    #[test]
    fn zero_diagonal_forces_row_to_vanish() {
        // [[0, y1 - y0], [y1 - y0, -y0]] <= 0 with y0 > 0 strict.
        let mut v = AffineSym::zeros(2);
        v.add_term(
            1,
            &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            1.0,
        );
        v.add_term(
            0,
            &DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, -1.0]),
            1.0,
        );
        let neg = LmiBlock::new(
            BlockKind::Custom { name: "n".into() },
            Orientation::RequireNegative,
            Strictness::NonStrict,
            v,
        );
        let pos = scalar_block(Orientation::RequirePositive, Strictness::Strict, 0.0, 1.0);
        let p = FeasibilityProblem {
            layout: layout(2),
            blocks: vec![neg, pos],
            margins: Margins::default(),
        };
        match solve(&p, &SolveOptions::default()).unwrap() {
            SolveOutcome::Certified { y, .. } => {
                assert!((y[0] - y[1]).abs() < 1e-9);
                assert!(y[0] > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equality_solver_null_space() {
        let rows = vec![(DVector::from_vec(vec![1.0, -1.0, 0.0]), 2.0)];
        let (z, n) = solve_equalities(&rows, 3).unwrap();
        assert!((z[0] - z[1] - 2.0).abs() < 1e-12);
        assert_eq!(n.ncols(), 2);
        for c in n.column_iter() {
            assert!((c[0] - c[1]).abs() < 1e-12);
        }
        let bad = vec![
            (DVector::from_vec(vec![1.0, 0.0]), 1.0),
            (DVector::from_vec(vec![1.0, 0.0]), 2.0),
        ];
        assert!(solve_equalities(&bad, 2).is_err());
    }
}
