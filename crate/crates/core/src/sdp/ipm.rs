//! Primal-dual interior-point method for block-diagonal semidefinite programs.
//!
//! The problem is taken in the "dual" form used for LMIs:
//!
//! ```text
//! maximise   b^T y
//! subject to Z = C - sum_i y_i A_i,   Z >= 0
//! ```
//!
//! with primal `minimise <C, X>` subject to `<A_i, X> = b_i`, `X >= 0`.
//! Search direction is HKM, with a Mehrotra predictor-corrector step and
//! separate primal and dual step lengths. Cones are dense PSD blocks or
//! nonnegative orthants (diagonal blocks).

use nalgebra::{Cholesky, DMatrix, DVector};

/// Symmetric sparse matrix stored as triplets covering both triangles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseSym {
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseSym {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self { entries }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: (0..n).map(|i| (i, i, 1.0)).collect(),
        }
    }

    /// `<A, T>` for a (not necessarily symmetric) dense `T`, `tr(A T)`.
    fn inner(&self, t: &DMatrix<f64>) -> f64 {
        self.entries.iter().map(|&(p, q, v)| v * t[(q, p)]).sum()
    }

    fn add_to(&self, out: &mut DMatrix<f64>, scale: f64) {
        for &(p, q, v) in &self.entries {
            out[(p, q)] += scale * v;
        }
    }

    fn frobenius(&self) -> f64 {
        self.entries.iter().map(|e| e.2 * e.2).sum::<f64>().sqrt()
    }
}

/// One cone of the block-diagonal slack `Z`.
#[derive(Debug, Clone)]
pub enum ConeBlock {
    Dense {
        c: DMatrix<f64>,
        /// `(variable index, A_i restricted to this block)`.
        a: Vec<(usize, SparseSym)>,
    },
    Diagonal {
        c: DVector<f64>,
        /// `(variable index, [(position, value)])`.
        a: Vec<(usize, Vec<(usize, f64)>)>,
    },
}

impl ConeBlock {
    fn dim(&self) -> usize {
        match self {
            ConeBlock::Dense { c, .. } => c.nrows(),
            ConeBlock::Diagonal { c, .. } => c.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConeProblem {
    pub n_vars: usize,
    pub b: DVector<f64>,
    pub blocks: Vec<ConeBlock>,
}

#[derive(Debug, Clone)]
enum Mat {
    Dense(DMatrix<f64>),
    Diag(DVector<f64>),
}

impl Mat {
    fn inner(&self, other: &Mat) -> f64 {
        match (self, other) {
            (Mat::Dense(a), Mat::Dense(b)) => a.dot(b),
            (Mat::Diag(a), Mat::Diag(b)) => a.dot(b),
            _ => unreachable!("cone kinds always match"),
        }
    }

    fn norm_sq(&self) -> f64 {
        match self {
            Mat::Dense(a) => a.norm_squared(),
            Mat::Diag(a) => a.norm_squared(),
        }
    }

    fn axpy(&mut self, alpha: f64, other: &Mat) {
        match (self, other) {
            (Mat::Dense(a), Mat::Dense(b)) => *a += b * alpha,
            (Mat::Diag(a), Mat::Diag(b)) => *a += b * alpha,
            _ => unreachable!("cone kinds always match"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmOptions {
    pub max_iters: usize,
    /// Target for relative gap and scaled infeasibilities.
    pub tol: f64,
    /// Multiplier on the default starting point.
    pub start_scale: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-9,
            start_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IpmStatus {
    Optimal,
    /// Primal iterate grew without bound while staying feasible: the LMI
    /// constraint set is (close to) empty.
    DualInfeasible,
    MaxIterations,
    Stalled,
    NumericalFailure(String),
}

#[derive(Debug, Clone)]
pub struct IpmSolution {
    pub status: IpmStatus,
    pub y: DVector<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub iterations: usize,
}

struct Iterate {
    x: Vec<Mat>,
    z: Vec<Mat>,
    y: DVector<f64>,
}

/// `A(M)_i = sum_blocks <A_i, M_b>`.
fn apply_a(problem: &ConeProblem, m: &[Mat]) -> DVector<f64> {
    let mut out = DVector::zeros(problem.n_vars);
    for (blk, mb) in problem.blocks.iter().zip(m) {
        match (blk, mb) {
            (ConeBlock::Dense { a, .. }, Mat::Dense(t)) => {
                for (i, ai) in a {
                    out[*i] += ai.inner(t);
                }
            }
            (ConeBlock::Diagonal { a, .. }, Mat::Diag(t)) => {
                for (i, ai) in a {
                    out[*i] += ai.iter().map(|&(k, v)| v * t[k]).sum::<f64>();
                }
            }
            _ => unreachable!("cone kinds always match"),
        }
    }
    out
}

/// `sum_i y_i A_i` restricted to each block.
fn apply_at(problem: &ConeProblem, y: &DVector<f64>) -> Vec<Mat> {
    problem
        .blocks
        .iter()
        .map(|blk| match blk {
            ConeBlock::Dense { c, a } => {
                let mut m = DMatrix::zeros(c.nrows(), c.ncols());
                for (i, ai) in a {
                    ai.add_to(&mut m, y[*i]);
                }
                Mat::Dense(m)
            }
            ConeBlock::Diagonal { c, a } => {
                let mut m = DVector::zeros(c.len());
                for (i, ai) in a {
                    for &(k, v) in ai {
                        m[k] += y[*i] * v;
                    }
                }
                Mat::Diag(m)
            }
        })
        .collect()
}

fn inverse_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let ch = Cholesky::new(m.clone())?;
    let inv = ch.inverse();
    Some((&inv + inv.transpose()) * 0.5)
}

/// Largest `alpha` with `M + alpha dM >= 0` (infinite if unbounded).
fn max_step(m: &Mat, dm: &Mat) -> Option<f64> {
    match (m, dm) {
        (Mat::Dense(m), Mat::Dense(dm)) => {
            let ch = Cholesky::new(m.clone())?;
            let l = ch.l();
            let a = l.solve_lower_triangular(dm)?;
            let s = l.solve_lower_triangular(&a.transpose())?;
            let s = (&s + s.transpose()) * 0.5;
            let lmin = s.symmetric_eigenvalues().min();
            Some(if lmin >= 0.0 {
                f64::INFINITY
            } else {
                -1.0 / lmin
            })
        }
        (Mat::Diag(m), Mat::Diag(dm)) => {
            let mut best = f64::INFINITY;
            for (v, dv) in m.iter().zip(dm.iter()) {
                if *dv < 0.0 {
                    best = best.min(-v / dv);
                }
            }
            Some(best)
        }
        _ => unreachable!("cone kinds always match"),
    }
}

fn total_dim(problem: &ConeProblem) -> usize {
    problem.blocks.iter().map(ConeBlock::dim).sum()
}

fn starting_point(problem: &ConeProblem, scale: f64) -> Iterate {
    let mut x = Vec::new();
    let mut z = Vec::new();
    for blk in &problem.blocks {
        let n = blk.dim() as f64;
        let (c_norm, a_norms): (f64, Vec<(usize, f64)>) = match blk {
            ConeBlock::Dense { c, a } => (
                c.norm(),
                a.iter().map(|(i, ai)| (*i, ai.frobenius())).collect(),
            ),
            ConeBlock::Diagonal { c, a } => (
                c.norm(),
                a.iter()
                    .map(|(i, ai)| (*i, ai.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()))
                    .collect(),
            ),
        };
        let mut xi = 10.0_f64.max(n.sqrt());
        let mut eta = 10.0_f64.max(n.sqrt()).max(c_norm);
        for &(i, an) in &a_norms {
            xi = xi.max(n * (1.0 + problem.b[i].abs()) / (1.0 + an));
            eta = eta.max(an);
        }
        xi *= scale;
        eta *= scale;
        match blk {
            ConeBlock::Dense { c, .. } => {
                let k = c.nrows();
                x.push(Mat::Dense(DMatrix::identity(k, k) * xi));
                z.push(Mat::Dense(DMatrix::identity(k, k) * eta));
            }
            ConeBlock::Diagonal { c, .. } => {
                x.push(Mat::Diag(DVector::from_element(c.len(), xi)));
                z.push(Mat::Diag(DVector::from_element(c.len(), eta)));
            }
        }
    }
    Iterate {
        x,
        z,
        y: DVector::zeros(problem.n_vars),
    }
}

/// Per-block data that stays fixed within one iteration.
struct Factor {
    z_inv: Vec<Mat>,
    schur: Cholesky<f64, nalgebra::Dyn>,
}

fn factor(problem: &ConeProblem, it: &Iterate) -> Result<Factor, String> {
    let m = problem.n_vars;
    let mut schur = DMatrix::<f64>::zeros(m, m);
    let mut z_inv = Vec::with_capacity(problem.blocks.len());
    for ((blk, xb), zb) in problem.blocks.iter().zip(&it.x).zip(&it.z) {
        match (blk, xb, zb) {
            (ConeBlock::Dense { c, a }, Mat::Dense(x), Mat::Dense(z)) => {
                let zi = inverse_spd(z).ok_or("dual slack lost definiteness")?;
                let n = c.nrows();
                for (jj, (j, aj)) in a.iter().enumerate() {
                    // W = X A_j Z^{-1}
                    let mut xa = DMatrix::<f64>::zeros(n, n);
                    for &(p, q, v) in &aj.entries {
                        let col = x.column(p) * v;
                        let mut dst = xa.column_mut(q);
                        dst += col;
                    }
                    let w = xa * &zi;
                    for (i, ai) in a.iter().take(jj + 1) {
                        let v = ai.inner(&w);
                        schur[(*i.max(j), *i.min(j))] += v;
                    }
                }
                z_inv.push(Mat::Dense(zi));
            }
            (ConeBlock::Diagonal { a, .. }, Mat::Diag(x), Mat::Diag(z)) => {
                let ratio = x.component_div(z);
                for (jj, (j, aj)) in a.iter().enumerate() {
                    for (i, ai) in a.iter().take(jj + 1) {
                        let mut v = 0.0;
                        for &(k1, v1) in ai {
                            for &(k2, v2) in aj {
                                if k1 == k2 {
                                    v += v1 * v2 * ratio[k1];
                                }
                            }
                        }
                        schur[(*i.max(j), *i.min(j))] += v;
                    }
                }
                z_inv.push(Mat::Diag(z.map(|v| 1.0 / v)));
            }
            _ => unreachable!("cone kinds always match"),
        }
    }
    // Lower triangle was filled; mirror it.
    for j in 0..m {
        for i in 0..j {
            schur[(i, j)] = schur[(j, i)];
        }
    }
    let dmax = schur.diagonal().max().max(1e-300);
    for i in 0..m {
        schur[(i, i)] += 1e-14 * dmax;
    }
    let schur = Cholesky::new(schur).ok_or("Schur complement is not positive definite")?;
    Ok(Factor { z_inv, schur })
}

/// Solve for the search direction given the complementarity target `K`
/// (`X` is driven towards `K` along `dX = K - X - X dZ Z^{-1}`).
fn direction(
    problem: &ConeProblem,
    it: &Iterate,
    f: &Factor,
    rd: &[Mat],
    k: &[Mat],
) -> (DVector<f64>, Vec<Mat>, Vec<Mat>) {
    // rhs = b - A(K) + A(X Rd Z^{-1})
    let xrz: Vec<Mat> =
        it.x.iter()
            .zip(rd)
            .zip(&f.z_inv)
            .map(|((x, r), zi)| match (x, r, zi) {
                (Mat::Dense(x), Mat::Dense(r), Mat::Dense(zi)) => Mat::Dense(x * r * zi),
                (Mat::Diag(x), Mat::Diag(r), Mat::Diag(zi)) => {
                    Mat::Diag(x.component_mul(r).component_mul(zi))
                }
                _ => unreachable!("cone kinds always match"),
            })
            .collect();
    let rhs = &problem.b - apply_a(problem, k) + apply_a(problem, &xrz);
    let dy = f.schur.solve(&rhs);
    let ady = apply_at(problem, &dy);
    let mut dz = Vec::with_capacity(rd.len());
    let mut dx = Vec::with_capacity(rd.len());
    for ((((r, a), x), zi), kb) in rd.iter().zip(&ady).zip(&it.x).zip(&f.z_inv).zip(k) {
        match (r, a, x, zi, kb) {
            (Mat::Dense(r), Mat::Dense(a), Mat::Dense(x), Mat::Dense(zi), Mat::Dense(kb)) => {
                let dzb = r - a;
                let t = kb - x - x * &dzb * zi;
                dx.push(Mat::Dense((&t + t.transpose()) * 0.5));
                dz.push(Mat::Dense(dzb));
            }
            (Mat::Diag(r), Mat::Diag(a), Mat::Diag(x), Mat::Diag(zi), Mat::Diag(kb)) => {
                let dzb = r - a;
                let t = kb - x - x.component_mul(&dzb).component_mul(zi);
                dx.push(Mat::Diag(t));
                dz.push(Mat::Diag(dzb));
            }
            _ => unreachable!("cone kinds always match"),
        }
    }
    (dy, dx, dz)
}

fn step_lengths(it: &Iterate, dx: &[Mat], dz: &[Mat]) -> Option<(f64, f64)> {
    let mut ap = f64::INFINITY;
    let mut ad = f64::INFINITY;
    for (x, d) in it.x.iter().zip(dx) {
        ap = ap.min(max_step(x, d)?);
    }
    for (z, d) in it.z.iter().zip(dz) {
        ad = ad.min(max_step(z, d)?);
    }
    Some((ap, ad))
}

fn inner_all(a: &[Mat], b: &[Mat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.inner(y)).sum()
}

pub fn solve(problem: &ConeProblem, opts: &IpmOptions) -> IpmSolution {
    let n_total = total_dim(problem).max(1) as f64;
    let mut it = starting_point(problem, opts.start_scale);
    let b_norm = problem.b.norm();
    let c_norm = problem
        .blocks
        .iter()
        .map(|b| match b {
            ConeBlock::Dense { c, .. } => c.norm_squared(),
            ConeBlock::Diagonal { c, .. } => c.norm_squared(),
        })
        .sum::<f64>()
        .sqrt();
    let c_mats: Vec<Mat> = problem
        .blocks
        .iter()
        .map(|b| match b {
            ConeBlock::Dense { c, .. } => Mat::Dense(c.clone()),
            ConeBlock::Diagonal { c, .. } => Mat::Diag(c.clone()),
        })
        .collect();

    let mut status = IpmStatus::MaxIterations;
    let mut stall = 0usize;
    let mut iterations = 0usize;
    let (mut pobj, mut dobj, mut pinf, mut dinf);
    loop {
        // Residuals.
        let ay = apply_at(problem, &it.y);
        let mut rd = Vec::with_capacity(ay.len());
        for ((c, a), z) in c_mats.iter().zip(&ay).zip(&it.z) {
            let mut r = c.clone();
            r.axpy(-1.0, a);
            r.axpy(-1.0, z);
            rd.push(r);
        }
        let rp = &problem.b - apply_a(problem, &it.x);
        pobj = inner_all(&c_mats, &it.x);
        dobj = problem.b.dot(&it.y);
        pinf = rp.norm() / (1.0 + b_norm);
        dinf = rd.iter().map(Mat::norm_sq).sum::<f64>().sqrt() / (1.0 + c_norm);
        let gap = inner_all(&it.x, &it.z);
        let rel_gap = gap.abs().max((pobj - dobj).abs()) / (1.0 + pobj.abs() + dobj.abs());
        if rel_gap < opts.tol && pinf < opts.tol && dinf < opts.tol {
            status = IpmStatus::Optimal;
            break;
        }
        let x_norm = it.x.iter().map(Mat::norm_sq).sum::<f64>().sqrt();
        if x_norm > 1e12 && pinf < 1e-6 && pobj < -1e6 {
            status = IpmStatus::DualInfeasible;
            break;
        }
        if iterations >= opts.max_iters {
            break;
        }
        if !(pobj.is_finite() && dobj.is_finite()) {
            status = IpmStatus::NumericalFailure("non-finite objective".into());
            break;
        }
        iterations += 1;
        let mu = gap / n_total;

        let f = match factor(problem, &it) {
            Ok(f) => f,
            Err(e) => {
                status = IpmStatus::NumericalFailure(e);
                break;
            }
        };

        // Predictor.
        let zero_k: Vec<Mat> =
            it.x.iter()
                .map(|x| match x {
                    Mat::Dense(x) => Mat::Dense(DMatrix::zeros(x.nrows(), x.ncols())),
                    Mat::Diag(x) => Mat::Diag(DVector::zeros(x.len())),
                })
                .collect();
        let (_, dx_a, dz_a) = direction(problem, &it, &f, &rd, &zero_k);
        let Some((ap, ad)) = step_lengths(&it, &dx_a, &dz_a) else {
            status = IpmStatus::NumericalFailure("step length computation failed".into());
            break;
        };
        let ap = ap.min(1.0);
        let ad = ad.min(1.0);
        let mut gap_aff = 0.0;
        for (((x, dx), z), dz) in it.x.iter().zip(&dx_a).zip(&it.z).zip(&dz_a) {
            let mut xa = x.clone();
            xa.axpy(ap, dx);
            let mut za = z.clone();
            za.axpy(ad, dz);
            gap_aff += xa.inner(&za);
        }
        let sigma = ((gap_aff / gap).max(0.0)).powi(3).clamp(0.0, 1.0);

        // Corrector: K = sigma mu Z^{-1} - dX_a dZ_a Z^{-1}.
        let k: Vec<Mat> = f
            .z_inv
            .iter()
            .zip(&dx_a)
            .zip(&dz_a)
            .map(|((zi, dx), dz)| match (zi, dx, dz) {
                (Mat::Dense(zi), Mat::Dense(dx), Mat::Dense(dz)) => {
                    Mat::Dense(zi * (sigma * mu) - dx * dz * zi)
                }
                (Mat::Diag(zi), Mat::Diag(dx), Mat::Diag(dz)) => {
                    Mat::Diag(zi * (sigma * mu) - dx.component_mul(dz).component_mul(zi))
                }
                _ => unreachable!("cone kinds always match"),
            })
            .collect();
        let (dy, dx, dz) = direction(problem, &it, &f, &rd, &k);
        let Some((ap, ad)) = step_lengths(&it, &dx, &dz) else {
            status = IpmStatus::NumericalFailure("step length computation failed".into());
            break;
        };
        let ap = (0.95 * ap).min(1.0);
        let ad = (0.95 * ad).min(1.0);
        if ap < 1e-10 && ad < 1e-10 {
            stall += 1;
            if stall >= 3 {
                status = IpmStatus::Stalled;
                break;
            }
        } else {
            stall = 0;
        }
        for (x, d) in it.x.iter_mut().zip(&dx) {
            x.axpy(ap, d);
        }
        for (z, d) in it.z.iter_mut().zip(&dz) {
            z.axpy(ad, d);
        }
        it.y += dy * ad;
    }

    IpmSolution {
        status,
        y: it.y,
        primal_objective: pobj,
        dual_objective: dobj,
        primal_infeasibility: pinf,
        dual_infeasibility: dinf,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(c: DMatrix<f64>, a: Vec<(usize, DMatrix<f64>)>) -> ConeBlock {
        ConeBlock::Dense {
            c,
            a: a.into_iter()
                .map(|(i, m)| (i, SparseSym::from_dense(&m)))
                .collect(),
        }
    }

    #[test]
    fn scalar_lp() {
        // maximise y subject to 2 - y >= 0 and y + 1 >= 0.
        let p = ConeProblem {
            n_vars: 1,
            b: DVector::from_vec(vec![1.0]),
            blocks: vec![ConeBlock::Diagonal {
                c: DVector::from_vec(vec![2.0, 1.0]),
                a: vec![(0, vec![(0, 1.0), (1, -1.0)])],
            }],
        };
        let s = solve(&p, &IpmOptions::default());
        assert_eq!(s.status, IpmStatus::Optimal);
        assert!((s.y[0] - 2.0).abs() < 1e-7, "{}", s.y[0]);
    }

    #[test]
    fn max_eigenvalue_bound() {
        // maximise t subject to S - t I >= 0; optimum is lambda_min(S).
        let s = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let lmin = s.clone().symmetric_eigenvalues().min();
        let p = ConeProblem {
            n_vars: 1,
            b: DVector::from_vec(vec![1.0]),
            blocks: vec![dense(s, vec![(0, DMatrix::identity(3, 3))])],
        };
        let sol = solve(&p, &IpmOptions::default());
        assert_eq!(sol.status, IpmStatus::Optimal);
        assert!((sol.y[0] - lmin).abs() < 1e-7);
    }

    #[test]
    fn two_variable_lmi() {
        // maximise y1 + 2 y2 with [[1 - y1, y2], [y2, 1]] >= 0 and y2 <= 1/2.
        // Optimum: y2 = 1/2, y1 = 1 - 1/4.
        let e11 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let e12 = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        let p = ConeProblem {
            n_vars: 2,
            b: DVector::from_vec(vec![1.0, 2.0]),
            blocks: vec![
                dense(DMatrix::identity(2, 2), vec![(0, e11), (1, e12)]),
                ConeBlock::Diagonal {
                    c: DVector::from_vec(vec![0.5]),
                    a: vec![(1, vec![(0, 1.0)])],
                },
            ],
        };
        let sol = solve(&p, &IpmOptions::default());
        assert_eq!(sol.status, IpmStatus::Optimal);
        assert!((sol.y[0] - 0.75).abs() < 1e-6, "{}", sol.y);
        assert!((sol.y[1] - 0.5).abs() < 1e-6);
    }
}
