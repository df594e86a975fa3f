//! Assembly of the decision-affine LMI systems.
//!
//! Two families are produced:
//!
//! * the per-eigenvalue test: for every distinct nonzero eigenvalue `lambda`
//!   of the pattern matrix, a positivity block `sum_j lambda^j L_j` and a
//!   derivative block `Pi (sum tau Q + ...) Pi^T` that must be negative
//!   semidefinite;
//! * the interval-lifted test: the same two polynomial matrix inequalities
//!   in a scalar `theta` ranging over `[lambda_min, lambda_max]`, turned into
//!   two parameter-free pencils by the generalised KYP lemma with multipliers
//!   `D = D^T > 0` and `G = -G^T`. Its size does not depend on the number of
//!   agents.
//!
//! All blocks are affine in one flat decision vector described by
//! [`DecisionLayout`].

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, skew_unit, strict_upper_pairs, sym_unit, upper_pairs};
use crate::pattern::SpectralData;
use crate::polybasis::{MonomialBasis, SlackBasis};

/// Symmetric matrix-valued affine function `F0 + sum_r y_r F_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSym {
    constant: DMatrix<f64>,
    terms: BTreeMap<usize, DMatrix<f64>>,
}

impl AffineSym {
    pub fn zeros(size: usize) -> Self {
        Self {
            constant: DMatrix::zeros(size, size),
            terms: BTreeMap::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    pub fn constant(&self) -> &DMatrix<f64> {
        &self.constant
    }

    pub fn set_constant(&mut self, m: DMatrix<f64>) {
        assert_eq!(m.nrows(), self.size());
        self.constant = m;
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, &DMatrix<f64>)> {
        self.terms.iter().map(|(&r, m)| (r, m))
    }

    pub fn coefficient(&self, r: usize) -> Option<&DMatrix<f64>> {
        self.terms.get(&r)
    }

    /// Accumulate `scale * m` into the coefficient of decision `r`.
    pub fn add_term(&mut self, r: usize, m: &DMatrix<f64>, scale: f64) {
        debug_assert_eq!(m.nrows(), self.size());
        if scale == 0.0 {
            return;
        }
        self.terms
            .entry(r)
            .and_modify(|acc| *acc += m * scale)
            .or_insert_with(|| m * scale);
    }

    pub fn add_scaled(&mut self, other: &AffineSym, scale: f64) {
        self.constant += &other.constant * scale;
        for (r, m) in other.terms() {
            self.add_term(r, m, scale);
        }
    }

    pub fn scaled(&self, s: f64) -> AffineSym {
        AffineSym {
            constant: &self.constant * s,
            terms: self.terms.iter().map(|(&r, m)| (r, m * s)).collect(),
        }
    }

    /// `T^T X T` applied to the constant and every coefficient.
    pub fn congruence(&self, t: &DMatrix<f64>) -> AffineSym {
        let tt = t.transpose();
        AffineSym {
            constant: &tt * &self.constant * t,
            terms: self.terms.iter().map(|(&r, m)| (r, &tt * m * t)).collect(),
        }
    }

    /// Place `self` as the `(a, b)` block (and its transpose at `(b, a)`)
    /// of a larger matrix with `block` sized tiles.
    fn place_into(&self, out: &mut AffineSym, a: usize, b: usize, weight: f64) {
        let nu = self.size();
        let place = |dst: &mut DMatrix<f64>, src: &DMatrix<f64>| {
            for i in 0..nu {
                for j in 0..nu {
                    dst[(a * nu + i, b * nu + j)] += weight * src[(i, j)];
                }
            }
        };
        place(&mut out.constant, &self.constant);
        for (r, m) in self.terms() {
            let dst = out
                .terms
                .entry(r)
                .or_insert_with(|| DMatrix::zeros(out.constant.nrows(), out.constant.nrows()));
            place(dst, m);
        }
    }

    /// Largest absolute entry across the constant and all coefficients.
    pub fn max_abs_entry(&self) -> f64 {
        self.terms
            .values()
            .map(max_abs)
            .fold(max_abs(&self.constant), f64::max)
    }

    pub fn eval(&self, y: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (&r, m) in &self.terms {
            if y[r] != 0.0 {
                out += m * y[r];
            }
        }
        out
    }

    /// Drop coefficients that are identically zero.
    fn prune(&mut self) {
        self.terms.retain(|_, m| m.iter().any(|&v| v != 0.0));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    RequirePositive,
    RequireNegative,
}

/// Strict blocks must clear the margin being maximised; non-strict blocks
/// only need to clear the fixed non-strict margin (zero by default).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strictness {
    Strict,
    NonStrict,
}

/// Which condition a block encodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BlockKind {
    /// `sum_j lambda^j L_j > 0`.
    LyapunovPositivity {
        lambda: f64,
    },
    /// Projected derivative condition at one eigenvalue.
    DerivativeBound {
        lambda: f64,
    },
    /// KYP pencil for condition `k` (1 = positivity, 2 = derivative).
    KypPencil {
        k: usize,
    },
    /// `D_k > 0` for the KYP multiplier of condition `k`.
    KypMultiplier {
        k: usize,
    },
    Custom {
        name: String,
    },
}

/// One affine matrix inequality.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub kind: BlockKind,
    pub orientation: Orientation,
    pub strictness: Strictness,
    /// Stored (normalised) pencil. The assembled pencil is
    /// `normalization * value`.
    pub value: AffineSym,
    pub normalization: f64,
}

impl LmiBlock {
    pub fn new(
        kind: BlockKind,
        orientation: Orientation,
        strictness: Strictness,
        value: AffineSym,
    ) -> Self {
        Self {
            kind,
            orientation,
            strictness,
            value,
            normalization: 1.0,
        }
    }

    pub fn size(&self) -> usize {
        self.value.size()
    }

    /// Divide by the largest entry of the matrix family so every block is
    /// on a unit scale.
    fn normalized(mut self) -> Self {
        self.value.prune();
        let s = self.value.max_abs_entry();
        if s > 0.0 {
            self.value = self.value.scaled(1.0 / s);
            self.normalization *= s;
        }
        self
    }
}

/// Sizes of the KYP multiplier variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KypLayout {
    /// Number of powers stacked in `phi`, minus one: `ceil((l + 1) / 2)`.
    pub m: usize,
    /// Block sizes `nu_1 = n`, `nu_2 = rho - 1`.
    pub nu: [usize; 2],
}

impl KypLayout {
    /// Side of `D_k` and `G_k`: the state dimension `m * nu_k` of the
    /// realization.
    pub fn multiplier_size(&self, k: usize) -> usize {
        self.m * self.nu[k - 1]
    }
}

/// Offsets of every matrix variable in the flat decision vector.
///
/// Order: `L_1 .. L_l` (upper triangles), `tau_1 .. tau_iota`, then for the
/// interval-lifted test `D_1`, `G_1`, `D_2`, `G_2` (upper triangles for `D`,
/// strict upper triangles for `G`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionLayout {
    pub n: usize,
    pub l: usize,
    pub iota: usize,
    pub kyp: Option<KypLayout>,
}

fn tri(n: usize) -> usize {
    n * (n + 1) / 2
}

fn strict_tri(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

impl DecisionLayout {
    pub fn lyapunov_range(&self, j: usize) -> Range<usize> {
        assert!(j >= 1 && j <= self.l);
        let len = tri(self.n);
        let start = (j - 1) * len;
        start..start + len
    }

    pub fn tau_range(&self) -> Range<usize> {
        let start = self.l * tri(self.n);
        start..start + self.iota
    }

    pub fn kyp_d_range(&self, k: usize) -> Range<usize> {
        let kyp = self.kyp.expect("layout has no KYP multipliers");
        let mut start = self.tau_range().end;
        for prev in 1..k {
            let s = kyp.multiplier_size(prev);
            start += tri(s) + strict_tri(s);
        }
        start..start + tri(kyp.multiplier_size(k))
    }

    pub fn kyp_g_range(&self, k: usize) -> Range<usize> {
        let kyp = self.kyp.expect("layout has no KYP multipliers");
        let start = self.kyp_d_range(k).end;
        start..start + strict_tri(kyp.multiplier_size(k))
    }

    pub fn len(&self) -> usize {
        match self.kyp {
            Some(_) => self.kyp_g_range(2).end,
            None => self.tau_range().end,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Named segments in decision-vector order.
    pub fn segments(&self) -> Vec<(String, Range<usize>)> {
        let mut out: Vec<(String, Range<usize>)> = (1..=self.l)
            .map(|j| (format!("L_{j}"), self.lyapunov_range(j)))
            .collect();
        out.push(("tau".into(), self.tau_range()));
        if self.kyp.is_some() {
            for k in 1..=2 {
                out.push((format!("D_{k}"), self.kyp_d_range(k)));
                out.push((format!("G_{k}"), self.kyp_g_range(k)));
            }
        }
        out
    }

    fn unpack_sym(n: usize, values: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for ((i, j), &v) in upper_pairs(n).into_iter().zip(values) {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    fn unpack_skew(n: usize, values: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for ((i, j), &v) in strict_upper_pairs(n).into_iter().zip(values) {
            m[(i, j)] = v;
            m[(j, i)] = -v;
        }
        m
    }

    pub fn lyapunov_matrices(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        (1..=self.l)
            .map(|j| Self::unpack_sym(self.n, &y[self.lyapunov_range(j)]))
            .collect()
    }

    pub fn taus<'a>(&self, y: &'a [f64]) -> &'a [f64] {
        &y[self.tau_range()]
    }

    pub fn kyp_d(&self, y: &[f64], k: usize) -> DMatrix<f64> {
        let s = self
            .kyp
            .expect("layout has no KYP multipliers")
            .multiplier_size(k);
        Self::unpack_sym(s, &y[self.kyp_d_range(k)])
    }

    pub fn kyp_g(&self, y: &[f64], k: usize) -> DMatrix<f64> {
        let s = self
            .kyp
            .expect("layout has no KYP multipliers")
            .multiplier_size(k);
        Self::unpack_skew(s, &y[self.kyp_g_range(k)])
    }

    /// Flatten matrices back into a decision vector (inverse of the
    /// accessors above).
    pub fn pack(
        &self,
        lyap: &[DMatrix<f64>],
        tau: &[f64],
        kyp: Option<[(&DMatrix<f64>, &DMatrix<f64>); 2]>,
    ) -> Result<Vec<f64>> {
        if lyap.len() != self.l || tau.len() != self.iota {
            return Err(Error::Dimension(format!(
                "layout expects {} Lyapunov matrices and {} slack multipliers, got {} and {}",
                self.l,
                self.iota,
                lyap.len(),
                tau.len()
            )));
        }
        let mut y = Vec::with_capacity(self.len());
        for lj in lyap {
            if lj.nrows() != self.n || lj.ncols() != self.n {
                return Err(Error::Dimension("Lyapunov matrix size".into()));
            }
            y.extend(upper_pairs(self.n).into_iter().map(|(i, j)| lj[(i, j)]));
        }
        y.extend_from_slice(tau);
        match (self.kyp, kyp) {
            (Some(layout), Some(mults)) => {
                for (k, (d, g)) in mults.iter().enumerate() {
                    let s = layout.multiplier_size(k + 1);
                    if d.nrows() != s || g.nrows() != s {
                        return Err(Error::Dimension("KYP multiplier size".into()));
                    }
                    y.extend(upper_pairs(s).into_iter().map(|(i, j)| d[(i, j)]));
                    y.extend(strict_upper_pairs(s).into_iter().map(|(i, j)| g[(i, j)]));
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::Dimension(
                    "KYP multipliers do not match layout".into(),
                ))
            }
        }
        Ok(y)
    }
}

/// Assembled system: layout plus blocks.
#[derive(Debug, Clone)]
pub struct LmiSystem {
    pub layout: DecisionLayout,
    pub blocks: Vec<LmiBlock>,
    /// Distinct nonzero eigenvalues the system was built for (per-eigenvalue
    /// test) or that the interval covers (lifted test).
    pub eigenvalues: Vec<f64>,
    pub interval: Option<(f64, f64)>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmiOptions {
    pub l: usize,
    pub epsilon: f64,
}

impl Default for LmiOptions {
    fn default() -> Self {
        Self { l: 1, epsilon: 1.0 }
    }
}

fn check_inputs(
    basis: &MonomialBasis,
    slack: &SlackBasis,
    a_agent: &DMatrix<f64>,
    a_coupling: &DMatrix<f64>,
    opts: &LmiOptions,
) -> Result<()> {
    if opts.l == 0 {
        return Err(Error::InvalidArgument(
            "Lyapunov power count l must be >= 1".into(),
        ));
    }
    if !(opts.epsilon >= 0.0) || !opts.epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "decay rate epsilon must be finite and >= 0, got {}",
            opts.epsilon
        )));
    }
    for (name, a) in [("agent", a_agent), ("coupling", a_coupling)] {
        if a.nrows() != basis.n() || a.ncols() != basis.rho() {
            return Err(Error::Dimension(format!(
                "{name} coefficient matrix is {}x{}, basis needs {}x{}",
                a.nrows(),
                a.ncols(),
                basis.n(),
                basis.rho()
            )));
        }
    }
    if slack
        .matrices()
        .first()
        .is_some_and(|q| q.size() != basis.rho())
    {
        return Err(Error::Dimension(
            "slack basis does not match monomial basis".into(),
        ));
    }
    Ok(())
}

/// Per-unit-`L` building blocks of the projected derivative matrix.
struct DerivativeTerms {
    /// For each independent entry of `L`: `Pi (Gamma^T B A_a + A_a^T B Gamma
    /// + eps Gamma^T B Gamma) Pi^T`.
    agent: Vec<DMatrix<f64>>,
    /// For each independent entry: `Pi (Gamma^T B A_b + A_b^T B Gamma) Pi^T`.
    coupling: Vec<DMatrix<f64>>,
    /// `Pi Q_k Pi^T`.
    slack: Vec<DMatrix<f64>>,
}

impl DerivativeTerms {
    fn new(
        basis: &MonomialBasis,
        slack: &SlackBasis,
        a_agent: &DMatrix<f64>,
        a_coupling: &DMatrix<f64>,
        epsilon: f64,
    ) -> Self {
        let n = basis.n();
        let gamma = basis.selector_gamma();
        let pi = basis.selector_pi();
        let project = |m: DMatrix<f64>| &pi * m * pi.transpose();
        let mut agent = Vec::new();
        let mut coupling = Vec::new();
        for (i, j) in upper_pairs(n) {
            let b = sym_unit(n, i, j);
            let gb = gamma.transpose() * &b;
            let ga = &gb * a_agent;
            let gc = &gb * a_coupling;
            agent.push(project(&ga + ga.transpose() + &gb * &gamma * epsilon));
            coupling.push(project(&gc + gc.transpose()));
        }
        let slack = slack
            .matrices()
            .iter()
            .map(|q| project(q.to_matrix()))
            .collect();
        Self {
            agent,
            coupling,
            slack,
        }
    }
}

/// Per-eigenvalue system: for each distinct nonzero eigenvalue, one
/// positivity block of size `n` and one derivative block of size `rho - 1`.
/// The slack multipliers are shared by all eigenvalues.
pub fn assemble_theorem1(
    basis: &MonomialBasis,
    slack: &SlackBasis,
    a_agent: &DMatrix<f64>,
    a_coupling: &DMatrix<f64>,
    spectral: &SpectralData,
    opts: &LmiOptions,
) -> Result<LmiSystem> {
    check_inputs(basis, slack, a_agent, a_coupling, opts)?;
    let n = basis.n();
    let layout = DecisionLayout {
        n,
        l: opts.l,
        iota: slack.iota(),
        kyp: None,
    };
    let terms = DerivativeTerms::new(basis, slack, a_agent, a_coupling, opts.epsilon);
    let eigenvalues = spectral.distinct_nonzero();
    let pairs = upper_pairs(n);
    let mut blocks = Vec::with_capacity(2 * eigenvalues.len());

    for &lambda in &eigenvalues {
        let mut pos = AffineSym::zeros(n);
        let mut der = AffineSym::zeros(basis.rho() - 1);
        for j in 1..=opts.l {
            let lj = lambda.powi(j as i32);
            let lj1 = lambda.powi(j as i32 + 1);
            for (p, (r, &(a, b))) in layout.lyapunov_range(j).zip(pairs.iter()).enumerate() {
                pos.add_term(r, &sym_unit(n, a, b), lj);
                der.add_term(r, &terms.agent[p], lj);
                der.add_term(r, &terms.coupling[p], lj1);
            }
        }
        for (r, q) in layout.tau_range().zip(&terms.slack) {
            der.add_term(r, q, 1.0);
        }
        blocks.push(
            LmiBlock::new(
                BlockKind::LyapunovPositivity { lambda },
                Orientation::RequirePositive,
                Strictness::Strict,
                pos,
            )
            .normalized(),
        );
        blocks.push(
            LmiBlock::new(
                BlockKind::DerivativeBound { lambda },
                Orientation::RequireNegative,
                Strictness::NonStrict,
                der,
            )
            .normalized(),
        );
    }

    Ok(LmiSystem {
        layout,
        blocks,
        eigenvalues,
        interval: None,
        warnings: power_count_warning(opts.l, spectral),
    })
}

fn power_count_warning(l: usize, spectral: &SpectralData) -> Vec<String> {
    let n_agents = spectral.lambdas.len();
    if l > n_agents {
        vec![format!(
            "l = {l} exceeds the number of agents N = {n_agents}; higher powers of the \
             pattern matrix are linearly dependent on lower ones"
        )]
    } else {
        Vec::new()
    }
}

/// `ceil((l + 1) / 2)`.
pub fn kyp_order(l: usize) -> usize {
    (l + 2) / 2
}

/// State-space data `(A, B, C, D)` whose transfer function in the scalar
/// `theta` is the stacked powers `phi(theta) = [theta^m I; ...; theta I; I]`.
#[derive(Debug, Clone)]
pub struct KypRealization {
    pub nu: usize,
    pub m: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl KypRealization {
    pub fn new(nu: usize, l: usize) -> Result<Self> {
        if nu == 0 || l == 0 {
            return Err(Error::InvalidArgument(
                "KYP realization needs nu >= 1 and l >= 1".into(),
            ));
        }
        let m = kyp_order(l);
        let id = DMatrix::<f64>::identity(nu, nu);
        let mut shift = DMatrix::<f64>::zeros(m, m);
        for i in 0..m - 1 {
            shift[(i, i + 1)] = 1.0;
        }
        let mut last = DMatrix::<f64>::zeros(m, 1);
        last[(m - 1, 0)] = 1.0;
        let mut c_top = DMatrix::<f64>::zeros(m + 1, m);
        for i in 0..m {
            c_top[(i, i)] = 1.0;
        }
        let mut d_col = DMatrix::<f64>::zeros(m + 1, 1);
        d_col[(m, 0)] = 1.0;
        Ok(Self {
            nu,
            m,
            a: shift.kronecker(&id),
            b: last.kronecker(&id),
            c: c_top.kronecker(&id),
            d: d_col.kronecker(&id),
        })
    }

    /// `D + C theta (I - A theta)^{-1} B`.
    pub fn transfer(&self, theta: f64) -> DMatrix<f64> {
        let dim = self.a.nrows();
        let lhs = DMatrix::<f64>::identity(dim, dim) - &self.a * theta;
        // I - theta A is unit upper triangular, hence always invertible.
        let x = lhs
            .lu()
            .solve(&self.b)
            .expect("unit upper triangular system");
        &self.d + &self.c * x * theta
    }

    /// `[I 0; A B]`, the map from `(state, input)` to `(state, next)`.
    pub fn state_map(&self) -> DMatrix<f64> {
        let dim = self.a.nrows();
        let nu = self.nu;
        let mut w = DMatrix::zeros(2 * dim, dim + nu);
        for i in 0..dim {
            w[(i, i)] = 1.0;
        }
        w.view_mut((dim, 0), (dim, dim)).copy_from(&self.a);
        w.view_mut((dim, dim), (dim, nu)).copy_from(&self.b);
        w
    }

    /// `[C D]`.
    pub fn output_map(&self) -> DMatrix<f64> {
        let dim = self.a.nrows();
        let mut w = DMatrix::zeros(self.c.nrows(), dim + self.nu);
        w.view_mut((0, 0), (self.c.nrows(), dim)).copy_from(&self.c);
        w.view_mut((0, dim), (self.c.nrows(), self.nu))
            .copy_from(&self.d);
        w
    }
}

/// Stacked powers `[theta^m I_nu; theta^(m-1) I_nu; ...; I_nu]`.
pub fn stacked_powers(nu: usize, m: usize, theta: f64) -> DMatrix<f64> {
    let mut phi = DMatrix::zeros((m + 1) * nu, nu);
    for a in 0..=m {
        let p = theta.powi((m - a) as i32);
        for i in 0..nu {
            phi[(a * nu + i, i)] = p;
        }
    }
    phi
}

/// Gram representation of a matrix polynomial in `theta`.
///
/// Given `coeffs[k]` (the coefficient of `theta^k`, each `nu x nu`), returns
/// `M` with `phi(theta)^T M phi(theta) = sum_k theta^k coeffs[k]`, where
/// block `a` of `phi` carries `theta^(m - a)`. Each coefficient is split
/// evenly over the block positions `(a, b)` with `(m - a) + (m - b) = k`.
pub fn polynomial_to_gram(coeffs: &[AffineSym], m: usize) -> Result<AffineSym> {
    let Some(first) = coeffs.first() else {
        return Err(Error::InvalidArgument("empty coefficient list".into()));
    };
    let nu = first.size();
    let deg = coeffs.len() - 1;
    if deg > 2 * m {
        return Err(Error::InvalidArgument(format!(
            "polynomial degree {deg} exceeds 2m = {}",
            2 * m
        )));
    }
    let mut out = AffineSym::zeros((m + 1) * nu);
    for (k, ck) in coeffs.iter().enumerate() {
        if ck.size() != nu {
            return Err(Error::Dimension("coefficients must share one size".into()));
        }
        let target = 2 * m - k;
        let cells: Vec<(usize, usize)> = (0..=m)
            .filter(|&a| target >= a && target - a <= m)
            .map(|a| (a, target - a))
            .collect();
        let w = 1.0 / cells.len() as f64;
        for (a, b) in cells {
            ck.place_into(&mut out, a, b, w);
        }
    }
    Ok(out)
}

/// Multiplier pencil `[I 0; A B]^T Psi [I 0; A B]` contributions of the
/// `D` and `G` entries for condition `k`, with
/// `Psi = [-2D, (lo + hi) D + G; (lo + hi) D - G, -2 lo hi D]`.
fn multiplier_pencil(
    real: &KypRealization,
    layout: &DecisionLayout,
    k: usize,
    lo: f64,
    hi: f64,
) -> AffineSym {
    let w = real.state_map();
    let dim = real.a.nrows();
    let size = dim + real.nu;
    let mut out = AffineSym::zeros(size);
    let s = lo + hi;
    let p = lo * hi;
    for (r, (i, j)) in layout.kyp_d_range(k).zip(upper_pairs(dim)) {
        let u = sym_unit(dim, i, j);
        let mut psi = DMatrix::zeros(2 * dim, 2 * dim);
        psi.view_mut((0, 0), (dim, dim)).copy_from(&(&u * -2.0));
        psi.view_mut((0, dim), (dim, dim)).copy_from(&(&u * s));
        psi.view_mut((dim, 0), (dim, dim)).copy_from(&(&u * s));
        psi.view_mut((dim, dim), (dim, dim))
            .copy_from(&(&u * (-2.0 * p)));
        out.add_term(r, &(w.transpose() * psi * &w), 1.0);
    }
    for (r, (i, j)) in layout.kyp_g_range(k).zip(strict_upper_pairs(dim)) {
        let g = skew_unit(dim, i, j);
        let mut psi = DMatrix::zeros(2 * dim, 2 * dim);
        psi.view_mut((0, dim), (dim, dim)).copy_from(&g);
        psi.view_mut((dim, 0), (dim, dim)).copy_from(&(-&g));
        out.add_term(r, &(w.transpose() * psi * &w), 1.0);
    }
    out
}

/// Interval-lifted system: two KYP pencils of sizes `n (m + 1)` and
/// `(rho - 1)(m + 1)`, plus positivity of both `D` multipliers.
#[allow(clippy::too_many_arguments)]
pub fn assemble_theorem2(
    basis: &MonomialBasis,
    slack: &SlackBasis,
    a_agent: &DMatrix<f64>,
    a_coupling: &DMatrix<f64>,
    lambda_min: f64,
    lambda_max: f64,
    opts: &LmiOptions,
) -> Result<LmiSystem> {
    check_inputs(basis, slack, a_agent, a_coupling, opts)?;
    if !(lambda_min.is_finite() && lambda_max.is_finite()) || lambda_min > lambda_max {
        return Err(Error::InvalidArgument(format!(
            "invalid eigenvalue interval [{lambda_min}, {lambda_max}]"
        )));
    }
    if lambda_min <= 0.0 && lambda_max >= 0.0 {
        return Err(Error::IntervalContainsZero {
            lo: lambda_min,
            hi: lambda_max,
        });
    }
    let n = basis.n();
    let m = kyp_order(opts.l);
    let nu = [n, basis.rho() - 1];
    let layout = DecisionLayout {
        n,
        l: opts.l,
        iota: slack.iota(),
        kyp: Some(KypLayout { m, nu }),
    };
    let terms = DerivativeTerms::new(basis, slack, a_agent, a_coupling, opts.epsilon);
    let pairs = upper_pairs(n);

    // Coefficients of theta^k for both polynomial conditions.
    let mut c1: Vec<AffineSym> = (0..=2 * m).map(|_| AffineSym::zeros(nu[0])).collect();
    let mut c2: Vec<AffineSym> = (0..=2 * m).map(|_| AffineSym::zeros(nu[1])).collect();
    for j in 1..=opts.l {
        for (p, (r, &(a, b))) in layout.lyapunov_range(j).zip(pairs.iter()).enumerate() {
            // Negated: the pencil must be negative where sum theta^j L_j > 0.
            c1[j].add_term(r, &sym_unit(n, a, b), -1.0);
            c2[j].add_term(r, &terms.agent[p], 1.0);
            c2[j + 1].add_term(r, &terms.coupling[p], 1.0);
        }
    }
    for (r, q) in layout.tau_range().zip(&terms.slack) {
        c2[0].add_term(r, q, 1.0);
    }

    let mut blocks = Vec::with_capacity(4);
    for (k, coeffs) in [(1usize, &c1), (2, &c2)] {
        let real = KypRealization::new(nu[k - 1], opts.l)?;
        let gram = polynomial_to_gram(coeffs, m)?;
        // [C D] is the identity for this realization, kept general anyway.
        let mut pencil = gram.congruence(&real.output_map());
        pencil.add_scaled(
            &multiplier_pencil(&real, &layout, k, lambda_min, lambda_max),
            1.0,
        );
        let strictness = if k == 1 {
            Strictness::Strict
        } else {
            Strictness::NonStrict
        };
        blocks.push(
            LmiBlock::new(
                BlockKind::KypPencil { k },
                Orientation::RequireNegative,
                strictness,
                pencil,
            )
            .normalized(),
        );
        let dim = layout.kyp.expect("kyp layout").multiplier_size(k);
        let mut d = AffineSym::zeros(dim);
        for (r, (i, j)) in layout.kyp_d_range(k).zip(upper_pairs(dim)) {
            d.add_term(r, &sym_unit(dim, i, j), 1.0);
        }
        blocks.push(
            LmiBlock::new(
                BlockKind::KypMultiplier { k },
                Orientation::RequirePositive,
                Strictness::Strict,
                d,
            )
            .normalized(),
        );
    }

    Ok(LmiSystem {
        layout,
        blocks,
        eigenvalues: Vec::new(),
        interval: Some((lambda_min, lambda_max)),
        warnings: Vec::new(),
    })
}

/// Evaluate every (normalised) block at `y`.
pub fn evaluate_blocks(
    layout: &DecisionLayout,
    blocks: &[LmiBlock],
    y: &[f64],
) -> Result<Vec<DMatrix<f64>>> {
    if y.len() != layout.len() {
        return Err(Error::Dimension(format!(
            "decision vector has length {}, layout needs {}",
            y.len(),
            layout.len()
        )));
    }
    Ok(blocks.iter().map(|b| b.value.eval(y)).collect())
}
