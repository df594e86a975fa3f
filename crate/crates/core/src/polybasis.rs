//! Monomial bases, Gram maps and slack (annihilator) matrices.
//!
//! The basis vector `chi(x)` holds every monomial of total degree `<= d` in
//! `n` variables. Ordering is graded: the constant first, then `x_1..x_n`,
//! then each higher degree in lexicographic order descending on the power of
//! `x_1`, then `x_2`, and so on. For `n = 2, d = 2` this gives
//! `[1, x1, x2, x1^2, x1 x2, x2^2]`.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Exponent vector of a monomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Exponent {
    powers: Vec<u32>,
}

impl Exponent {
    pub fn new(powers: Vec<u32>) -> Self {
        Self { powers }
    }

    pub fn powers(&self) -> &[u32] {
        &self.powers
    }

    pub fn degree(&self) -> u32 {
        self.powers.iter().sum()
    }

    pub fn add(&self, other: &Exponent) -> Exponent {
        Exponent {
            powers: self
                .powers
                .iter()
                .zip(&other.powers)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.powers
            .iter()
            .zip(x)
            .map(|(&p, &v)| v.powi(p as i32))
            .product()
    }
}

/// `C(n, k)` with overflow detection.
pub fn binomial(n: usize, k: usize) -> Result<usize> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // Exact at every step: acc * (n - i) is divisible by (i + 1).
        acc = acc
            .checked_mul((n - i) as u128)
            .ok_or_else(|| Error::SizeOverflow(format!("C({n}, {k})")))?
            / (i as u128 + 1);
    }
    usize::try_from(acc).map_err(|_| Error::SizeOverflow(format!("C({n}, {k})")))
}

/// Number of monomials of degree `<= d` in `n` variables.
pub fn count_rho(n: usize, d: usize) -> Result<usize> {
    let total = n
        .checked_add(d)
        .ok_or_else(|| Error::SizeOverflow("n + d".into()))?;
    binomial(total, n)
}

/// Number of linearly independent symmetric matrices `Q` with
/// `chi^T Q chi == 0`.
pub fn count_iota(n: usize, d: usize) -> Result<usize> {
    let rho = count_rho(n, d)?;
    let two_d = d
        .checked_mul(2)
        .ok_or_else(|| Error::SizeOverflow("2d".into()))?;
    let products = count_rho(n, two_d)?;
    let sq = rho
        .checked_mul(rho)
        .and_then(|s| s.checked_add(rho))
        .ok_or_else(|| Error::SizeOverflow(format!("rho^2 + rho for rho = {rho}")))?;
    (sq / 2)
        .checked_sub(products)
        .ok_or_else(|| Error::Internal("negative slack count".into()))
}

/// Exponents of degree exactly `degree` in `n` variables, lexicographically
/// descending.
fn exponents_of_degree(n: usize, degree: u32) -> Vec<Exponent> {
    fn rec(n: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Exponent>) {
        if prefix.len() + 1 == n {
            prefix.push(remaining);
            out.push(Exponent::new(prefix.clone()));
            prefix.pop();
            return;
        }
        for p in (0..=remaining).rev() {
            prefix.push(p);
            rec(n, remaining - p, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, degree, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Ordered monomial basis of degree `<= d` in `n` variables.
#[derive(Debug, Clone)]
pub struct MonomialBasis {
    n: usize,
    d: usize,
    exponents: Vec<Exponent>,
    index: HashMap<Exponent, usize>,
}

impl MonomialBasis {
    pub fn new(n: usize, d: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "state dimension n must be >= 1".into(),
            ));
        }
        if d == 0 {
            return Err(Error::InvalidArgument(
                "polynomial degree d must be >= 1".into(),
            ));
        }
        // Gram-map codomain size must be representable too.
        count_rho(
            n,
            d.checked_mul(2)
                .ok_or_else(|| Error::SizeOverflow("2d".into()))?,
        )?;
        let rho = count_rho(n, d)?;
        Self::graded(n, d, rho)
    }

    fn graded(n: usize, d: usize, rho: usize) -> Result<Self> {
        let mut exponents = Vec::with_capacity(rho);
        for k in 0..=d {
            exponents.extend(exponents_of_degree(n, k as u32));
        }
        if exponents.len() != rho {
            return Err(Error::Internal(format!(
                "generated {} monomials, expected {rho}",
                exponents.len()
            )));
        }
        let index = exponents
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        Ok(Self {
            n,
            d,
            exponents,
            index,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn rho(&self) -> usize {
        self.exponents.len()
    }

    pub fn exponents(&self) -> &[Exponent] {
        &self.exponents
    }

    pub fn index_of(&self, e: &Exponent) -> Option<usize> {
        self.index.get(e).copied()
    }

    /// Evaluate `chi(x)`.
    pub fn eval_chi(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        self.exponents.iter().map(|e| e.eval(x)).collect()
    }

    /// Basis of all monomials of degree `<= 2d`, which indexes the output
    /// of [`MonomialBasis::gram_map`].
    pub fn product_basis(&self) -> MonomialBasis {
        let rho = count_rho(self.n, 2 * self.d).expect("product basis size checked in new()");
        MonomialBasis::graded(self.n, 2 * self.d, rho).expect("graded basis of checked size")
    }

    /// Coefficients of the polynomial `chi^T X chi` over the product basis.
    pub fn gram_map(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let rho = self.rho();
        if x.nrows() != rho || x.ncols() != rho {
            return Err(Error::Dimension(format!(
                "Gram matrix must be {rho}x{rho}, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        let product = self.product_basis();
        let mut coeffs = vec![0.0; product.rho()];
        for a in 0..rho {
            for b in 0..rho {
                let gamma = self.exponents[a].add(&self.exponents[b]);
                let k = product
                    .index_of(&gamma)
                    .expect("product exponent in 2d basis");
                coeffs[k] += x[(a, b)];
            }
        }
        Ok(coeffs)
    }

    /// Unordered index pairs `{a, b}` (a <= b) grouped by the product
    /// exponent they represent, in product-basis order.
    fn representations(&self) -> Vec<Vec<(usize, usize)>> {
        let product = self.product_basis();
        let mut groups = vec![Vec::new(); product.rho()];
        let rho = self.rho();
        for a in 0..rho {
            for b in a..rho {
                let gamma = self.exponents[a].add(&self.exponents[b]);
                let k = product
                    .index_of(&gamma)
                    .expect("product exponent in 2d basis");
                groups[k].push((a, b));
            }
        }
        groups
    }

    /// Selector with `Gamma chi(x) = x`.
    pub fn selector_gamma(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.n, self.rho());
        for i in 0..self.n {
            g[(i, 1 + i)] = 1.0;
        }
        g
    }

    /// Selector dropping the constant entry of `chi`.
    pub fn selector_pi(&self) -> DMatrix<f64> {
        let rho = self.rho();
        let mut p = DMatrix::zeros(rho - 1, rho);
        for i in 0..rho - 1 {
            p[(i, i + 1)] = 1.0;
        }
        p
    }
}

/// One slack matrix, stored with integer entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlackMatrix {
    size: usize,
    entries: Vec<i64>,
}

impl SlackMatrix {
    fn zeros(size: usize) -> Self {
        Self {
            size,
            entries: vec![0; size * size],
        }
    }

    fn add_pair(&mut self, a: usize, b: usize, sign: i64) {
        self.entries[a * self.size + b] += sign;
        self.entries[b * self.size + a] += sign;
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, a: usize, b: usize) -> i64 {
        self.entries[a * self.size + b]
    }

    /// Nonzero entries as `(row, col, value)`.
    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, usize, i64)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(move |(k, &v)| (k / self.size, k % self.size, v))
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            self.size,
            self.size,
            &self.entries.iter().map(|&v| v as f64).collect::<Vec<_>>(),
        )
    }

    /// `chi^T Q chi` for a given monomial vector.
    pub fn quadratic_form(&self, chi: &[f64]) -> f64 {
        self.nonzeros()
            .map(|(a, b, v)| v as f64 * chi[a] * chi[b])
            .sum()
    }
}

/// Basis of the symmetric matrices annihilated by `chi`.
#[derive(Debug, Clone)]
pub struct SlackBasis {
    matrices: Vec<SlackMatrix>,
}

impl SlackBasis {
    /// For each product exponent with several representations `{a, b}`,
    /// emit the differences between consecutive representations. The
    /// unordered pair `{a, b}` contributes `E_ab + E_ba` (so `2 E_aa` on the
    /// diagonal), which makes every difference integer-valued.
    pub fn new(basis: &MonomialBasis) -> Result<Self> {
        let rho = basis.rho();
        let mut matrices = Vec::new();
        for group in basis.representations() {
            for w in group.windows(2) {
                let (a, b) = w[0];
                let (c, d) = w[1];
                let mut q = SlackMatrix::zeros(rho);
                q.add_pair(a, b, 1);
                q.add_pair(c, d, -1);
                matrices.push(q);
            }
        }
        let expected = count_iota(basis.n(), basis.d())?;
        if matrices.len() != expected {
            return Err(Error::Internal(format!(
                "slack construction produced {} matrices, expected {expected}",
                matrices.len()
            )));
        }
        Ok(Self { matrices })
    }

    pub fn iota(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrices(&self) -> &[SlackMatrix] {
        &self.matrices
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// `sum_k tau_k Q_k`.
    pub fn combine(&self, tau: &[f64]) -> Result<DMatrix<f64>> {
        if tau.len() != self.iota() {
            return Err(Error::Dimension(format!(
                "expected {} slack multipliers, got {}",
                self.iota(),
                tau.len()
            )));
        }
        let rho = self.matrices.first().map_or(0, |q| q.size());
        let mut out = DMatrix::zeros(rho, rho);
        for (q, &t) in self.matrices.iter().zip(tau) {
            for (a, b, v) in q.nonzeros() {
                out[(a, b)] += t * v as f64;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn powers(b: &MonomialBasis) -> Vec<Vec<u32>> {
        b.exponents().iter().map(|e| e.powers().to_vec()).collect()
    }

    #[test]
    fn basis_n2_d2_matches_listing() {
        let b = MonomialBasis::new(2, 2).unwrap();
        assert_eq!(b.rho(), 6);
        assert_eq!(
            powers(&b),
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
    }

    #[test]
    fn basis_smallest_case() {
        let b = MonomialBasis::new(1, 1).unwrap();
        assert_eq!(powers(&b), vec![vec![0], vec![1]]);
    }

    #[test]
    fn basis_n3_d2_size() {
        assert_eq!(MonomialBasis::new(3, 2).unwrap().rho(), 10);
        assert_eq!(count_rho(3, 2).unwrap(), 10);
    }

    #[test]
    fn basis_rejects_zero_sizes() {
        assert!(MonomialBasis::new(0, 2).is_err());
        assert!(MonomialBasis::new(2, 0).is_err());
    }

    #[test]
    fn binomial_overflow_is_reported() {
        assert!(matches!(binomial(200, 100), Err(Error::SizeOverflow(_))));
        assert!(matches!(count_iota(60, 60), Err(Error::SizeOverflow(_))));
        assert!(matches!(
            MonomialBasis::new(100, 100),
            Err(Error::SizeOverflow(_))
        ));
    }

    #[test]
    fn eval_chi_examples() {
        let b = MonomialBasis::new(2, 2).unwrap();
        assert_eq!(b.eval_chi(&[0.0, 0.0]), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(b.eval_chi(&[2.0, 3.0]), vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        let b1 = MonomialBasis::new(1, 1).unwrap();
        assert_eq!(b1.eval_chi(&[5.0]), vec![1.0, 5.0]);
    }

    #[test]
    fn iota_examples() {
        assert_eq!(count_iota(2, 2).unwrap(), 6);
        assert_eq!(count_iota(1, 1).unwrap(), 0);
        // 1/2 (100 + 10) - C(7, 4) = 55 - 35.
        assert_eq!(count_iota(3, 2).unwrap(), 20);
    }

    #[test]
    fn iota_matches_pair_enumeration() {
        // Unordered pairs of basis monomials minus distinct products.
        for n in 1..=4 {
            for d in 1..=3 {
                let b = MonomialBasis::new(n, d).unwrap();
                let mut products = std::collections::HashSet::new();
                let mut pairs = 0usize;
                for a in 0..b.rho() {
                    for c in a..b.rho() {
                        pairs += 1;
                        products.insert(b.exponents()[a].add(&b.exponents()[c]));
                    }
                }
                assert_eq!(count_iota(n, d).unwrap(), pairs - products.len());
            }
        }
    }

    #[test]
    fn gram_map_examples() {
        let b = MonomialBasis::new(2, 2).unwrap();
        let prod = b.product_basis();
        let x2 = prod.index_of(&Exponent::new(vec![2, 0])).unwrap();

        let mut x = DMatrix::zeros(6, 6);
        x[(0, 0)] = 1.0;
        let c = b.gram_map(&x).unwrap();
        assert_eq!(c[0], 1.0);
        assert!(c[1..].iter().all(|&v| v == 0.0));

        // 1-based X[2,2] is x1 * x1.
        let mut x = DMatrix::zeros(6, 6);
        x[(1, 1)] = 1.0;
        let c = b.gram_map(&x).unwrap();
        assert_eq!(c[x2], 1.0);
        assert_eq!(c.iter().filter(|&&v| v != 0.0).count(), 1);

        // 1-based X[1,4] = X[4,1] = 1/2 is 1 * x1^2.
        let mut x = DMatrix::zeros(6, 6);
        x[(0, 3)] = 0.5;
        x[(3, 0)] = 0.5;
        let c = b.gram_map(&x).unwrap();
        assert_eq!(c[x2], 1.0);
        assert_eq!(c.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn gram_map_rejects_wrong_size() {
        let b = MonomialBasis::new(2, 2).unwrap();
        assert!(b.gram_map(&DMatrix::zeros(5, 5)).is_err());
    }

    #[test]
    fn slack_basis_small_cases() {
        let b = MonomialBasis::new(1, 1).unwrap();
        assert!(SlackBasis::new(&b).unwrap().is_empty());

        let b = MonomialBasis::new(2, 2).unwrap();
        let s = SlackBasis::new(&b).unwrap();
        assert_eq!(s.iota(), 6);
        for q in s.matrices() {
            let g = b.gram_map(&q.to_matrix()).unwrap();
            assert!(g.iter().all(|&v| v == 0.0));
            for a in 0..6 {
                for c in 0..6 {
                    assert_eq!(q.get(a, c), q.get(c, a));
                }
            }
        }
    }

    #[test]
    fn slack_x1_squared_representation() {
        // x1^2 = 1 * x1^2 = x1 * x1: the first slack matrix.
        let b = MonomialBasis::new(2, 2).unwrap();
        let s = SlackBasis::new(&b).unwrap();
        let q = &s.matrices()[0];
        assert_eq!(q.get(0, 3), 1);
        assert_eq!(q.get(3, 0), 1);
        assert_eq!(q.get(1, 1), -2);
        assert_eq!(q.nonzeros().count(), 3);
    }

    #[test]
    fn combine_checks_length() {
        let b = MonomialBasis::new(2, 2).unwrap();
        let s = SlackBasis::new(&b).unwrap();
        assert!(s.combine(&[1.0]).is_err());
        let m = s.combine(&[0.0; 6]).unwrap();
        assert_eq!(m, DMatrix::zeros(6, 6));
    }

    #[test]
    fn selectors() {
        let b = MonomialBasis::new(2, 2).unwrap();
        let chi = nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        let g = b.selector_gamma();
        assert_eq!((&g * &chi).as_slice(), &[2.0, 3.0]);
        let p = b.selector_pi();
        assert_eq!((&p * &chi).as_slice(), &[2.0, 3.0, 4.0, 6.0, 9.0]);
        assert_eq!(&p * p.transpose(), DMatrix::identity(5, 5));

        let chi0 = nalgebra::DVector::from_vec(b.eval_chi(&[0.0, 0.0]));
        assert!((&g * &chi0).iter().all(|&v| v == 0.0));
        assert!((&p * &chi0).iter().all(|&v| v == 0.0));

        let b1 = MonomialBasis::new(1, 1).unwrap();
        assert_eq!(
            b1.selector_gamma(),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0])
        );
    }
}
