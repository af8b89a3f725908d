//! Exact sparse multivariate polynomial arithmetic and calculus operators.
//!
//! Polynomials are stored canonically: a map from monomials (graded
//! lexicographic order) to nonzero coefficients. Two polynomials are equal
//! iff their term maps are equal.

mod parse;

pub use parse::{parse, parse_with_params};

use std::collections::BTreeMap;
use std::fmt;

use rug::Rational;
use thiserror::Error;

use crate::scalar::{float_to_rat, rat_to_float, Coeff};

#[derive(Debug, Error, PartialEq)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("syntax error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("exponent at position {pos} must be a non-negative integer")]
    BadExponent { pos: usize },
    #[error("polynomials must have at least one variable")]
    ZeroDimension,
}

/// A power product of the state variables, stored as an exponent vector of
/// length equal to the ambient dimension.
///
/// Ordered graded-lexicographically: lower total degree first, ties broken
/// by the exponent vector (so `x^2 > x*y > y^2` within degree 2).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial {
    exps: Vec<u32>,
}

impl Monomial {
    pub fn new(exps: Vec<u32>) -> Self {
        Monomial { exps }
    }

    /// The constant monomial `1` in dimension `dim`.
    pub fn unit(dim: usize) -> Self {
        Monomial { exps: vec![0; dim] }
    }

    /// The monomial `x_i` in dimension `dim`.
    pub fn var(dim: usize, i: usize) -> Self {
        let mut exps = vec![0; dim];
        exps[i] = 1;
        Monomial { exps }
    }

    pub fn dim(&self) -> usize {
        self.exps.len()
    }

    pub fn degree(&self) -> u32 {
        self.exps.iter().sum()
    }

    pub fn exps(&self) -> &[u32] {
        &self.exps
    }

    pub fn exp(&self, i: usize) -> u32 {
        self.exps[i]
    }

    /// Product of two monomials (exponent-wise sum).
    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.dim(), other.dim());
        Monomial {
            exps: self
                .exps
                .iter()
                .zip(&other.exps)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Halves every exponent if all are even.
    pub fn try_sqrt(&self) -> Option<Monomial> {
        if self.exps.iter().all(|e| e % 2 == 0) {
            Some(Monomial {
                exps: self.exps.iter().map(|e| e / 2).collect(),
            })
        } else {
            None
        }
    }

    /// Doubles every exponent.
    pub fn squared(&self) -> Monomial {
        Monomial {
            exps: self.exps.iter().map(|e| e * 2).collect(),
        }
    }

    fn fmt_with(&self, vars: &[String]) -> String {
        let mut parts = Vec::new();
        for (i, &e) in self.exps.iter().enumerate() {
            match e {
                0 => {}
                1 => parts.push(vars[i].clone()),
                _ => parts.push(format!("{}^{}", vars[i], e)),
            }
        }
        if parts.is_empty() {
            "1".to_string()
        } else {
            parts.join("*")
        }
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.exps.cmp(&other.exps))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse multivariate polynomial over a coefficient ring `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial<C: Coeff> {
    dim: usize,
    terms: BTreeMap<Monomial, C>,
}

/// Polynomial with exact rational coefficients; the common currency of
/// program assembly.
pub type RatPoly = Polynomial<Rational>;

/// Polynomial with extended-precision float coefficients.
pub type FloatPoly = Polynomial<rug::Float>;

impl<C: Coeff> Polynomial<C> {
    pub fn zero(dim: usize) -> Self {
        assert!(dim >= 1, "polynomials must have at least one variable");
        Polynomial {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: C) -> Self {
        let mut p = Self::zero(dim);
        if !c.is_zero() {
            p.terms.insert(Monomial::unit(dim), c);
        }
        p
    }

    pub fn var(dim: usize, i: usize) -> Self {
        assert!(i < dim);
        let mut p = Self::zero(dim);
        p.terms.insert(Monomial::var(dim, i), C::one());
        p
    }

    pub fn from_terms(dim: usize, terms: impl IntoIterator<Item = (Monomial, C)>) -> Self {
        let mut p = Self::zero(dim);
        for (m, c) in terms {
            p.add_term(&m, &c);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Total degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(Monomial::degree).max()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &C)> {
        self.terms.iter()
    }

    pub fn support(&self) -> impl Iterator<Item = &Monomial> {
        self.terms.keys()
    }

    pub fn coeff(&self, m: &Monomial) -> C {
        self.terms.get(m).cloned().unwrap_or_else(C::zero)
    }

    pub fn constant_term(&self) -> C {
        self.coeff(&Monomial::unit(self.dim))
    }

    /// Adds `c * m` in place, keeping the zero-free canonical form.
    pub fn add_term(&mut self, m: &Monomial, c: &C) {
        debug_assert_eq!(m.dim(), self.dim);
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(m) {
            Some(existing) => {
                let sum = existing.add(c);
                if sum.is_zero() {
                    self.terms.remove(m);
                } else {
                    *existing = sum;
                }
            }
            None => {
                self.terms.insert(m.clone(), c.clone());
            }
        }
    }

    fn check_dim(&self, other: &Self) -> Result<(), PolyError> {
        if self.dim != other.dim {
            return Err(PolyError::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Self {
        self.check_dim(other).expect("polynomial dimensions agree");
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m, c);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        Polynomial {
            dim: self.dim,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c.neg())).collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.check_dim(other).expect("polynomial dimensions agree");
        let mut out = Self::zero(self.dim);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(&ma.mul(mb), &ca.mul(cb));
            }
        }
        out
    }

    pub fn scale(&self, k: &C) -> Self {
        if k.is_zero() {
            return Self::zero(self.dim);
        }
        Polynomial {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .map(|(m, c)| (m.clone(), c.mul(k)))
                .collect(),
        }
    }

    pub fn pow(&self, e: u32) -> Self {
        let mut out = Self::constant(self.dim, C::one());
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    /// Partial derivative with respect to variable `i`.
    pub fn partial(&self, i: usize) -> Self {
        assert!(i < self.dim);
        let mut out = Self::zero(self.dim);
        for (m, c) in &self.terms {
            let e = m.exp(i);
            if e == 0 {
                continue;
            }
            let mut exps = m.exps().to_vec();
            exps[i] = e - 1;
            out.add_term(&Monomial::new(exps), &c.scale_int(e as i64));
        }
        out
    }

    /// Exact evaluation in the coefficient arithmetic.
    ///
    /// Walks terms in graded order, reusing the previous power product where
    /// possible; for sparse polynomials this stays close to Horner cost.
    pub fn evaluate(&self, point: &[C]) -> Result<C, PolyError> {
        if point.len() != self.dim {
            return Err(PolyError::DimensionMismatch {
                expected: self.dim,
                found: point.len(),
            });
        }
        // Cache powers of each coordinate up to the needed exponent.
        let mut powers: Vec<Vec<C>> = point.iter().map(|x| vec![C::one(), x.clone()]).collect();
        let mut acc = C::zero();
        for (m, c) in &self.terms {
            let mut term = c.clone();
            for (i, &e) in m.exps().iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let table = &mut powers[i];
                while table.len() <= e as usize {
                    let next = table.last().unwrap().mul(&point[i]);
                    table.push(next);
                }
                term = term.mul(&table[e as usize]);
            }
            acc = acc.add(&term);
        }
        Ok(acc)
    }

    /// Fast approximate evaluation at an `f64` point.
    pub fn evaluate_f64(&self, point: &[f64]) -> f64 {
        debug_assert_eq!(point.len(), self.dim);
        let mut acc = 0.0;
        for (m, c) in &self.terms {
            let mut term = c.to_f64();
            for (i, &e) in m.exps().iter().enumerate() {
                term *= point[i].powi(e as i32);
            }
            acc += term;
        }
        acc
    }

    pub fn map_coeffs<D: Coeff>(&self, f: impl Fn(&C) -> D) -> Polynomial<D> {
        let mut out = Polynomial::zero(self.dim);
        for (m, c) in &self.terms {
            out.add_term(m, &f(c));
        }
        out
    }

    /// Renders the polynomial using the given variable names, highest
    /// monomial first. The output re-parses to the same polynomial.
    pub fn to_string_with(&self, vars: &[String]) -> String {
        assert_eq!(vars.len(), self.dim);
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (m, c) in self.terms.iter().rev() {
            let cs = c.to_string();
            let (neg, mag) = match cs.strip_prefix('-') {
                Some(rest) => (true, rest.to_string()),
                None => (false, cs),
            };
            if out.is_empty() {
                if neg {
                    out.push('-');
                }
            } else {
                out.push_str(if neg { " - " } else { " + " });
            }
            let is_unit_mono = m.degree() == 0;
            let is_one = mag == "1";
            if is_unit_mono {
                out.push_str(&mag);
            } else if is_one {
                out.push_str(&m.fmt_with(vars));
            } else {
                out.push_str(&mag);
                out.push('*');
                out.push_str(&m.fmt_with(vars));
            }
        }
        out
    }
}

impl RatPoly {
    /// Converts every coefficient to a float with `prec` mantissa bits.
    pub fn to_float(&self, prec: u32) -> FloatPoly {
        self.map_coeffs(|c| rat_to_float(c, prec))
    }
}

impl FloatPoly {
    /// Converts every coefficient to the exact rational it represents.
    pub fn to_rational(&self) -> RatPoly {
        self.map_coeffs(float_to_rat)
    }
}

impl<C: Coeff> fmt::Display for Polynomial<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vars: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        f.write_str(&self.to_string_with(&vars))
    }
}

/// Symmetric diffusion matrix `D = sigma * sigma^T` together with its factor.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionMatrix {
    /// Noise factor, `n x m`.
    sigma: Vec<Vec<Rational>>,
    /// `D = sigma * sigma^T`, `n x n`, positive semidefinite by construction.
    d: Vec<Vec<Rational>>,
}

impl DiffusionMatrix {
    /// Builds `D = sigma * sigma^T` exactly from an `n x m` factor.
    pub fn from_sigma(sigma: Vec<Vec<Rational>>) -> Result<Self, PolyError> {
        let n = sigma.len();
        if n == 0 {
            return Err(PolyError::ZeroDimension);
        }
        let m = sigma[0].len();
        if m == 0 || sigma.iter().any(|row| row.len() != m) {
            return Err(PolyError::DimensionMismatch {
                expected: m.max(1),
                found: sigma.iter().map(|r| r.len()).find(|&l| l != m).unwrap_or(0),
            });
        }
        let mut d = vec![vec![Rational::new(); n]; n];
        for i in 0..n {
            for j in 0..=i {
                let mut acc = Rational::new();
                for k in 0..m {
                    acc += Rational::from(&sigma[i][k] * &sigma[j][k]);
                }
                d[i][j] = acc.clone();
                d[j][i] = acc;
            }
        }
        Ok(DiffusionMatrix { sigma, d })
    }

    /// Identity diffusion in dimension `n`.
    pub fn identity(n: usize) -> Self {
        let sigma: Vec<Vec<Rational>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| Rational::from(i32::from(i == j)))
                    .collect()
            })
            .collect();
        Self::from_sigma(sigma).expect("identity factor is well formed")
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn noise_dim(&self) -> usize {
        self.sigma[0].len()
    }

    pub fn sigma(&self) -> &[Vec<Rational>] {
        &self.sigma
    }

    pub fn entry(&self, i: usize, j: usize) -> &Rational {
        &self.d[i][j]
    }
}

/// Lie derivative `f . grad(V) = sum_i f_i dV/dx_i`.
pub fn lie_derivative<C: Coeff>(
    f: &[Polynomial<C>],
    v: &Polynomial<C>,
) -> Result<Polynomial<C>, PolyError> {
    if f.len() != v.dim() {
        return Err(PolyError::DimensionMismatch {
            expected: v.dim(),
            found: f.len(),
        });
    }
    let mut out = Polynomial::zero(v.dim());
    for (i, fi) in f.iter().enumerate() {
        if fi.dim() != v.dim() {
            return Err(PolyError::DimensionMismatch {
                expected: v.dim(),
                found: fi.dim(),
            });
        }
        out = out.add(&fi.mul(&v.partial(i)));
    }
    Ok(out)
}

/// Diffusion operator `div(D grad V) = sum_ij D_ij d^2 V / dx_i dx_j` for a
/// constant matrix `D`.
pub fn diffusion_term(d: &DiffusionMatrix, v: &RatPoly) -> Result<RatPoly, PolyError> {
    if d.dim() != v.dim() {
        return Err(PolyError::DimensionMismatch {
            expected: v.dim(),
            found: d.dim(),
        });
    }
    let n = v.dim();
    let mut out = RatPoly::zero(n);
    for i in 0..n {
        let vi = v.partial(i);
        if vi.is_zero() {
            continue;
        }
        for j in 0..n {
            let dij = d.entry(i, j);
            if Coeff::is_zero(dij) {
                continue;
            }
            out = out.add(&vi.partial(j).scale(dij));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars2() -> Vec<String> {
        vec!["x".into(), "y".into()]
    }

    fn p(text: &str) -> RatPoly {
        parse(text, &vars2()).unwrap()
    }

    #[test]
    fn grlex_order() {
        let x2 = Monomial::new(vec![2, 0]);
        let xy = Monomial::new(vec![1, 1]);
        let y2 = Monomial::new(vec![0, 2]);
        let x = Monomial::new(vec![1, 0]);
        assert!(x2 > xy && xy > y2 && y2 > x);
    }

    #[test]
    fn canonical_form_drops_zeros() {
        let q = p("x + y").sub(&p("x"));
        assert_eq!(q, p("y"));
        assert_eq!(q.num_terms(), 1);
        assert!(p("x").sub(&p("x")).is_zero());
    }

    #[test]
    fn lie_derivative_rotation_conserves_radius() {
        let f = vec![p("y"), p("0 - x")];
        let v = p("x^2 + y^2");
        assert!(lie_derivative(&f, &v).unwrap().is_zero());
    }

    #[test]
    fn lie_derivative_van_der_pol() {
        // f = (y, (1 - x^2) y - x), V = x^2 + y^2 -> 2 y^2 - 2 x^2 y^2
        let f = vec![p("y"), p("(1 - x^2)*y - x")];
        let v = p("x^2 + y^2");
        assert_eq!(lie_derivative(&f, &v).unwrap(), p("2*y^2 - 2*x^2*y^2"));
    }

    #[test]
    fn lie_derivative_of_constant_is_zero() {
        let f = vec![p("x^2 + y"), p("x*y - 3")];
        assert!(lie_derivative(&f, &p("5")).unwrap().is_zero());
    }

    #[test]
    fn diffusion_identity_is_laplacian() {
        let d = DiffusionMatrix::identity(2);
        assert_eq!(diffusion_term(&d, &p("x^2 + y^2")).unwrap(), p("4"));
    }

    #[test]
    fn diffusion_single_axis() {
        // sigma = (0, 1)^T so D = [[0,0],[0,1]]; only d^2/dy^2 survives.
        let sigma = vec![vec![Rational::from(0)], vec![Rational::from(1)]];
        let d = DiffusionMatrix::from_sigma(sigma).unwrap();
        assert_eq!(diffusion_term(&d, &p("x^2 + y^2")).unwrap(), p("2"));
        assert_eq!(*d.entry(0, 0), Rational::from(0));
        assert_eq!(*d.entry(1, 1), Rational::from(1));
    }

    #[test]
    fn diffusion_of_linear_vanishes() {
        let d = DiffusionMatrix::identity(2);
        assert!(diffusion_term(&d, &p("3*x - 2*y + 1")).unwrap().is_zero());
    }

    #[test]
    fn evaluate_examples() {
        let q = p("x^2 + y^2");
        let pt = vec![Rational::from(1), Rational::from(2)];
        assert_eq!(q.evaluate(&pt).unwrap(), Rational::from(5));
        let origin = vec![Rational::new(), Rational::new()];
        assert_eq!(
            p("x*y + 7").evaluate(&origin).unwrap(),
            Rational::from(7)
        );
        assert!(q.evaluate(&[Rational::from(1)]).is_err());
    }

    #[test]
    fn display_round_trips() {
        let q = p("2*x^2*y - x + 3/4");
        let s = q.to_string_with(&vars2());
        assert_eq!(parse(&s, &vars2()).unwrap(), q);
        assert_eq!(RatPoly::zero(2).to_string_with(&vars2()), "0");
        let neg = p("0 - x^2");
        let s2 = neg.to_string_with(&vars2());
        assert_eq!(parse(&s2, &vars2()).unwrap(), neg);
    }

    #[test]
    fn float_poly_arithmetic() {
        let q = p("x^2 - 1/3").to_float(192);
        let prod = q.mul(&q);
        let back = prod.to_rational();
        // (x^2 - r)^2 expands with the rounded r, still exactly representable.
        assert_eq!(back.coeff(&Monomial::new(vec![4, 0])), Rational::from(1));
        assert!(back.coeff(&Monomial::unit(2)) > Rational::from(0));
    }
}
