//! Sum-of-squares constraint compilation.
//!
//! Bounding programs are polynomials whose coefficients are affine in a set
//! of decision variables (bound values, storage-function coefficients,
//! S-procedure multipliers, the boundary-layer weight alpha). Each "body is
//! a sum of squares" constraint becomes one PSD Gram block plus one linear
//! equality per monomial in the product closure of its basis.

mod compile;
mod newton;

pub use compile::{compile, reconstruct_body, CompiledSos, GramBlockInfo, LmiConstraint, ObjectiveSpec};
pub use newton::newton_prune;

use std::collections::BTreeMap;
use std::fmt;

use rug::Rational;
use thiserror::Error;

use crate::poly::{Monomial, PolyError, RatPoly};
use crate::Coeff;

#[derive(Debug, Error)]
pub enum SoscError {
    #[error("constraint `{constraint}`: body has odd maximal degree {degree}, cannot be a sum of squares")]
    OddDegreeBody { constraint: String, degree: u32 },
    #[error("constraint `{constraint}`: monomial {monomial} is not a product of two basis monomials")]
    Uncoverable {
        constraint: String,
        monomial: String,
    },
    #[error("program has no objective variable")]
    EmptyObjective,
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Identifier of a decision variable, unique within one [`ProgramBuilder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    BoundUpper,
    BoundLower,
    StorageCoeff,
    MultiplierCoeff,
    Alpha,
}

#[derive(Debug, Clone)]
pub struct DecisionVar {
    pub id: VarId,
    pub name: String,
    pub kind: VarKind,
}

/// Per-program registry of decision variables. Ids are issued from an
/// explicit counter so independent programs never share state.
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    vars: Vec<DecisionVar>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn new_var(&mut self, name: impl Into<String>, kind: VarKind) -> VarId {
        let id = VarId(self.vars.len() as u32);
        self.vars.push(DecisionVar {
            id,
            name: name.into(),
            kind,
        });
        id
    }

    pub fn vars(&self) -> &[DecisionVar] {
        &self.vars
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn name_of(&self, id: VarId) -> &str {
        &self.vars[id.0 as usize].name
    }
}

/// `constant + sum weight_v * var_v` with exact rational weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    constant: Rational,
    terms: BTreeMap<VarId, Rational>,
}

impl AffineExpr {
    pub fn zero() -> Self {
        AffineExpr {
            constant: Rational::new(),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(c: Rational) -> Self {
        AffineExpr {
            constant: c,
            terms: BTreeMap::new(),
        }
    }

    pub fn var(v: VarId) -> Self {
        Self::scaled_var(v, Rational::from(1))
    }

    pub fn scaled_var(v: VarId, w: Rational) -> Self {
        let mut terms = BTreeMap::new();
        if w != 0 {
            terms.insert(v, w);
        }
        AffineExpr {
            constant: Rational::new(),
            terms,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0 && self.terms.is_empty()
    }

    pub fn constant_part(&self) -> &Rational {
        &self.constant
    }

    pub fn terms(&self) -> impl Iterator<Item = (&VarId, &Rational)> {
        self.terms.iter()
    }

    pub fn add_assign(&mut self, other: &AffineExpr) {
        self.constant += &other.constant;
        for (v, w) in &other.terms {
            let entry = self.terms.entry(*v).or_insert_with(Rational::new);
            *entry += w;
            if *entry == 0 {
                self.terms.remove(v);
            }
        }
    }

    pub fn neg(&self) -> AffineExpr {
        AffineExpr {
            constant: (-&self.constant).into(),
            terms: self
                .terms
                .iter()
                .map(|(v, w)| (*v, Rational::from(-w)))
                .collect(),
        }
    }

    pub fn scale(&self, k: &Rational) -> AffineExpr {
        if *k == 0 {
            return AffineExpr::zero();
        }
        AffineExpr {
            constant: Rational::from(&self.constant * k),
            terms: self
                .terms
                .iter()
                .map(|(v, w)| (*v, Rational::from(w * k)))
                .collect(),
        }
    }

    /// Evaluates given a full assignment of decision values.
    pub fn substitute(&self, values: &BTreeMap<VarId, Rational>) -> Rational {
        let mut acc = self.constant.clone();
        for (v, w) in &self.terms {
            let val = values.get(v).cloned().unwrap_or_default();
            acc += Rational::from(w * &val);
        }
        acc
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.constant)?;
        for (v, w) in &self.terms {
            write!(f, " + {}*d{}", w, v.0)?;
        }
        Ok(())
    }
}

/// Polynomial whose coefficients are affine expressions in decision
/// variables. Canonical form: no stored zero coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePolynomial {
    dim: usize,
    terms: BTreeMap<Monomial, AffineExpr>,
}

impl AffinePolynomial {
    pub fn zero(dim: usize) -> Self {
        AffinePolynomial {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn from_poly(p: &RatPoly) -> Self {
        let mut out = Self::zero(p.dim());
        for (m, c) in p.terms() {
            out.terms.insert(m.clone(), AffineExpr::constant(c.clone()));
        }
        out
    }

    /// `poly * var`: every coefficient of `poly` becomes a pure decision
    /// term on `var`.
    pub fn poly_times_var(p: &RatPoly, v: VarId) -> Self {
        let mut out = Self::zero(p.dim());
        for (m, c) in p.terms() {
            out.terms
                .insert(m.clone(), AffineExpr::scaled_var(v, c.clone()));
        }
        out
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

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &AffineExpr)> {
        self.terms.iter()
    }

    pub fn support(&self) -> impl Iterator<Item = &Monomial> {
        self.terms.keys()
    }

    pub fn coeff(&self, m: &Monomial) -> AffineExpr {
        self.terms.get(m).cloned().unwrap_or_else(AffineExpr::zero)
    }

    /// Maximal total degree; `None` when zero.
    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(Monomial::degree).max()
    }

    pub fn add_term(&mut self, m: &Monomial, e: &AffineExpr) {
        if e.is_zero() {
            return;
        }
        match self.terms.get_mut(m) {
            Some(existing) => {
                existing.add_assign(e);
                if existing.is_zero() {
                    self.terms.remove(m);
                }
            }
            None => {
                self.terms.insert(m.clone(), e.clone());
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (m, e) in &other.terms {
            out.add_term(m, e);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        AffinePolynomial {
            dim: self.dim,
            terms: self.terms.iter().map(|(m, e)| (m.clone(), e.neg())).collect(),
        }
    }

    /// Multiplies by a numeric polynomial (the result stays affine).
    pub fn mul_poly(&self, p: &RatPoly) -> Self {
        assert_eq!(self.dim, p.dim());
        let mut out = Self::zero(self.dim);
        for (ma, ea) in &self.terms {
            for (mb, cb) in p.terms() {
                out.add_term(&ma.mul(mb), &ea.scale(cb));
            }
        }
        out
    }

    pub fn scale(&self, k: &Rational) -> Self {
        if *k == 0 {
            return Self::zero(self.dim);
        }
        AffinePolynomial {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .map(|(m, e)| (m.clone(), e.scale(k)))
                .collect(),
        }
    }

    /// Partial derivative with respect to variable `i`.
    pub fn partial(&self, i: usize) -> Self {
        let mut out = Self::zero(self.dim);
        for (m, e) in &self.terms {
            let exp = m.exp(i);
            if exp == 0 {
                continue;
            }
            let mut exps = m.exps().to_vec();
            exps[i] = exp - 1;
            out.add_term(
                &Monomial::new(exps),
                &e.scale(&Rational::from(exp)),
            );
        }
        out
    }

    /// Substitutes numeric values for all decision variables.
    pub fn substitute(&self, values: &BTreeMap<VarId, Rational>) -> RatPoly {
        let mut out = RatPoly::zero(self.dim);
        for (m, e) in &self.terms {
            out.add_term(m, &e.substitute(values));
        }
        out
    }
}

/// Lie derivative `f . grad(V)` for an affine storage ansatz.
pub fn lie_derivative_affine(f: &[RatPoly], v: &AffinePolynomial) -> AffinePolynomial {
    assert_eq!(f.len(), v.dim());
    let mut out = AffinePolynomial::zero(v.dim());
    for (i, fi) in f.iter().enumerate() {
        out = out.add(&v.partial(i).mul_poly(fi));
    }
    out
}

/// Diffusion operator `div(D grad V)` for an affine ansatz and constant `D`.
pub fn diffusion_term_affine(
    d: &crate::poly::DiffusionMatrix,
    v: &AffinePolynomial,
) -> AffinePolynomial {
    assert_eq!(d.dim(), v.dim());
    let n = v.dim();
    let mut out = AffinePolynomial::zero(n);
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
    out
}

/// Enumerates all monomials of total degree `min_deg..=max_deg` in
/// graded-lexicographic order.
pub fn monomials_up_to(dim: usize, min_deg: u32, max_deg: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    let mut exps = vec![0u32; dim];
    fn rec(out: &mut Vec<Monomial>, exps: &mut Vec<u32>, pos: usize, remaining: u32) {
        if pos + 1 == exps.len() {
            exps[pos] = remaining;
            out.push(Monomial::new(exps.clone()));
            return;
        }
        // Highest exponent on the earliest variable first matches the
        // descending-lex tie break within a degree.
        for e in (0..=remaining).rev() {
            exps[pos] = e;
            rec(out, exps, pos + 1, remaining - e);
        }
    }
    for deg in min_deg..=max_deg {
        let mut level = Vec::new();
        rec(&mut level, &mut exps, 0, deg);
        level.reverse(); // ascending within the degree level
        out.extend(level);
    }
    out
}

/// Full polynomial ansatz of total degree <= `degree` with one fresh
/// decision variable per monomial. The constant monomial is omitted:
/// storage functions only enter through derivatives, and dropping it
/// removes a null direction from the SDP.
pub fn make_storage_ansatz(
    builder: &mut ProgramBuilder,
    dim: usize,
    degree: u32,
    prefix: &str,
) -> AffinePolynomial {
    make_ansatz(builder, dim, 1, degree, prefix, VarKind::StorageCoeff)
}

/// Polynomial ansatz including the constant term (S-procedure multipliers).
pub fn make_multiplier_ansatz(
    builder: &mut ProgramBuilder,
    dim: usize,
    degree: u32,
    prefix: &str,
) -> AffinePolynomial {
    make_ansatz(builder, dim, 0, degree, prefix, VarKind::MultiplierCoeff)
}

fn make_ansatz(
    builder: &mut ProgramBuilder,
    dim: usize,
    min_deg: u32,
    degree: u32,
    prefix: &str,
    kind: VarKind,
) -> AffinePolynomial {
    let mut out = AffinePolynomial::zero(dim);
    for m in monomials_up_to(dim, min_deg, degree) {
        let exps: Vec<String> = m.exps().iter().map(|e| e.to_string()).collect();
        let v = builder.new_var(format!("{prefix}[{}]", exps.join(",")), kind);
        out.add_term(&m, &AffineExpr::var(v));
    }
    out
}

/// Ordered monomial basis for one Gram block.
#[derive(Debug, Clone, PartialEq)]
pub struct GramBasis {
    pub monomials: Vec<Monomial>,
}

impl GramBasis {
    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }
}

/// Computes the Gram basis for `body`: all monomials of total degree at most
/// half the body's maximal degree, optionally pruned by the Newton-polytope
/// half rule (keep `z` only if `2 exps(z)` lies in the convex hull of the
/// body's support exponents).
pub fn gram_basis_for(
    body: &AffinePolynomial,
    name: &str,
    prune: bool,
) -> Result<GramBasis, SoscError> {
    let max_deg = body.degree().unwrap_or(0);
    if max_deg % 2 != 0 {
        return Err(SoscError::OddDegreeBody {
            constraint: name.to_string(),
            degree: max_deg,
        });
    }
    let half = max_deg / 2;
    let candidates = monomials_up_to(body.dim(), 0, half);
    let monomials = if prune {
        let support: Vec<&Monomial> = body.support().collect();
        newton_prune(&support, candidates)
    } else {
        candidates
    };
    Ok(GramBasis { monomials })
}

/// One "body is a sum of squares" constraint awaiting compilation.
#[derive(Debug, Clone)]
pub struct SosConstraint {
    pub name: String,
    pub body: AffinePolynomial,
    pub basis: GramBasis,
}

impl SosConstraint {
    pub fn new(name: impl Into<String>, body: AffinePolynomial, prune: bool) -> Result<Self, SoscError> {
        let name = name.into();
        let basis = gram_basis_for(&body, &name, prune)?;
        Ok(SosConstraint { name, body, basis })
    }
}

/// Generalized S-procedure step: restricting `body >= 0` to the set
/// `{g >= 0}` is relaxed to `body - s g` being SoS together with `s` SoS,
/// for a fresh multiplier ansatz `s` of degree <= `multiplier_degree`.
///
/// Returns the relaxed body and the multiplier (as an affine polynomial to
/// be wrapped into its own constraint).
pub fn s_procedure(
    builder: &mut ProgramBuilder,
    body: &AffinePolynomial,
    g: &RatPoly,
    multiplier_degree: u32,
    prefix: &str,
) -> (AffinePolynomial, AffinePolynomial) {
    let s = make_multiplier_ansatz(builder, body.dim(), multiplier_degree, prefix);
    let relaxed = body.sub(&s.mul_poly(g));
    (relaxed, s)
}
