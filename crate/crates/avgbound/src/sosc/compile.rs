//! Compilation of SoS constraints into a standard-form SDP.
//!
//! Each constraint contributes one PSD Gram block `Q` and one linear
//! equality per distinct monomial in the product closure `{z_i z_j}` of its
//! basis: the Gram entries summing to that monomial must match the affine
//! coefficient of the monomial in the body. Decision variables become free
//! scalars of the SDP. Compilation is deterministic: identical inputs
//! produce identical problems.

use std::collections::BTreeMap;

use rug::Rational;

use super::{AffinePolynomial, GramBasis, ProgramBuilder, SosConstraint, SoscError, VarId};
use crate::linalg::FloatMat;
use crate::poly::Monomial;
use crate::scalar::float_to_rat;
use crate::sdp::{LinearEq, Objective, SdpProblem, SdpSolution, Sense};

/// A side constraint `M(d) >= 0` for a symmetric matrix whose entries are
/// affine in the decision variables (strict inequalities are shifted by the
/// caller, e.g. `M - delta I >= 0`). Entries are given as the lower
/// triangle, row by row.
#[derive(Debug, Clone)]
pub struct LmiConstraint {
    pub name: String,
    pub lower_entries: Vec<Vec<super::AffineExpr>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveSpec {
    MaximizeVar(VarId),
    MinimizeVar(VarId),
    Feasibility,
}

/// Mapping from one compiled SoS constraint back to its SDP block.
#[derive(Debug, Clone)]
pub struct GramBlockInfo {
    pub name: String,
    pub block_index: usize,
    pub basis: GramBasis,
    pub body: AffinePolynomial,
}

/// A compiled program: the SDP plus enough structure to map a solution back
/// to Gram matrices and decision values. Decision variable `VarId(k)` is
/// free scalar `k`.
#[derive(Debug, Clone)]
pub struct CompiledSos {
    pub problem: SdpProblem,
    pub gram_blocks: Vec<GramBlockInfo>,
    pub num_decision_vars: usize,
    /// Free index of the margin variable, when one has been added.
    pub margin_index: Option<usize>,
}

impl CompiledSos {
    /// Turns the program into a strict-feasibility margin problem
    /// (`maximize t` with every PSD block shifted by `-t I`).
    pub fn with_margin(mut self) -> CompiledSos {
        let t = self.problem.add_margin_variable();
        self.margin_index = Some(t);
        self
    }

    /// Gram matrix of constraint `k`, undoing the margin shift if present.
    pub fn gram_matrix(&self, solution: &SdpSolution, k: usize) -> FloatMat {
        let info = &self.gram_blocks[k];
        let mut q = solution.blocks[info.block_index].clone();
        if let Some(t) = self.margin_index {
            let tval = &solution.free_values[t];
            for i in 0..q.rows() {
                *q.at_mut(i, i) += tval;
            }
        }
        q
    }

    /// Exact rational values of all decision variables.
    pub fn decision_values(&self, solution: &SdpSolution) -> BTreeMap<VarId, Rational> {
        (0..self.num_decision_vars)
            .map(|k| (VarId(k as u32), float_to_rat(&solution.free_values[k])))
            .collect()
    }

    /// Margin value (how far inside the PSD cone the solution sits).
    pub fn margin_value(&self, solution: &SdpSolution) -> Option<Rational> {
        self.margin_index
            .map(|t| float_to_rat(&solution.free_values[t]))
    }
}

/// Compiles SoS constraints, LMI side constraints, and an objective over the
/// decision variables of `builder` into a standard-form SDP.
pub fn compile(
    builder: &ProgramBuilder,
    constraints: &[SosConstraint],
    lmis: &[LmiConstraint],
    objective: ObjectiveSpec,
) -> Result<CompiledSos, SoscError> {
    let nvars = builder.len();
    let mut problem = SdpProblem {
        blocks: Vec::new(),
        free_vars: nvars,
        equalities: Vec::new(),
        objective: match objective {
            ObjectiveSpec::MaximizeVar(v) => Objective::single_free(Sense::Maximize, v.0 as usize),
            ObjectiveSpec::MinimizeVar(v) => Objective::single_free(Sense::Minimize, v.0 as usize),
            ObjectiveSpec::Feasibility => Objective::feasibility(),
        },
    };
    if let ObjectiveSpec::MaximizeVar(v) | ObjectiveSpec::MinimizeVar(v) = objective {
        if (v.0 as usize) >= nvars {
            return Err(SoscError::EmptyObjective);
        }
    }
    let mut gram_blocks = Vec::new();

    for cons in constraints {
        let block_index = problem.blocks.len();
        let m = cons.basis.len();
        problem.blocks.push(m);

        // Product closure: monomial -> lower-triangle Gram positions.
        let mut products: BTreeMap<Monomial, Vec<(usize, usize)>> = BTreeMap::new();
        for i in 0..m {
            for j in 0..=i {
                let mono = cons.basis.monomials[i].mul(&cons.basis.monomials[j]);
                products.entry(mono).or_default().push((i, j));
            }
        }
        // Body monomials outside the product closure: a fixed nonzero
        // coefficient is proof the body cannot be SoS (fail fast); an
        // affine coefficient is forced to vanish by a linear equality on
        // the decision variables alone.
        for (mono, coeff) in cons.body.terms() {
            if !products.contains_key(mono) {
                if coeff.terms().next().is_none() {
                    return Err(SoscError::Uncoverable {
                        constraint: cons.name.clone(),
                        monomial: format!("{mono:?}", mono = mono.exps()),
                    });
                }
                let mut eq = LinearEq {
                    block_terms: Vec::new(),
                    free_terms: Vec::new(),
                    rhs: coeff.constant_part().clone(),
                };
                for (v, w) in coeff.terms() {
                    eq.free_terms.push((v.0 as usize, Rational::from(-w)));
                }
                problem.equalities.push(eq);
            }
        }
        for (mono, pairs) in products {
            let coeff = cons.body.coeff(&mono);
            let mut eq = LinearEq {
                block_terms: pairs
                    .into_iter()
                    .map(|(i, j)| (block_index, i, j, Rational::from(1)))
                    .collect(),
                free_terms: Vec::new(),
                rhs: coeff.constant_part().clone(),
            };
            for (v, w) in coeff.terms() {
                eq.free_terms.push((v.0 as usize, Rational::from(-w)));
            }
            problem.equalities.push(eq);
        }
        gram_blocks.push(GramBlockInfo {
            name: cons.name.clone(),
            block_index,
            basis: cons.basis.clone(),
            body: cons.body.clone(),
        });
    }

    for lmi in lmis {
        let d = lmi.lower_entries.len();
        let block_index = problem.blocks.len();
        problem.blocks.push(d);
        for i in 0..d {
            assert_eq!(lmi.lower_entries[i].len(), i + 1, "lower triangle rows");
            for j in 0..=i {
                let entry = &lmi.lower_entries[i][j];
                // S_ij = entry(d): with the symmetric-pair convention an
                // off-diagonal coefficient of 1/2 reads off S_ij exactly.
                let c = if i == j {
                    Rational::from(1)
                } else {
                    Rational::from((1, 2))
                };
                let mut eq = LinearEq {
                    block_terms: vec![(block_index, i, j, c)],
                    free_terms: Vec::new(),
                    rhs: entry.constant_part().clone(),
                };
                for (v, w) in entry.terms() {
                    eq.free_terms.push((v.0 as usize, Rational::from(-w)));
                }
                problem.equalities.push(eq);
            }
        }
    }

    Ok(CompiledSos {
        problem,
        gram_blocks,
        num_decision_vars: nvars,
        margin_index: None,
    })
}

/// Reconstructs `z^T Q z` exactly from a rational Gram matrix, for
/// round-trip checks against the body.
pub fn reconstruct_body(basis: &GramBasis, q: &[Vec<Rational>]) -> crate::poly::RatPoly {
    let dim = basis.monomials.first().map(|m| m.dim()).unwrap_or(1);
    let mut out = crate::poly::RatPoly::zero(dim);
    for i in 0..basis.len() {
        for j in 0..basis.len() {
            let mono = basis.monomials[i].mul(&basis.monomials[j]);
            out.add_term(&mono, &q[i][j]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::parse;
    use crate::sosc::{AffineExpr, VarKind};

    fn vars2() -> Vec<String> {
        vec!["x".into(), "y".into()]
    }

    #[test]
    fn single_square_compiles_to_one_block_three_equalities() {
        let builder = ProgramBuilder::new();
        let body =
            AffinePolynomial::from_poly(&parse("x^2 + 2*x*y + y^2", &vars2()).unwrap());
        let cons = SosConstraint::new("sq", body, true).unwrap();
        let compiled = compile(&builder, &[cons], &[], ObjectiveSpec::Feasibility).unwrap();
        assert_eq!(compiled.problem.blocks, vec![2]);
        assert_eq!(compiled.problem.num_equalities(), 3);
        assert_eq!(compiled.problem.free_vars, 0);
    }

    #[test]
    fn compilation_is_deterministic() {
        let mut b1 = ProgramBuilder::new();
        let mut b2 = ProgramBuilder::new();
        let mk = |b: &mut ProgramBuilder| {
            let l = b.new_var("L", VarKind::BoundLower);
            let phi = parse("x^2 + y^2", &vars2()).unwrap();
            let mut body = AffinePolynomial::from_poly(&phi);
            body.add_term(
                &Monomial::unit(2),
                &AffineExpr::scaled_var(l, Rational::from(-1)),
            );
            SosConstraint::new("lb", body, true).unwrap()
        };
        let c1 = mk(&mut b1);
        let c2 = mk(&mut b2);
        let p1 = compile(&b1, &[c1], &[], ObjectiveSpec::MaximizeVar(VarId(0))).unwrap();
        let p2 = compile(&b2, &[c2], &[], ObjectiveSpec::MaximizeVar(VarId(0))).unwrap();
        assert_eq!(p1.problem, p2.problem);
        assert_eq!(
            crate::sdp::problem_to_text(&p1.problem),
            crate::sdp::problem_to_text(&p2.problem)
        );
    }

    #[test]
    fn uncoverable_monomial_is_reported() {
        // x^2 + y with pruning: basis keeps only x, so the monomial y is
        // uncoverable (and indeed x^2 + y is not SoS).
        let builder = ProgramBuilder::new();
        let body = AffinePolynomial::from_poly(&parse("x^2 + y", &vars2()).unwrap());
        let cons = SosConstraint::new("bad", body, true).unwrap();
        match compile(&builder, &[cons], &[], ObjectiveSpec::Feasibility) {
            Err(SoscError::Uncoverable { monomial, .. }) => {
                assert!(monomial.contains('1'), "{monomial}");
            }
            other => panic!("expected uncoverable, got {other:?}"),
        }
    }

    #[test]
    fn lmi_entries_become_equalities() {
        let mut b = ProgramBuilder::new();
        let a = b.new_var("a", VarKind::Alpha);
        // M = [[a, 1], [1, a]] >= 0.
        let lmi = LmiConstraint {
            name: "side".into(),
            lower_entries: vec![
                vec![AffineExpr::var(a)],
                vec![AffineExpr::constant(Rational::from(1)), AffineExpr::var(a)],
            ],
        };
        let compiled = compile(&b, &[], &[lmi], ObjectiveSpec::MinimizeVar(a)).unwrap();
        assert_eq!(compiled.problem.blocks, vec![2]);
        assert_eq!(compiled.problem.num_equalities(), 3);
        let sol = crate::sdp::solve(
            &compiled.problem,
            &crate::sdp::SolverSettings::with_prec(128),
        )
        .unwrap();
        assert_eq!(sol.status, crate::sdp::SolveStatus::Optimal);
        // min a s.t. [[a,1],[1,a]] PSD is a = 1.
        assert!((sol.objective.to_f64() - 1.0).abs() < 1e-9);
    }
}
