//! SoS compilation + SDP solver integration: hand-checkable optima,
//! classical infeasibility, pruning equivalence, and synthetic recovery.

use std::collections::BTreeMap;

use avgbound::poly::{parse, Monomial, RatPoly};
use avgbound::sdp::{
    solve, LinearEq, Objective, SdpProblem, Sense, SolveStatus, SolverSettings,
};
use avgbound::sosc::{
    compile, reconstruct_body, AffineExpr, AffinePolynomial, ObjectiveSpec, ProgramBuilder,
    SosConstraint, VarId, VarKind,
};
use avgbound::{Coeff, Rational};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn vars2() -> Vec<String> {
    vec!["x".into(), "y".into()]
}

fn settings() -> SolverSettings {
    SolverSettings::with_prec(128)
}

/// max L s.t. x^2 + y^2 - L is SoS -> L* = 0 (the minimum of x^2 + y^2).
#[test]
fn radius_minimum_is_zero() {
    let mut b = ProgramBuilder::new();
    let l = b.new_var("L", VarKind::BoundLower);
    let mut body = AffinePolynomial::from_poly(&parse("x^2 + y^2", &vars2()).unwrap());
    body.add_term(
        &Monomial::unit(2),
        &AffineExpr::scaled_var(l, Rational::from(-1)),
    );
    let cons = SosConstraint::new("lb", body, true).unwrap();
    let compiled = compile(&b, &[cons], &[], ObjectiveSpec::MaximizeVar(l)).unwrap();
    let sol = solve(&compiled.problem, &settings()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(sol.objective.clone().abs().to_f64() < 1e-10);
}

/// The S-procedure hand example: max L s.t.
/// (x^2 + y^2 - L) - c (x^2 + y^2 - 1) SoS and c SoS (degree 0). The optimum
/// is L = 1 at c = 1.
#[test]
fn s_procedure_unit_circle_bound() {
    let mut b = ProgramBuilder::new();
    let l = b.new_var("L", VarKind::BoundLower);
    let mut body = AffinePolynomial::from_poly(&parse("x^2 + y^2", &vars2()).unwrap());
    body.add_term(
        &Monomial::unit(2),
        &AffineExpr::scaled_var(l, Rational::from(-1)),
    );
    let g = parse("x^2 + y^2 - 1", &vars2()).unwrap();
    let (relaxed, s) = avgbound::sosc::s_procedure(&mut b, &body, &g, 0, "s");
    let c_main = SosConstraint::new("main", relaxed, true).unwrap();
    let c_mult = SosConstraint::new("mult", s, true).unwrap();
    let compiled = compile(&b, &[c_main, c_mult], &[], ObjectiveSpec::MaximizeVar(l)).unwrap();
    let sol = solve(&compiled.problem, &settings()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(
        (sol.objective.to_f64() - 1.0).abs() < 1e-9,
        "L* = {}",
        sol.objective.to_f64()
    );
    // Multiplier value c = 1 at the optimum.
    let values = compiled.decision_values(&sol);
    let c_id = b.vars().iter().find(|v| v.name.starts_with("s[")).unwrap().id;
    assert!((values[&c_id].to_f64() - 1.0).abs() < 1e-6);
}

/// The Motzkin polynomial is nonnegative but not a sum of squares; the
/// compiled feasibility SDP must be infeasible.
#[test]
fn motzkin_is_not_sos() {
    let b = ProgramBuilder::new();
    let motzkin = parse("x^4*y^2 + x^2*y^4 - 3*x^2*y^2 + 1", &vars2()).unwrap();
    let cons = SosConstraint::new("motzkin", AffinePolynomial::from_poly(&motzkin), true).unwrap();
    let compiled = compile(&b, &[cons], &[], ObjectiveSpec::Feasibility).unwrap();
    let sol = solve(&compiled.problem, &settings()).unwrap();
    assert_eq!(sol.status, SolveStatus::PrimalInfeasible);
}

fn random_poly(rng: &mut StdRng, dim: usize, deg: u32, terms: usize) -> RatPoly {
    let monos = avgbound::sosc::monomials_up_to(dim, 0, deg);
    let mut p = RatPoly::zero(dim);
    for _ in 0..terms {
        let m = &monos[rng.random_range(0..monos.len())];
        let c = Rational::from((rng.random_range(-9i64..=9), rng.random_range(1i64..=4)));
        p.add_term(m, &c);
    }
    p
}

/// Sums of random squares are SoS-feasible; the margin formulation solves
/// them and the Gram matrix reconstructs the body within solver tolerance.
#[test]
fn constructed_squares_are_feasible() {
    let mut rng = StdRng::seed_from_u64(7);
    let mut checked_reconstruction = false;
    for trial in 0..50 {
        let k = rng.random_range(1..=3);
        let mut body = RatPoly::zero(2);
        for _ in 0..k {
            let q = random_poly(&mut rng, 2, 2, 3);
            body = body.add(&q.mul(&q));
        }
        if body.is_zero() {
            continue;
        }
        let b = ProgramBuilder::new();
        let cons =
            SosConstraint::new("sq", AffinePolynomial::from_poly(&body), true).unwrap();
        let basis = cons.basis.clone();
        let compiled = compile(&b, &[cons], &[], ObjectiveSpec::Feasibility)
            .unwrap()
            .with_margin();
        let sol = solve(&compiled.problem, &settings()).unwrap();
        assert_eq!(
            sol.status,
            SolveStatus::Optimal,
            "trial {trial}: SoS body reported {:?}",
            sol.status
        );
        let tval = compiled.margin_value(&sol).unwrap();
        assert!(
            tval.to_f64() > -1e-12,
            "trial {trial}: margin {} for a true SoS",
            tval.to_f64()
        );
        if trial % 10 == 0 {
            // Round-trip: z^T Q z must reproduce the body up to the
            // equality residual of the solve.
            let q = compiled.gram_matrix(&sol, 0);
            let qrat: Vec<Vec<Rational>> = (0..q.rows())
                .map(|i| (0..q.cols()).map(|j| avgbound::float_to_rat(q.at(i, j))).collect())
                .collect();
            let rebuilt = reconstruct_body(&basis, &qrat);
            let diff = rebuilt.sub(&body);
            let worst = diff
                .terms()
                .map(|(_, c)| c.to_f64().abs())
                .fold(0.0, f64::max);
            // Gram equalities hold to the solve tolerance (1e-12 relative).
            assert!(worst < 1e-10, "trial {trial}: reconstruction residual {worst}");
            checked_reconstruction = true;
        }
    }
    assert!(checked_reconstruction);
}

/// Newton-polytope pruning never changes feasibility: a corpus of SoS and
/// non-SoS polynomials compiled with and without pruning agrees.
#[test]
fn pruning_preserves_feasibility() {
    let mut rng = StdRng::seed_from_u64(99);
    let mut disagreements = Vec::new();
    let mut sos_count = 0;
    let mut non_sos_count = 0;
    for trial in 0..50 {
        let body = if trial % 2 == 0 {
            // Certainly SoS.
            let q1 = random_poly(&mut rng, 2, 2, 3);
            let q2 = random_poly(&mut rng, 2, 1, 2);
            q1.mul(&q1).add(&q2.mul(&q2))
        } else {
            // Random even-degree polynomial, frequently not SoS.
            let mut p = random_poly(&mut rng, 2, 4, 5);
            // Force even maximal degree by adding a quartic square term.
            p.add_term(&Monomial::new(vec![4, 0]), &Rational::from(1));
            p
        };
        if body.is_zero() {
            continue;
        }
        let feasible = |prune: bool| -> bool {
            let b = ProgramBuilder::new();
            let cons = match SosConstraint::new(
                "c",
                AffinePolynomial::from_poly(&body),
                prune,
            ) {
                Ok(c) => c,
                Err(_) => return false,
            };
            let compiled = match compile(&b, &[cons], &[], ObjectiveSpec::Feasibility) {
                Ok(c) => c.with_margin(),
                Err(_) => return false,
            };
            let sol = solve(&compiled.problem, &settings()).unwrap();
            match sol.status {
                SolveStatus::Optimal => compiled.margin_value(&sol).unwrap().to_f64() > -1e-12,
                _ => false,
            }
        };
        let with = feasible(true);
        let without = feasible(false);
        if with != without {
            disagreements.push(trial);
        }
        if with {
            sos_count += 1;
        } else {
            non_sos_count += 1;
        }
    }
    assert!(disagreements.is_empty(), "disagreements at {disagreements:?}");
    // The corpus must exercise both outcomes to be meaningful.
    assert!(sos_count >= 10, "sos cases: {sos_count}");
    assert!(non_sos_count >= 10, "non-sos cases: {non_sos_count}");
}

/// Synthetic strictly-feasible SDPs with known optimal values, constructed
/// by fixing complementary X* and S* and deriving b and c. The solver must
/// recover the objective to 1e-10 relative at 128-bit precision.
#[test]
fn recovers_synthetic_optima() {
    let mut rng = StdRng::seed_from_u64(2024);
    for trial in 0..20 {
        let n = rng.random_range(2..=4usize);
        let m = rng.random_range(1..=(n * (n + 1) / 2 - 1));
        let nf = rng.random_range(0..=2usize);
        // Random orthogonal-ish congruence from a random invertible P:
        // X* = P diag(pos, 0) P^T, S* = P^-T diag(0, pos) P^-1 ensures
        // X* S* = 0 with X*, S* PSD.
        // Simpler: diagonal complementary pair in a fixed basis.
        let split = rng.random_range(1..n);
        let mut xstar = vec![vec![Rational::new(); n]; n];
        let mut sstar = vec![vec![Rational::new(); n]; n];
        for i in 0..n {
            if i < split {
                xstar[i][i] = Rational::from(rng.random_range(1i64..=5));
            } else {
                sstar[i][i] = Rational::from(rng.random_range(1i64..=5));
            }
        }
        // Random equality matrices and free columns.
        let ystar: Vec<Rational> = (0..m)
            .map(|_| Rational::from(rng.random_range(-3i64..=3)))
            .collect();
        let ustar: Vec<Rational> = (0..nf)
            .map(|_| Rational::from(rng.random_range(-3i64..=3)))
            .collect();
        let mut a_mats = Vec::new();
        for _ in 0..m {
            let mut a = vec![vec![Rational::new(); n]; n];
            for i in 0..n {
                for j in 0..=i {
                    let v = Rational::from(rng.random_range(-3i64..=3));
                    a[i][j] = v.clone();
                    a[j][i] = v;
                }
            }
            a_mats.push(a);
        }
        let bcols: Vec<Vec<Rational>> = (0..nf)
            .map(|_| {
                (0..m)
                    .map(|_| Rational::from(rng.random_range(-2i64..=2)))
                    .collect()
            })
            .collect();
        // b_i = <A_i, X*> + sum_k B_ik u*_k.
        let mut rhs = Vec::new();
        for i in 0..m {
            let mut acc = Rational::new();
            for r in 0..n {
                for c in 0..n {
                    acc += Rational::from(&a_mats[i][r][c] * &xstar[r][c]);
                }
            }
            for k in 0..nf {
                acc += Rational::from(&bcols[k][i] * &ustar[k]);
            }
            rhs.push(acc);
        }
        // C = sum_i y*_i A_i + S*; c_f = B^T y*.
        let mut cmat = sstar.clone();
        for i in 0..m {
            for r in 0..n {
                for c in 0..n {
                    cmat[r][c] += Rational::from(&ystar[i] * &a_mats[i][r][c]);
                }
            }
        }
        let cf: Vec<Rational> = (0..nf)
            .map(|k| {
                let mut acc = Rational::new();
                for i in 0..m {
                    acc += Rational::from(&bcols[k][i] * &ystar[i]);
                }
                acc
            })
            .collect();
        // Optimal objective: <C, X*> + c_f . u*.
        let mut opt = Rational::new();
        for r in 0..n {
            for c in 0..n {
                opt += Rational::from(&cmat[r][c] * &xstar[r][c]);
            }
        }
        for k in 0..nf {
            opt += Rational::from(&cf[k] * &ustar[k]);
        }

        let equalities: Vec<LinearEq> = (0..m)
            .map(|i| LinearEq {
                block_terms: (0..n)
                    .flat_map(|r| (0..=r).map(move |c| (r, c)))
                    .filter(|&(r, c)| a_mats[i][r][c] != 0)
                    .map(|(r, c)| (0usize, r, c, a_mats[i][r][c].clone()))
                    .collect(),
                free_terms: (0..nf)
                    .filter(|&k| bcols[k][i] != 0)
                    .map(|k| (k, bcols[k][i].clone()))
                    .collect(),
                rhs: rhs[i].clone(),
            })
            .collect();
        let problem = SdpProblem {
            blocks: vec![n],
            free_vars: nf,
            equalities,
            objective: Objective {
                sense: Sense::Minimize,
                block_terms: (0..n)
                    .flat_map(|r| (0..=r).map(move |c| (r, c)))
                    .filter(|&(r, c)| cmat[r][c] != 0)
                    .map(|(r, c)| (0usize, r, c, cmat[r][c].clone()))
                    .collect(),
                free_terms: (0..nf)
                    .filter(|&k| cf[k] != 0)
                    .map(|k| (k, cf[k].clone()))
                    .collect(),
            },
        };
        let sol = solve(&problem, &settings()).unwrap();
        // Some random instances may be degenerate (dual unbounded because
        // the free columns are rank-deficient); those still solve, but we
        // only check optimal ones against the certificate pair.
        assert_eq!(
            sol.status,
            SolveStatus::Optimal,
            "trial {trial} status {:?}",
            sol.status
        );
        let opt_f = opt.to_f64();
        let got = sol.objective.to_f64();
        let rel = (got - opt_f).abs() / (1.0 + opt_f.abs());
        assert!(
            rel <= 1e-10,
            "trial {trial}: objective {got} vs constructed {opt_f} (rel {rel:.3e})"
        );
    }
}

/// Permuting equality rows leaves the objective unchanged within tolerance.
#[test]
fn row_permutation_invariance() {
    let mut b = ProgramBuilder::new();
    let l = b.new_var("L", VarKind::BoundLower);
    let mut body = AffinePolynomial::from_poly(
        &parse("x^4 + 3*x^2*y^2 + 2*y^4 + x^2 + y^2", &vars2()).unwrap(),
    );
    body.add_term(
        &Monomial::unit(2),
        &AffineExpr::scaled_var(l, Rational::from(-1)),
    );
    let cons = SosConstraint::new("lb", body, true).unwrap();
    let compiled = compile(&b, &[cons], &[], ObjectiveSpec::MaximizeVar(l)).unwrap();
    let sol1 = solve(&compiled.problem, &settings()).unwrap();
    let mut permuted = compiled.problem.clone();
    permuted.equalities.reverse();
    permuted.equalities.rotate_left(2);
    let sol2 = solve(&permuted, &settings()).unwrap();
    assert_eq!(sol1.status, SolveStatus::Optimal);
    assert_eq!(sol2.status, SolveStatus::Optimal);
    assert!((sol1.objective.to_f64() - sol2.objective.to_f64()).abs() < 1e-12);
}

/// Exact-assignment round trip: build a body from a known rational Gram
/// matrix; the compiled equalities are satisfied exactly by that matrix and
/// the reconstruction is the identity.
#[test]
fn exact_gram_round_trip() {
    let mut rng = StdRng::seed_from_u64(5);
    for _ in 0..5 {
        // Random PSD Q = G^T G over basis (1, x, y, x^2, xy, y^2).
        let dim = 6;
        let mut g = vec![vec![Rational::new(); dim]; dim];
        for row in g.iter_mut() {
            for v in row.iter_mut() {
                *v = Rational::from((rng.random_range(-2i64..=2), 1));
            }
        }
        let mut q = vec![vec![Rational::new(); dim]; dim];
        #[allow(clippy::needless_range_loop)]
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = Rational::new();
                for k in 0..dim {
                    acc += Rational::from(&g[k][i] * &g[k][j]);
                }
                q[i][j] = acc;
            }
        }
        let basis = avgbound::sosc::GramBasis {
            monomials: avgbound::sosc::monomials_up_to(2, 0, 2),
        };
        let body = reconstruct_body(&basis, &q);
        if body.is_zero() {
            continue;
        }
        let b = ProgramBuilder::new();
        let cons =
            SosConstraint::new("rt", AffinePolynomial::from_poly(&body), false).unwrap();
        let compiled = compile(&b, &[cons], &[], ObjectiveSpec::Feasibility).unwrap();
        // Q satisfies every equality exactly.
        for eq in &compiled.problem.equalities {
            let mut acc = Rational::new();
            for (_, i, j, c) in &eq.block_terms {
                let factor = if i == j { 1 } else { 2 };
                acc += Rational::from(&q[*i][*j] * c) * Rational::from(factor);
            }
            assert!(eq.free_terms.is_empty());
            assert_eq!(acc, eq.rhs, "equality violated by constructing Gram");
        }
    }
}

/// Feasibility margin objective: for the strictly positive polynomial
/// x^2 + y^2 + 1 on basis (1, x, y) the maximal t with Q - tI PSD is 1.
#[test]
fn margin_maximization_value() {
    let b = ProgramBuilder::new();
    let body = AffinePolynomial::from_poly(&parse("x^2 + y^2 + 1", &vars2()).unwrap());
    let cons = SosConstraint::new("pos", body, false).unwrap();
    let compiled = compile(&b, &[cons], &[], ObjectiveSpec::Feasibility)
        .unwrap()
        .with_margin();
    let sol = solve(&compiled.problem, &settings()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    // Q is forced diagonal (1,1,1) here, so max margin = 1.
    assert!((sol.objective.to_f64() - 1.0).abs() < 1e-9);
}

/// Decision-value extraction produces exact rationals that satisfy the
/// equalities they came from.
#[test]
fn decision_values_are_exact_floats() {
    let mut b = ProgramBuilder::new();
    let l = b.new_var("L", VarKind::BoundLower);
    let mut body = AffinePolynomial::from_poly(&parse("(x - y)^2 + 4", &vars2()).unwrap());
    body.add_term(
        &Monomial::unit(2),
        &AffineExpr::scaled_var(l, Rational::from(-1)),
    );
    let cons = SosConstraint::new("lb", body, false).unwrap();
    let compiled = compile(&b, &[cons], &[], ObjectiveSpec::MaximizeVar(l)).unwrap();
    let sol = solve(&compiled.problem, &settings()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.objective.to_f64() - 4.0).abs() < 1e-9);
    let values: BTreeMap<VarId, Rational> = compiled.decision_values(&sol);
    assert!((values[&l].to_f64() - 4.0).abs() < 1e-9);
}
