//! Scratch driver for inspecting solver behavior on small instances.

use avgbound::poly::RatPoly;
use avgbound::sdp::{solve, SolveStatus, SolverSettings};
use avgbound::sosc::{compile, AffinePolynomial, ObjectiveSpec, ProgramBuilder, SosConstraint};
use avgbound::Rational;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

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

fn main() {
    let mut rng = StdRng::seed_from_u64(7);
    let k = rng.random_range(1..=3);
    let mut body = RatPoly::zero(2);
    for _ in 0..k {
        let q = random_poly(&mut rng, 2, 2, 3);
        body = body.add(&q.mul(&q));
    }
    eprintln!("body = {body}");
    let b = ProgramBuilder::new();
    let cons = SosConstraint::new("sq", AffinePolynomial::from_poly(&body), true).unwrap();
    eprintln!("basis size {}", cons.basis.len());
    let compiled = compile(&b, &[cons], &[], ObjectiveSpec::Feasibility)
        .unwrap()
        .with_margin();
    let mut s = SolverSettings::with_prec(128);
    s.trace = true;
    let sol = solve(&compiled.problem, &s).unwrap();
    eprintln!("status {:?} obj {} iters {}", sol.status, sol.objective.to_f64(), sol.iterations);
    assert_eq!(sol.status, SolveStatus::Optimal);
}
