//! A-posteriori certification of solved bounds.
//!
//! The solver's Gram matrix Q only approximately satisfies
//! `z^T Q z = body`. The residual `e = z^T Q z - body` is recomputed in
//! exact rational arithmetic (every float entry converts exactly), and the
//! perturbation bound
//!
//! ```text
//! lambda_0(Q) - dim(Q) * max|coeff(e)| >= 0
//! ```
//!
//! guarantees the body is genuinely nonnegative despite the residual. The
//! eigenvalue is computed by arbitrary-precision Jacobi iteration with
//! precision escalation; results are certified, not formally rigorous
//! (no directed rounding in the eigensolve).

use std::time::Instant;

use rug::float::Round;
use rug::ops::AssignRound;
use rug::{Float, Rational};
use thiserror::Error;

use crate::bounds::{
    det_feasibility_program, storage_derivative_at, BoundsError, Direction, ProblemSpec,
    StorageForm,
};
use crate::linalg::{FloatMat, LinalgError};
use crate::oracles::Trajectory;
use crate::poly::{Monomial, PolyError, RatPoly};
use crate::scalar::float_to_rat;
use crate::sdp::{solve, SolveMode, SolveStatus, SolverSettings};
use crate::sosc::{compile, GramBasis, ObjectiveSpec, SoscError};

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("basis dimension {basis} does not match Gram dimension {gram}")]
    BasisMismatch { basis: usize, gram: usize },
    #[error("Gram matrix must be symmetric")]
    NonSymmetric,
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("no certified bound found within the iteration budget: {0}")]
    NoCertifiedBound(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Bounds(#[from] Box<BoundsError>),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Sosc(#[from] SoscError),
}

/// Everything needed to re-verify one claimed SoS decomposition.
#[derive(Debug, Clone)]
pub struct SosCertificate {
    pub name: String,
    pub basis: GramBasis,
    /// Gram matrix at certification precision.
    pub q: FloatMat,
    /// Target polynomial the decomposition must reproduce.
    pub body: RatPoly,
    /// Exact residual `z^T Q z - body`.
    pub residual: RatPoly,
    /// Largest residual coefficient in magnitude (exact).
    pub r: Rational,
    /// Smallest eigenvalue of Q.
    pub lambda0: Float,
    pub dim_q: usize,
    /// Off-diagonal norm left by the Jacobi sweep (convergence witness).
    pub jacobi_off: Float,
    /// Precision (mantissa bits) at which lambda0 was accepted.
    pub precision: u32,
    /// `lambda0 - dim(Q) |r| >= 0`.
    pub certified: bool,
}

/// Exact residual of a claimed decomposition: `e = z^T Q z - body` with
/// every float entry of Q converted exactly to a rational.
pub fn residual(
    body: &RatPoly,
    q: &FloatMat,
    basis: &GramBasis,
) -> Result<(RatPoly, Rational), CertifyError> {
    if q.rows() != basis.len() || q.cols() != basis.len() {
        return Err(CertifyError::BasisMismatch {
            basis: basis.len(),
            gram: q.rows(),
        });
    }
    if !q.is_symmetric() {
        return Err(CertifyError::NonSymmetric);
    }
    let mut e = body.neg();
    for i in 0..basis.len() {
        for j in 0..basis.len() {
            let qij = float_to_rat(q.at(i, j));
            if qij == 0 {
                continue;
            }
            e.add_term(&basis.monomials[i].mul(&basis.monomials[j]), &qij);
        }
    }
    let r = e
        .terms()
        .map(|(_, c)| Rational::from(c.clone().abs()))
        .max()
        .unwrap_or_default();
    Ok((e, r))
}

/// Smallest eigenvalue by cyclic Jacobi; also returns the residual
/// off-diagonal norm.
pub fn min_eigenvalue(q: &FloatMat) -> Result<(Float, Float), CertifyError> {
    if !q.is_symmetric() {
        return Err(CertifyError::NonSymmetric);
    }
    let eig = q.jacobi_eigen(false)?;
    Ok((eig.values[0].clone(), eig.off_norm))
}

/// The certification inequality `lambda0 - dim(Q) |r| >= 0`, evaluated with
/// `r` rounded toward +inf so the comparison errs on the safe side.
pub fn check(lambda0: &Float, dim_q: usize, r: &Rational) -> bool {
    let prec = lambda0.prec();
    let mut r_up = Float::new(prec);
    let _ = r_up.assign_round(r, Round::Up);
    let bound = Float::with_val(prec, dim_q as u32) * r_up;
    *lambda0 >= bound
}

/// Builds a full certificate: exact residual, lambda0 with precision
/// escalation (doubling until the eigenvalue moves by less than 1%), and
/// the final verdict.
pub fn make_certificate(
    name: &str,
    body: RatPoly,
    basis: GramBasis,
    q: FloatMat,
    start_prec: u32,
) -> SosCertificate {
    let (e, r) = residual(&body, &q, &basis).expect("caller supplies matching basis and Gram");
    let dim_q = q.rows();
    let mut prec = start_prec.max(crate::scalar::MIN_MANTISSA_BITS);
    let (mut lambda0, mut off) = min_eigenvalue(&q.with_prec(prec)).expect("symmetric Gram");
    // Escalate precision until lambda0 stabilizes to 1%.
    for _ in 0..6 {
        let higher = prec * 2;
        let (l2, off2) = min_eigenvalue(&q.with_prec(higher)).expect("symmetric Gram");
        let denom = l2.clone().abs() + Float::with_val(higher, 1e-300);
        let rel = (lambda0.clone() - &l2).abs() / denom;
        lambda0 = l2;
        off = off2;
        prec = higher;
        if rel.to_f64() < 0.01 {
            break;
        }
    }
    let certified = check(&lambda0, dim_q, &r);
    SosCertificate {
        name: name.to_string(),
        basis,
        q,
        body,
        residual: e,
        r,
        lambda0,
        dim_q,
        jacobi_off: off,
        precision: prec,
        certified,
    }
}

/// Result of the certified-bound bisection.
#[derive(Debug, Clone)]
pub struct CertifiedBound {
    pub direction: Direction,
    pub degree: u32,
    /// Best bound value whose rounded storage/Gram pair passed the check.
    pub value: f64,
    pub certificate: SosCertificate,
    /// Rounded storage function backing the certificate.
    pub storage: RatPoly,
    pub feasibility_solves: usize,
    pub wall_seconds: f64,
}

/// Settings for [`certify_bound`].
#[derive(Debug, Clone)]
pub struct CertifySettings {
    /// Decimal places kept when rounding V and Q.
    pub digits: u32,
    /// Relative convergence tolerance of the bisection.
    pub rel_tol: f64,
    pub max_feasibility_solves: usize,
    /// Mantissa bits for the feasibility solves.
    pub precision: u32,
    pub newton_prune: bool,
    pub trace: bool,
}

impl Default for CertifySettings {
    fn default() -> Self {
        CertifySettings {
            digits: 12,
            rel_tol: 5e-3,
            max_feasibility_solves: 40,
            precision: 128,
            newton_prune: true,
            trace: false,
        }
    }
}

fn round_to_digits(x: &Rational, digits: u32) -> Rational {
    let mut scale = Rational::from(1);
    let ten = Rational::from(10);
    for _ in 0..digits {
        scale *= &ten;
    }
    let scaled = Rational::from(x * &scale);
    let rounded = scaled.round();
    rounded / scale
}

/// One feasibility probe of the bisection: solve the fixed-bound program as
/// a margin problem, round V and Q to `digits` decimal places, recompute the
/// residual exactly, and run the certification check.
fn probe(
    spec: &ProblemSpec,
    direction: Direction,
    degree: u32,
    bound: &Rational,
    s: &CertifySettings,
) -> Result<Option<(SosCertificate, RatPoly)>, CertifyError> {
    let (builder, constraints, ansatz) =
        det_feasibility_program(spec, direction, degree, bound, s.newton_prune)
            .map_err(Box::new)?;
    let compiled = compile(&builder, &constraints, &[], ObjectiveSpec::Feasibility)?.with_margin();
    let mut settings = SolverSettings::with_prec(s.precision);
    settings.mode = SolveMode::FeasibilityMargin { target: 1e-8 };
    settings.trace = s.trace;
    let solution = match solve(&compiled.problem, &settings) {
        Ok(sol) => sol,
        Err(e) => return Err(CertifyError::Bounds(Box::new(e.into()))),
    };
    if solution.status != SolveStatus::Optimal {
        return Ok(None);
    }
    let margin = compiled.margin_value(&solution).unwrap_or_default();
    if margin <= 0 {
        return Ok(None);
    }
    // Round the storage coefficients and rebuild the body exactly.
    let values = compiled.decision_values(&solution);
    let rounded: std::collections::BTreeMap<_, _> = values
        .iter()
        .map(|(k, v)| (*k, round_to_digits(v, s.digits)))
        .collect();
    let v_rounded = ansatz.substitute(&rounded);
    let body_rounded = compiled.gram_blocks[0].body.substitute(&rounded);
    // Round the Gram entries.
    let q = compiled.gram_matrix(&solution, 0);
    let mut q_rounded = FloatMat::zeros(s.precision.max(128), q.rows(), q.cols());
    for i in 0..q.rows() {
        for j in 0..q.cols() {
            let rv = round_to_digits(&float_to_rat(q.at(i, j)), s.digits);
            q_rounded.set_rational(i, j, &rv);
        }
    }
    let cert = make_certificate(
        "certified-drift",
        body_rounded,
        compiled.gram_blocks[0].basis.clone(),
        q_rounded,
        s.precision.max(128),
    );
    if cert.certified {
        Ok(Some((cert, v_rounded)))
    } else {
        Ok(None)
    }
}

/// Certified bound via a sequence of feasibility checks: starting from a
/// strictly feasible guess, the bound is tightened while the rounded
/// solution keeps passing the certification inequality, and relaxed
/// multiplicatively when it fails. Tightening uses golden-section steps on
/// the bracket.
pub fn certify_bound(
    spec: &ProblemSpec,
    direction: Direction,
    degree: u32,
    initial_guess: f64,
    settings: &CertifySettings,
) -> Result<CertifiedBound, CertifyError> {
    let start = Instant::now();
    let mut solves = 0usize;
    let mut certified: Option<(Rational, SosCertificate, RatPoly)> = None;
    // Outward phase: multiplicative relaxation until a certified point is
    // found.
    let mut guess = Rational::from_f64(initial_guess).expect("finite guess");
    let relax = Rational::from((105, 100));
    while solves < settings.max_feasibility_solves {
        solves += 1;
        if settings.trace {
            eprintln!("certify probe (outward) at {}", guess.to_f64());
        }
        if let Some((cert, v)) = probe(spec, direction, degree, &guess, settings)? {
            certified = Some((guess.clone(), cert, v));
            break;
        }
        match direction {
            Direction::Upper => guess *= &relax,
            Direction::Lower => guess /= &relax,
        }
    }
    let (mut hi, mut best_cert, mut best_v) = certified.ok_or_else(|| {
        CertifyError::NoCertifiedBound(format!(
            "no certifiable value found after {solves} relaxation steps from {initial_guess}"
        ))
    })?;
    // Inward phase: golden-section tightening between the best certified
    // value and the tightest failed value.
    let mut lo: Option<Rational> = None;
    let golden = Rational::from((382, 1000));
    while solves < settings.max_feasibility_solves {
        let target = match &lo {
            Some(l) => {
                let gap = Rational::from(&hi - l);
                let rel = Rational::from(gap.clone().abs())
                    / (Rational::from(1) + Rational::from(hi.clone().abs()));
                if rel.to_f64() < settings.rel_tol {
                    break;
                }
                Rational::from(&hi - &(gap * &golden))
            }
            None => {
                // No failure seen yet: step toward the optimum by 5%.
                match direction {
                    Direction::Upper => Rational::from(&hi / &relax),
                    Direction::Lower => Rational::from(&hi * &relax),
                }
            }
        };
        solves += 1;
        if settings.trace {
            eprintln!("certify probe (inward) at {}", target.to_f64());
        }
        match probe(spec, direction, degree, &target, settings)? {
            Some((cert, v)) => {
                hi = target;
                best_cert = cert;
                best_v = v;
            }
            None => {
                // Record the failure; golden section keeps the bracket.
                match &lo {
                    Some(l) => {
                        let closer = match direction {
                            Direction::Upper => target > *l,
                            Direction::Lower => target < *l,
                        };
                        if closer {
                            lo = Some(target);
                        }
                    }
                    None => lo = Some(target),
                }
            }
        }
    }
    Ok(CertifiedBound {
        direction,
        degree,
        value: hi.to_f64(),
        certificate: best_cert,
        storage: best_v,
        feasibility_solves: solves,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Near-optimality diagnostic: along a trajectory on the attractor an
/// optimal storage function satisfies `dV/dt = phi_bar - phi` exactly, so
/// the maximum deviation measures how close the bound is to sharp.
pub fn storage_diagnostic(
    spec: &ProblemSpec,
    storage: &StorageForm,
    trajectory: &Trajectory,
) -> Result<f64, CertifyError> {
    if trajectory.states.is_empty() {
        return Err(CertifyError::EmptyTrajectory);
    }
    let phi_bar = trajectory.average_of(&spec.phi);
    let mut worst: f64 = 0.0;
    for state in trajectory.averaging_states() {
        let vdot = storage_derivative_at(spec, storage, state).map_err(Box::new)?;
        let phi = spec.phi.evaluate_f64(state);
        worst = worst.max((vdot - (phi_bar - phi)).abs());
    }
    Ok(worst)
}

/// Serializes a certificate: ordered basis monomials, dense lower-triangular
/// Gram in decimal at full working precision, the exact residual, and the
/// verdict line.
pub fn certificate_to_text(cert: &SosCertificate, var_names: &[String]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "sos-certificate v1");
    let _ = writeln!(out, "name {}", cert.name);
    let _ = writeln!(out, "vars {}", var_names.join(" "));
    let _ = writeln!(out, "basis {}", cert.basis.len());
    for m in &cert.basis.monomials {
        let exps: Vec<String> = m.exps().iter().map(|e| e.to_string()).collect();
        let _ = writeln!(out, "mono {}", exps.join(" "));
    }
    let _ = writeln!(out, "gram {}", cert.dim_q);
    for i in 0..cert.dim_q {
        let row: Vec<String> = (0..=i)
            .map(|j| cert.q.at(i, j).to_string_radix(10, None))
            .collect();
        let _ = writeln!(out, "  {}", row.join(" "));
    }
    let _ = writeln!(out, "body {}", cert.body.to_string_with(var_names));
    let _ = writeln!(out, "residual {}", cert.residual.to_string_with(var_names));
    let _ = writeln!(out, "r {}", cert.r);
    let _ = writeln!(out, "lambda0 {}", cert.lambda0.to_string_radix(10, None));
    let _ = writeln!(out, "dim {}", cert.dim_q);
    let _ = writeln!(out, "precision {}", cert.precision);
    let _ = writeln!(out, "certified {}", cert.certified);
    out.push_str("end\n");
    out
}

/// Reads a certificate back and re-verifies it from scratch: the residual
/// is recomputed from the stored basis, Gram matrix and body, and the
/// verdict is recomputed rather than trusted.
pub fn certificate_from_text(text: &str) -> Result<SosCertificate, CertifyError> {
    let mut name = String::new();
    let mut vars: Vec<String> = Vec::new();
    let mut monos: Vec<Monomial> = Vec::new();
    let mut gram_rows: Vec<Vec<Float>> = Vec::new();
    let mut body_text = String::new();
    let mut precision = 256u32;
    let mut in_gram = false;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let t = raw.trim();
        if t.is_empty() {
            continue;
        }
        if in_gram && raw.starts_with("  ") {
            let row: Result<Vec<Float>, _> = t
                .split_whitespace()
                .map(|w| {
                    Float::parse(w)
                        .map(|v| Float::with_val(precision, v))
                        .map_err(|e| CertifyError::Parse {
                            line,
                            msg: format!("bad gram entry `{w}`: {e}"),
                        })
                })
                .collect();
            gram_rows.push(row?);
            continue;
        }
        in_gram = false;
        let (key, rest) = match t.split_once(' ') {
            Some((k, r)) => (k, r.trim()),
            None => (t, ""),
        };
        match key {
            "sos-certificate" | "end" | "r" | "lambda0" | "dim" | "certified" | "residual" => {}
            "name" => name = rest.to_string(),
            "vars" => vars = rest.split_whitespace().map(String::from).collect(),
            "precision" => {
                precision = rest.parse().map_err(|e| CertifyError::Parse {
                    line,
                    msg: format!("bad precision: {e}"),
                })?
            }
            "basis" => {}
            "mono" => {
                let exps: Result<Vec<u32>, _> = rest
                    .split_whitespace()
                    .map(|w| {
                        w.parse::<u32>().map_err(|e| CertifyError::Parse {
                            line,
                            msg: format!("bad exponent `{w}`: {e}"),
                        })
                    })
                    .collect();
                monos.push(Monomial::new(exps?));
            }
            "gram" => in_gram = true,
            "body" => body_text = rest.to_string(),
            other => {
                return Err(CertifyError::Parse {
                    line,
                    msg: format!("unknown directive `{other}`"),
                })
            }
        }
    }
    if vars.is_empty() || monos.is_empty() {
        return Err(CertifyError::Parse {
            line: 0,
            msg: "missing vars or basis".into(),
        });
    }
    let body = crate::poly::parse(&body_text, &vars).map_err(CertifyError::Poly)?;
    let dim = monos.len();
    let mut q = FloatMat::zeros(precision, dim, dim);
    for (i, row) in gram_rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            q.set(i, j, v);
            q.set(j, i, v);
        }
    }
    // Re-verify rather than trust the stored verdict.
    Ok(make_certificate(
        &name,
        body,
        GramBasis { monomials: monos },
        q,
        precision,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::parse;

    fn vars2() -> Vec<String> {
        vec!["x".into(), "y".into()]
    }

    fn basis_xy() -> GramBasis {
        GramBasis {
            monomials: vec![Monomial::new(vec![1, 0]), Monomial::new(vec![0, 1])],
        }
    }

    #[test]
    fn exact_decomposition_has_zero_residual() {
        let body = parse("(x + y)^2", &vars2()).unwrap();
        let mut q = FloatMat::zeros(128, 2, 2);
        q.set_f64(0, 0, 1.0);
        q.set_f64(0, 1, 1.0);
        q.set_f64(1, 0, 1.0);
        q.set_f64(1, 1, 1.0);
        let (e, r) = residual(&body, &q, &basis_xy()).unwrap();
        assert!(e.is_zero());
        assert_eq!(r, Rational::from(0));
        // lambda0 = 0 for the rank-1 Gram and 0 - 2*0 >= 0 certifies.
        let (l0, _) = min_eigenvalue(&q).unwrap();
        assert!(l0.clone().abs().to_f64() < 1e-30);
        assert!(check(&l0, 2, &r) || l0 < 0); // boundary case: tiny negative
        let cert = make_certificate("t", body, basis_xy(), q, 128);
        // Jacobi may return an exactly-zero or slightly negative lambda0;
        // with r = 0 the certificate holds iff lambda0 >= 0.
        assert_eq!(cert.certified, cert.lambda0 >= 0);
    }

    #[test]
    fn perturbed_gram_residual_is_linear() {
        let body = parse("(x + y)^2", &vars2()).unwrap();
        let mut q = FloatMat::zeros(128, 2, 2);
        q.set_f64(0, 0, 1.0 + 1e-9);
        q.set_f64(0, 1, 1.0);
        q.set_f64(1, 0, 1.0);
        q.set_f64(1, 1, 1.0);
        let (_, r) = residual(&body, &q, &basis_xy()).unwrap();
        // r equals the stored float perturbation exactly (the float nearest
        // 1 + 1e-9, minus 1), which differs from the decimal 1e-9 in the
        // last bits.
        let stored = float_to_rat(q.at(0, 0)) - Rational::from(1);
        assert_eq!(r, stored);
        assert!((r.to_f64() - 1e-9).abs() < 1e-15);
    }

    #[test]
    fn check_arithmetic() {
        // lambda0 = 1e-30, r = 1e-20, dim = 66: clearly not certified.
        let l0 = Float::with_val(128, 1e-30);
        let r = Rational::from_f64(1e-20).unwrap();
        assert!(!check(&l0, 66, &r));
        // Comfortable margin certifies.
        let l0 = Float::with_val(128, 1e-6);
        assert!(check(&l0, 66, &r));
        // Boundary case 0 >= 0.
        assert!(check(&Float::new(128), 3, &Rational::new()));
    }

    #[test]
    fn min_eigenvalue_examples() {
        let mut q = FloatMat::zeros(192, 2, 2);
        q.set_f64(0, 0, 2.0);
        q.set_f64(0, 1, 1.0);
        q.set_f64(1, 0, 1.0);
        q.set_f64(1, 1, 2.0);
        let (l0, off) = min_eigenvalue(&q).unwrap();
        assert!((l0.to_f64() - 1.0).abs() < 1e-40);
        assert!(off.to_f64() < 1e-40);
        let id = FloatMat::identity(128, 4);
        let (l0, _) = min_eigenvalue(&id).unwrap();
        assert!((l0.to_f64() - 1.0).abs() < 1e-30);
    }

    #[test]
    fn rounding_helper() {
        let x = Rational::from((1234567, 1000000));
        assert_eq!(round_to_digits(&x, 2), Rational::from((123, 100)));
        // Ties round away from zero.
        let neg = Rational::from((-1235, 1000));
        assert_eq!(round_to_digits(&neg, 2), Rational::from((-124, 100)));
    }

    #[test]
    fn certificate_file_round_trip() {
        let body = parse("(x + 2*y)^2", &vars2()).unwrap();
        let mut q = FloatMat::zeros(128, 2, 2);
        q.set_f64(0, 0, 1.0);
        q.set_f64(0, 1, 2.0);
        q.set_f64(1, 0, 2.0);
        q.set_f64(1, 1, 4.0);
        let cert = make_certificate("rt", body, basis_xy(), q, 128);
        assert!(cert.certified);
        let text = certificate_to_text(&cert, &vars2());
        let back = certificate_from_text(&text).unwrap();
        assert_eq!(back.body, cert.body);
        assert_eq!(back.r, cert.r);
        assert_eq!(back.certified, cert.certified);
        assert!(back.residual.is_zero());
    }
}
