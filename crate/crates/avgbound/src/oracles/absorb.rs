//! SoS verification that trajectories never re-enter `{g < 0}`.
//!
//! The certificate `f.grad g + s g` SoS with `s` SoS implies `dg/dt >= 0`
//! wherever `g <= 0`, so the sublevel set cannot be re-entered and
//! `{g >= 0}` is absorbing for trajectories that start in it (or enter it).
//! An infeasible or stalled solve is reported as inconclusive, which is a
//! valid outcome: the property may hold without a certificate at this
//! multiplier degree.

use super::OracleError;
use crate::bounds::ProblemSpec;
use crate::poly::{lie_derivative, RatPoly};
use crate::sdp::{solve, SolveStatus, SolverSettings};
use crate::sosc::{
    compile, make_multiplier_ansatz, AffinePolynomial, ObjectiveSpec, ProgramBuilder,
    SosConstraint,
};

#[derive(Debug, Clone)]
pub struct AbsorbOptions {
    /// Multiplier degree; default matches `s g` to `f.grad g`.
    pub multiplier_degree: Option<u32>,
    pub newton_prune: bool,
    pub precision: u32,
}

impl Default for AbsorbOptions {
    fn default() -> Self {
        AbsorbOptions {
            multiplier_degree: None,
            newton_prune: true,
            precision: 128,
        }
    }
}

#[derive(Debug, Clone)]
pub enum AbsorbVerdict {
    /// A certificate was found; `s` is the recovered multiplier and
    /// `margin` how strictly feasible the Gram blocks are.
    CertifiedNoReentry { s: RatPoly, margin: f64 },
    Inconclusive { reason: String },
}

impl AbsorbVerdict {
    pub fn is_certified(&self) -> bool {
        matches!(self, AbsorbVerdict::CertifiedNoReentry { .. })
    }
}

/// Attempts the no-reentry certificate for the domain `{g >= 0}` of the
/// problem.
pub fn absorbing_domain_check(
    spec: &ProblemSpec,
    opts: &AbsorbOptions,
) -> Result<AbsorbVerdict, OracleError> {
    let g = spec
        .domain
        .as_ref()
        .ok_or_else(|| OracleError::BadOptions("problem has no domain polynomial g".into()))?;
    let gdot = lie_derivative(&spec.f, g)
        .map_err(|e| OracleError::Bounds(Box::new(crate::bounds::BoundsError::Poly(e))))?;
    let g_deg = g.degree().unwrap_or(0);
    let s_deg = opts.multiplier_degree.unwrap_or_else(|| {
        let d = gdot.degree().unwrap_or(0).saturating_sub(g_deg);
        d - (d % 2)
    });
    let mut builder = ProgramBuilder::new();
    let s = make_multiplier_ansatz(&mut builder, spec.dim(), s_deg, "s");
    let body = AffinePolynomial::from_poly(&gdot).add(&s.mul_poly(g));
    let cons_main = match SosConstraint::new("no-reentry", body, opts.newton_prune) {
        Ok(c) => c,
        Err(e) => {
            return Ok(AbsorbVerdict::Inconclusive {
                reason: format!("certificate body cannot be SoS: {e}"),
            })
        }
    };
    let cons_s = SosConstraint::new("multiplier", s.clone(), opts.newton_prune)?;
    let compiled = compile(
        &builder,
        &[cons_main, cons_s],
        &[],
        ObjectiveSpec::Feasibility,
    )?
    .with_margin();
    let settings = SolverSettings::with_prec(opts.precision);
    let solution = solve(&compiled.problem, &settings)?;
    match solution.status {
        SolveStatus::Optimal => {
            let margin = compiled
                .margin_value(&solution)
                .map(|m| m.to_f64())
                .unwrap_or(f64::NAN);
            if margin >= -1e-9 {
                let values = compiled.decision_values(&solution);
                // Snap near-zero multiplier coefficients for readability.
                let s_num = s.substitute(&values);
                let mut s_clean = RatPoly::zero(spec.dim());
                for (m, c) in s_num.terms() {
                    if c.to_f64().abs() > 1e-9 {
                        s_clean.add_term(m, c);
                    }
                }
                Ok(AbsorbVerdict::CertifiedNoReentry {
                    s: s_clean,
                    margin,
                })
            } else {
                Ok(AbsorbVerdict::Inconclusive {
                    reason: format!("solver converged but margin {margin:.3e} is negative"),
                })
            }
        }
        SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible => {
            Ok(AbsorbVerdict::Inconclusive {
                reason: "no certificate at this multiplier degree (infeasible)".into(),
            })
        }
        other => Ok(AbsorbVerdict::Inconclusive {
            reason: format!("solver did not converge ({other:?})"),
        }),
    }
}

/// Simulation cross-check used by tests: from states inside `{g < 0}`, the
/// value of g along the flow never drops below its initial value by more
/// than `tol`.
pub fn g_monotonicity_probe(
    spec: &ProblemSpec,
    g: &RatPoly,
    starts: &[Vec<f64>],
    t_final: f64,
    step: f64,
    tol: f64,
) -> bool {
    let f: Vec<super::FastPoly> = spec.f.iter().map(super::FastPoly::new).collect();
    let gf = super::FastPoly::new(g);
    for x0 in starts {
        let mut x = x0.clone();
        let g0 = gf.eval(&x);
        let steps = (t_final / step) as usize;
        let n = x.len();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        for _ in 0..steps {
            for i in 0..n {
                k1[i] = f[i].eval(&x);
            }
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * step * k1[i];
            }
            for i in 0..n {
                k2[i] = f[i].eval(&tmp);
            }
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * step * k2[i];
            }
            for i in 0..n {
                k3[i] = f[i].eval(&tmp);
            }
            for i in 0..n {
                tmp[i] = x[i] + step * k3[i];
            }
            for i in 0..n {
                k4[i] = f[i].eval(&tmp);
            }
            for i in 0..n {
                x[i] += step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if gf.eval(&x) < g0 - tol {
                return false;
            }
        }
    }
    true
}
