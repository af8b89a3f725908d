//! Assembly and solution of the bounding programs.
//!
//! Every program optimizes a bound constant subject to sum-of-squares
//! constraints built from a storage-function ansatz:
//!
//! * global deterministic bounds: `+-(f.grad V + phi - bound)` SoS;
//! * local bounds on an absorbing domain `{g >= 0}` via the S-procedure;
//! * stochastic bounds with the extra diffusive term `eps div(D grad V)`;
//! * weak-noise lower bounds with the logarithmic ansatz
//!   `V = alpha log(eps + zeta) + P`, cleared to a polynomial constraint in
//!   powers of eps;
//! * the vanishing-noise limit, whose constraint keeps only the
//!   boundary-layer term `alpha f.grad zeta`.
//!
//! Assembly is exact rational arithmetic throughout; the SDP solver is the
//! only floating-point stage, and every returned bound carries a-posteriori
//! certificates recomputed exactly from the solver's Gram matrices.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rug::Rational;
use thiserror::Error;

use crate::certify::{self, SosCertificate};
use crate::linalg::{rat_is_positive_definite, rat_solve};
use crate::poly::{
    diffusion_term, lie_derivative, DiffusionMatrix, Monomial, PolyError, RatPoly,
};
use crate::scalar::float_to_rat;
use crate::sdp::{solve, SdpError, SdpSolution, SolveStatus, SolverSettings};
use crate::sosc::{
    compile, diffusion_term_affine, lie_derivative_affine, make_storage_ansatz, s_procedure,
    AffineExpr, AffinePolynomial, CompiledSos, ObjectiveSpec, ProgramBuilder, SosConstraint,
    SoscError, VarId, VarKind,
};

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("problem has no noise model (sigma/eps) but a stochastic program was requested")]
    MissingNoise,
    #[error("problem has no absorbing-domain polynomial g")]
    MissingDomain,
    #[error("problem has no quadratic form zeta")]
    MissingZeta,
    #[error("degenerate absorbing domain: {0}")]
    DegenerateDomain(String),
    #[error("zeta must be a homogeneous quadratic with positive definite matrix")]
    ZetaNotPositiveDefinite,
    #[error("the origin is not a fixed point of f")]
    NotAFixedPoint,
    #[error("{0}")]
    UnsupportedFixedPoint(String),
    #[error("program infeasible at degree {degree}; a higher ansatz degree may admit a bound")]
    Infeasible { degree: u32 },
    #[error("noise strength eps must be positive")]
    NonPositiveEps,
    #[error(transparent)]
    Sosc(#[from] SoscError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Parsed problem: dynamics, observable, optional noise, domain and zeta.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub var_names: Vec<String>,
    pub f: Vec<RatPoly>,
    pub phi: RatPoly,
    pub sigma: Option<DiffusionMatrix>,
    pub eps: Option<Rational>,
    /// Absorbing domain `T = {g >= 0}`.
    pub domain: Option<RatPoly>,
    /// Positive definite quadratic form for the logarithmic ansatz.
    pub zeta: Option<RatPoly>,
    pub params: BTreeMap<String, Rational>,
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.var_names.len()
    }

    /// Consistency checks shared by all entry points.
    pub fn validate(&self) -> Result<(), BoundsError> {
        let n = self.dim();
        if self.f.len() != n {
            return Err(PolyError::DimensionMismatch {
                expected: n,
                found: self.f.len(),
            }
            .into());
        }
        for fi in &self.f {
            if fi.dim() != n {
                return Err(PolyError::DimensionMismatch {
                    expected: n,
                    found: fi.dim(),
                }
                .into());
            }
        }
        if self.phi.dim() != n {
            return Err(PolyError::DimensionMismatch {
                expected: n,
                found: self.phi.dim(),
            }
            .into());
        }
        if let Some(s) = &self.sigma {
            if s.dim() != n {
                return Err(PolyError::DimensionMismatch {
                    expected: n,
                    found: s.dim(),
                }
                .into());
            }
        }
        if let Some(z) = &self.zeta {
            zeta_matrix(z).ok_or(BoundsError::ZetaNotPositiveDefinite)?;
        }
        Ok(())
    }

    pub fn with_eps(&self, eps: Rational) -> ProblemSpec {
        let mut s = self.clone();
        s.eps = Some(eps);
        s
    }

    pub fn with_zeta(&self, zeta: RatPoly) -> ProblemSpec {
        let mut s = self.clone();
        s.zeta = Some(zeta);
        s
    }
}

/// Extracts the symmetric matrix of a homogeneous quadratic and verifies
/// positive definiteness. Returns `None` when either fails.
pub fn zeta_matrix(zeta: &RatPoly) -> Option<Vec<Vec<Rational>>> {
    let n = zeta.dim();
    let mut z = vec![vec![Rational::new(); n]; n];
    for (m, c) in zeta.terms() {
        if m.degree() != 2 {
            return None;
        }
        let idx: Vec<usize> = (0..n)
            .flat_map(|i| std::iter::repeat(i).take(m.exp(i) as usize))
            .collect();
        let (i, j) = (idx[0], idx[1]);
        if i == j {
            z[i][i] = c.clone();
        } else {
            let half = Rational::from(c / Rational::from(2));
            z[i][j] = half.clone();
            z[j][i] = half;
        }
    }
    if rat_is_positive_definite(&z) {
        Some(z)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Upper,
    Lower,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Upper => "upper",
            Direction::Lower => "lower",
        }
    }
}

/// Explicit assumptions a returned bound relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Caveat {
    /// The boundary integral of the stationary density is assumed to vanish
    /// (holds when the density decays exponentially at infinity).
    BoundaryDecayAssumed,
    /// Transferring the vanishing-noise bound to the deterministic
    /// attractor average assumes stochastic stability.
    StochasticStabilityAssumed,
    /// The supplied zeta fails the linearized admissibility condition; the
    /// program stays solvable but the bound is expected to collapse.
    ZetaInadmissible,
}

/// Storage function recovered from a solved program.
#[derive(Debug, Clone)]
pub enum StorageForm {
    Polynomial(RatPoly),
    /// `alpha log(eps + zeta) + p`; `eps` is zero for the vanishing-noise
    /// program.
    LogAnsatz {
        alpha: Rational,
        zeta: RatPoly,
        p: RatPoly,
        eps: Rational,
    },
}

#[derive(Debug, Clone)]
pub struct BoundResult {
    pub program: &'static str,
    pub direction: Direction,
    pub degree: u32,
    pub value: f64,
    pub value_exact: Rational,
    pub storage: StorageForm,
    pub multipliers: Vec<RatPoly>,
    pub alpha: Option<Rational>,
    pub certificates: Vec<SosCertificate>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub caveats: Vec<Caveat>,
    pub wall_time: Duration,
}

impl BoundResult {
    /// Largest residual coefficient across certificates.
    pub fn max_residual(&self) -> Rational {
        self.certificates
            .iter()
            .map(|c| c.r.clone())
            .max()
            .unwrap_or_default()
    }

    /// Smallest Gram eigenvalue of the main constraint.
    pub fn lambda0(&self) -> f64 {
        self.certificates
            .first()
            .map(|c| c.lambda0.to_f64())
            .unwrap_or(f64::NAN)
    }

    pub fn certified(&self) -> bool {
        !self.certificates.is_empty() && self.certificates.iter().all(|c| c.certified)
    }

    /// The assembled constraint body at the returned decision values (the
    /// polynomial whose nonnegativity the certificate backs).
    pub fn body(&self, k: usize) -> &RatPoly {
        &self.certificates[k].body
    }
}

#[derive(Debug, Clone)]
pub struct BoundOptions {
    pub degree: u32,
    /// S-procedure multiplier degree; defaults to
    /// `deg(body) - deg(g)` rounded down to even.
    pub multiplier_degree: Option<u32>,
    pub newton_prune: bool,
    /// Mantissa bits; default 256 for degree >= 10, otherwise 128.
    pub precision: Option<u32>,
    pub solver: Option<SolverSettings>,
    pub trace: bool,
}

impl BoundOptions {
    pub fn degree(degree: u32) -> Self {
        BoundOptions {
            degree,
            multiplier_degree: None,
            newton_prune: true,
            precision: None,
            solver: None,
            trace: false,
        }
    }

    pub fn effective_precision(&self) -> u32 {
        self.precision
            .unwrap_or(if self.degree >= 10 { 256 } else { 128 })
    }

    pub fn solver_settings(&self) -> SolverSettings {
        let mut s = match &self.solver {
            Some(s) => s.clone(),
            None => SolverSettings::with_prec(self.effective_precision()),
        };
        s.trace = self.trace || s.trace;
        s
    }
}

/// Builds `f.grad(V) + phi - bound` with a fresh bound variable.
fn drift_body(
    builder: &mut ProgramBuilder,
    spec: &ProblemSpec,
    ansatz: &AffinePolynomial,
    direction: Direction,
) -> (AffinePolynomial, VarId) {
    let (name, kind) = match direction {
        Direction::Upper => ("U", VarKind::BoundUpper),
        Direction::Lower => ("L", VarKind::BoundLower),
    };
    let bound = builder.new_var(name, kind);
    let mut body = lie_derivative_affine(&spec.f, ansatz);
    body = body.add(&AffinePolynomial::from_poly(&spec.phi));
    body.add_term(
        &Monomial::unit(spec.dim()),
        &AffineExpr::scaled_var(bound, Rational::from(-1)),
    );
    (body, bound)
}

fn orient(body: AffinePolynomial, direction: Direction) -> AffinePolynomial {
    match direction {
        Direction::Lower => body,
        Direction::Upper => body.neg(),
    }
}

fn objective_for(direction: Direction, bound: VarId) -> ObjectiveSpec {
    match direction {
        Direction::Upper => ObjectiveSpec::MinimizeVar(bound),
        Direction::Lower => ObjectiveSpec::MaximizeVar(bound),
    }
}

struct SolvedProgram {
    compiled: CompiledSos,
    solution: SdpSolution,
    values: BTreeMap<VarId, Rational>,
    wall: Duration,
}

fn run_program(
    builder: &ProgramBuilder,
    constraints: Vec<SosConstraint>,
    objective: ObjectiveSpec,
    settings: &SolverSettings,
    degree: u32,
) -> Result<SolvedProgram, BoundsError> {
    let compiled = compile(builder, &constraints, &[], objective)?;
    let start = Instant::now();
    let solution = solve(&compiled.problem, settings)?;
    let wall = start.elapsed();
    match solution.status {
        SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible => {
            return Err(BoundsError::Infeasible { degree });
        }
        _ => {}
    }
    let values = compiled.decision_values(&solution);
    Ok(SolvedProgram {
        compiled,
        solution,
        values,
        wall,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    program: &'static str,
    direction: Direction,
    degree: u32,
    solved: SolvedProgram,
    bound: VarId,
    storage: StorageForm,
    multipliers: Vec<RatPoly>,
    alpha: Option<Rational>,
    caveats: Vec<Caveat>,
    cert_prec: u32,
) -> BoundResult {
    let SolvedProgram {
        compiled,
        solution,
        values,
        wall,
    } = solved;
    let mut certificates = Vec::new();
    for (k, info) in compiled.gram_blocks.iter().enumerate() {
        let q = compiled.gram_matrix(&solution, k);
        let body_num = info.body.substitute(&values);
        certificates.push(certify::make_certificate(
            &info.name,
            body_num,
            info.basis.clone(),
            q,
            cert_prec,
        ));
    }
    let value_exact = values
        .get(&bound)
        .cloned()
        .unwrap_or_else(|| float_to_rat(&solution.objective));
    BoundResult {
        program,
        direction,
        degree,
        value: value_exact.to_f64(),
        value_exact,
        storage,
        multipliers,
        alpha,
        certificates,
        status: solution.status,
        iterations: solution.iterations,
        primal_residual: solution.primal_residual.to_f64(),
        dual_residual: solution.dual_residual.to_f64(),
        gap: solution.gap.to_f64(),
        caveats,
        wall_time: wall,
    }
}

/// Global deterministic bound: optimize the bound constant subject to
/// `+-(f.grad V + phi - bound)` being SoS over a degree-`d` storage ansatz.
pub fn det_global_bound(
    spec: &ProblemSpec,
    direction: Direction,
    opts: &BoundOptions,
) -> Result<BoundResult, BoundsError> {
    spec.validate()?;
    let mut builder = ProgramBuilder::new();
    let ansatz = make_storage_ansatz(&mut builder, spec.dim(), opts.degree, "V");
    let (core, bound) = drift_body(&mut builder, spec, &ansatz, direction);
    let body = orient(core, direction);
    let cons = SosConstraint::new("drift", body, opts.newton_prune)?;
    let solved = run_program(
        &builder,
        vec![cons],
        objective_for(direction, bound),
        &opts.solver_settings(),
        opts.degree,
    )?;
    let storage = StorageForm::Polynomial(ansatz.substitute(&solved.values));
    Ok(finish(
        "det-global",
        direction,
        opts.degree,
        solved,
        bound,
        storage,
        Vec::new(),
        None,
        Vec::new(),
        opts.effective_precision(),
    ))
}

/// Checks that `{g >= 0}` is plausibly nonempty; constant-negative and
/// never-positive-on-a-sample-box domains are rejected.
fn validate_domain(g: &RatPoly) -> Result<(), BoundsError> {
    if let Some(0) = g.degree() {
        if g.constant_term() < 0 {
            return Err(BoundsError::DegenerateDomain(
                "g is a negative constant, so {g >= 0} is empty".into(),
            ));
        }
        return Ok(());
    }
    if g.is_zero() {
        return Ok(());
    }
    // Coarse sampling of a box of half-width 10.
    let n = g.dim();
    let mut point = vec![0.0f64; n];
    let steps = if n <= 2 { 101 } else { 21 };
    let mut found = false;
    let mut idx = vec![0usize; n];
    'outer: loop {
        for (d, &i) in idx.iter().enumerate() {
            point[d] = -10.0 + 20.0 * (i as f64) / ((steps - 1) as f64);
        }
        if g.evaluate_f64(&point) > 0.0 {
            found = true;
            break;
        }
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < steps {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == n {
                break 'outer;
            }
        }
    }
    if !found {
        return Err(BoundsError::DegenerateDomain(
            "g is nowhere positive on the sample box [-10, 10]^n".into(),
        ));
    }
    Ok(())
}

/// Default multiplier degree: match `s g` to the body degree, rounded down
/// to even.
fn default_multiplier_degree(body_degree: u32, g_degree: u32) -> u32 {
    let d = body_degree.saturating_sub(g_degree);
    d - (d % 2)
}

/// Local deterministic bound on the absorbing domain `{g >= 0}` via the
/// generalized S-procedure.
pub fn det_local_bound(
    spec: &ProblemSpec,
    direction: Direction,
    opts: &BoundOptions,
) -> Result<BoundResult, BoundsError> {
    spec.validate()?;
    let g = spec.domain.as_ref().ok_or(BoundsError::MissingDomain)?;
    validate_domain(g)?;
    let mut builder = ProgramBuilder::new();
    let ansatz = make_storage_ansatz(&mut builder, spec.dim(), opts.degree, "V");
    let (core, bound) = drift_body(&mut builder, spec, &ansatz, direction);
    let oriented = orient(core, direction);
    let s_deg = opts.multiplier_degree.unwrap_or_else(|| {
        default_multiplier_degree(
            oriented.degree().unwrap_or(0),
            g.degree().unwrap_or(0),
        )
    });
    let (relaxed, s) = s_procedure(&mut builder, &oriented, g, s_deg, "s");
    let cons_main = SosConstraint::new("drift-sproc", relaxed, opts.newton_prune)?;
    let cons_s = SosConstraint::new("multiplier", s.clone(), opts.newton_prune)?;
    let solved = run_program(
        &builder,
        vec![cons_main, cons_s],
        objective_for(direction, bound),
        &opts.solver_settings(),
        opts.degree,
    )?;
    let storage = StorageForm::Polynomial(ansatz.substitute(&solved.values));
    let mult = s.substitute(&solved.values);
    Ok(finish(
        "det-local",
        direction,
        opts.degree,
        solved,
        bound,
        storage,
        vec![mult],
        None,
        Vec::new(),
        opts.effective_precision(),
    ))
}

/// Stochastic bound at fixed noise: the drift body gains the diffusive term
/// `eps div(D grad V)`. Valid under the boundary-decay assumption, which is
/// recorded as a caveat on the result.
pub fn stoch_bound(
    spec: &ProblemSpec,
    direction: Direction,
    opts: &BoundOptions,
) -> Result<BoundResult, BoundsError> {
    spec.validate()?;
    let sigma = spec.sigma.as_ref().ok_or(BoundsError::MissingNoise)?;
    let eps = spec.eps.clone().ok_or(BoundsError::MissingNoise)?;
    if eps <= 0 {
        return Err(BoundsError::NonPositiveEps);
    }
    let mut builder = ProgramBuilder::new();
    let ansatz = make_storage_ansatz(&mut builder, spec.dim(), opts.degree, "V");
    let (mut core, bound) = drift_body(&mut builder, spec, &ansatz, direction);
    core = core.add(&diffusion_term_affine(sigma, &ansatz).scale(&eps));
    let body = orient(core, direction);
    let cons = SosConstraint::new("stoch-drift", body, opts.newton_prune)?;
    let solved = run_program(
        &builder,
        vec![cons],
        objective_for(direction, bound),
        &opts.solver_settings(),
        opts.degree,
    )?;
    let storage = StorageForm::Polynomial(ansatz.substitute(&solved.values));
    Ok(finish(
        "stoch",
        direction,
        opts.degree,
        solved,
        bound,
        storage,
        Vec::new(),
        None,
        vec![Caveat::BoundaryDecayAssumed],
        opts.effective_precision(),
    ))
}

/// Pieces of the cleared logarithmic-ansatz constraint, grouped by power of
/// eps. Exposed for identity tests.
pub struct LogAnsatzPieces {
    pub l0: AffinePolynomial,
    pub l1: AffinePolynomial,
    pub l2: AffinePolynomial,
    pub l3: AffinePolynomial,
}

/// Assembles the four eps-coefficients of the cleared rational inequality
/// for `V = alpha log(eps + zeta) + P`:
///
/// ```text
/// L0 = alpha zeta (f.grad zeta) + zeta^2 (f.grad P + phi - L)
/// L1 = alpha zeta div(D grad zeta) - alpha grad zeta . D grad zeta
///      + zeta^2 div(D grad P) + alpha f.grad zeta
///      + 2 zeta (f.grad P + phi - L)
/// L2 = alpha div(D grad zeta) + 2 zeta div(D grad P) + f.grad P + phi - L
/// L3 = div(D grad P)
/// ```
pub fn log_ansatz_pieces(
    spec: &ProblemSpec,
    d_matrix: &DiffusionMatrix,
    zeta: &RatPoly,
    p_ansatz: &AffinePolynomial,
    alpha: &AffineExpr,
    bound: VarId,
) -> Result<LogAnsatzPieces, BoundsError> {
    let n = spec.dim();
    let f_dot_grad_zeta = lie_derivative(&spec.f, zeta)?;
    let div_d_grad_zeta = diffusion_term(d_matrix, zeta)?;
    // grad zeta . (D grad zeta)
    let mut grad_d_grad = RatPoly::zero(n);
    for i in 0..n {
        let zi = zeta.partial(i);
        if zi.is_zero() {
            continue;
        }
        for j in 0..n {
            let dij = d_matrix.entry(i, j);
            if *dij == 0 {
                continue;
            }
            grad_d_grad = grad_d_grad.add(&zi.mul(&zeta.partial(j)).scale(dij));
        }
    }
    let zeta2 = zeta.mul(zeta);
    let f_grad_p = lie_derivative_affine(&spec.f, p_ansatz);
    let div_d_grad_p = diffusion_term_affine(d_matrix, p_ansatz);
    // base = f.grad P + phi - L
    let mut base = f_grad_p.add(&AffinePolynomial::from_poly(&spec.phi));
    base.add_term(
        &Monomial::unit(n),
        &AffineExpr::scaled_var(bound, Rational::from(-1)),
    );

    let alpha_times = |q: &RatPoly| -> AffinePolynomial {
        let mut out = AffinePolynomial::zero(n);
        for (m, c) in q.terms() {
            out.add_term(m, &alpha.scale(c));
        }
        out
    };

    let l0 = alpha_times(&zeta.mul(&f_dot_grad_zeta)).add(&base.mul_poly(&zeta2));
    let l1 = alpha_times(
        &zeta
            .mul(&div_d_grad_zeta)
            .sub(&grad_d_grad)
            .add(&f_dot_grad_zeta),
    )
    .add(&div_d_grad_p.mul_poly(&zeta2))
    .add(&base.mul_poly(zeta).scale(&Rational::from(2)));
    let l2 = alpha_times(&div_d_grad_zeta)
        .add(&div_d_grad_p.mul_poly(zeta).scale(&Rational::from(2)))
        .add(&base);
    let l3 = div_d_grad_p;
    Ok(LogAnsatzPieces { l0, l1, l2, l3 })
}

/// Weak-noise lower bound with the logarithmic ansatz. `alpha_fixed` pins
/// alpha to a constant (used by equivalence tests); normally alpha is a
/// decision variable.
pub fn weak_noise_lower_bound(
    spec: &ProblemSpec,
    opts: &BoundOptions,
    alpha_fixed: Option<Rational>,
) -> Result<BoundResult, BoundsError> {
    spec.validate()?;
    let sigma = spec.sigma.as_ref().ok_or(BoundsError::MissingNoise)?;
    let eps = spec.eps.clone().ok_or(BoundsError::MissingNoise)?;
    if eps <= 0 {
        return Err(BoundsError::NonPositiveEps);
    }
    let zeta = spec.zeta.clone().ok_or(BoundsError::MissingZeta)?;
    zeta_matrix(&zeta).ok_or(BoundsError::ZetaNotPositiveDefinite)?;

    let mut builder = ProgramBuilder::new();
    let p_ansatz = make_storage_ansatz(&mut builder, spec.dim(), opts.degree, "P");
    let bound = builder.new_var("L", VarKind::BoundLower);
    let alpha_expr = match &alpha_fixed {
        Some(v) => AffineExpr::constant(v.clone()),
        None => AffineExpr::var(builder.new_var("alpha", VarKind::Alpha)),
    };
    let pieces = log_ansatz_pieces(spec, sigma, &zeta, &p_ansatz, &alpha_expr, bound)?;
    let e2 = Rational::from(&eps * &eps);
    let e3 = Rational::from(&e2 * &eps);
    let body = pieces
        .l0
        .add(&pieces.l1.scale(&eps))
        .add(&pieces.l2.scale(&e2))
        .add(&pieces.l3.scale(&e3));
    let cons = SosConstraint::new("log-ansatz", body, opts.newton_prune)?;
    let solved = run_program(
        &builder,
        vec![cons],
        ObjectiveSpec::MaximizeVar(bound),
        &opts.solver_settings(),
        opts.degree,
    )?;
    let alpha_val = match &alpha_fixed {
        Some(v) => v.clone(),
        None => builder
            .vars()
            .iter()
            .find(|v| v.name == "alpha")
            .and_then(|v| solved.values.get(&v.id).cloned())
            .unwrap_or_default(),
    };
    let p_num = p_ansatz.substitute(&solved.values);
    let storage = StorageForm::LogAnsatz {
        alpha: alpha_val.clone(),
        zeta: zeta.clone(),
        p: p_num,
        eps: eps.clone(),
    };
    Ok(finish(
        "weak-noise",
        Direction::Lower,
        opts.degree,
        solved,
        bound,
        storage,
        Vec::new(),
        Some(alpha_val),
        vec![Caveat::BoundaryDecayAssumed],
        opts.effective_precision(),
    ))
}

/// Jacobian of `f` at the origin (the linear part of each component).
pub fn jacobian_at_origin(f: &[RatPoly]) -> Vec<Vec<Rational>> {
    let n = f.len();
    let mut j0 = vec![vec![Rational::new(); n]; n];
    for (i, fi) in f.iter().enumerate() {
        for (jvar, entry) in j0[i].iter_mut().enumerate().take(n) {
            *entry = fi.coeff(&Monomial::var(n, jvar));
        }
    }
    j0
}

/// Admissibility of a fixed zeta for the boundary-layer programs: the
/// quadratic form `J0^T Z + Z J0` must be sign definite (its sign fixes the
/// sign of alpha). `None` when zeta is not a positive definite quadratic.
pub fn zeta_admissible(f: &[RatPoly], zeta: &RatPoly) -> Option<bool> {
    let z = zeta_matrix(zeta)?;
    let j0 = jacobian_at_origin(f);
    let n = f.len();
    let mut k = vec![vec![Rational::new(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = Rational::new();
            for l in 0..n {
                acc += Rational::from(&j0[l][i] * &z[l][j]);
                acc += Rational::from(&z[i][l] * &j0[l][j]);
            }
            k[i][j] = acc;
        }
    }
    let neg: Vec<Vec<Rational>> = k
        .iter()
        .map(|row| row.iter().map(|v| Rational::from(-v)).collect())
        .collect();
    Some(rat_is_positive_definite(&k) || rat_is_positive_definite(&neg))
}

/// Vanishing-noise lower bound: `alpha f.grad zeta + zeta (f.grad P + phi
/// - L)` SoS. The bound applies to the vanishing-noise limit of the
/// stationary expectation, and to the deterministic attractor average under
/// stochastic stability (recorded as a caveat).
pub fn vanishing_noise_lower_bound(
    spec: &ProblemSpec,
    opts: &BoundOptions,
) -> Result<BoundResult, BoundsError> {
    spec.validate()?;
    let zeta = spec.zeta.clone().ok_or(BoundsError::MissingZeta)?;
    zeta_matrix(&zeta).ok_or(BoundsError::ZetaNotPositiveDefinite)?;
    let mut caveats = vec![Caveat::StochasticStabilityAssumed];
    if zeta_admissible(&spec.f, &zeta) != Some(true) {
        caveats.push(Caveat::ZetaInadmissible);
    }

    let n = spec.dim();
    let mut builder = ProgramBuilder::new();
    let p_ansatz = make_storage_ansatz(&mut builder, n, opts.degree, "P");
    let bound = builder.new_var("L", VarKind::BoundLower);
    let alpha = builder.new_var("alpha", VarKind::Alpha);

    let f_dot_grad_zeta = lie_derivative(&spec.f, &zeta)?;
    let mut base = lie_derivative_affine(&spec.f, &p_ansatz);
    base = base.add(&AffinePolynomial::from_poly(&spec.phi));
    base.add_term(
        &Monomial::unit(n),
        &AffineExpr::scaled_var(bound, Rational::from(-1)),
    );
    let body = AffinePolynomial::poly_times_var(&f_dot_grad_zeta, alpha).add(&base.mul_poly(&zeta));
    let cons = SosConstraint::new("vanishing", body, opts.newton_prune)?;
    let solved = run_program(
        &builder,
        vec![cons],
        ObjectiveSpec::MaximizeVar(bound),
        &opts.solver_settings(),
        opts.degree,
    )?;
    let alpha_val = solved.values.get(&alpha).cloned().unwrap_or_default();
    let p_num = p_ansatz.substitute(&solved.values);
    let storage = StorageForm::LogAnsatz {
        alpha: alpha_val.clone(),
        zeta: zeta.clone(),
        p: p_num,
        eps: Rational::new(),
    };
    Ok(finish(
        "vanishing-noise",
        Direction::Lower,
        opts.degree,
        solved,
        bound,
        storage,
        Vec::new(),
        Some(alpha_val),
        caveats,
        opts.effective_precision(),
    ))
}

/// Constructs an admissible quadratic form for a repelling fixed point at
/// the origin by solving the Lyapunov equation `J0^T Z + Z J0 = I` exactly
/// (unique since `-J0` is stable) and normalizing so the largest entry in
/// magnitude is 1.
pub fn construct_zeta(f: &[RatPoly]) -> Result<(RatPoly, Vec<Vec<Rational>>), BoundsError> {
    let n = f.len();
    if n == 0 {
        return Err(PolyError::ZeroDimension.into());
    }
    for fi in f {
        if fi.constant_term() != 0 {
            return Err(BoundsError::NotAFixedPoint);
        }
    }
    let j0 = jacobian_at_origin(f);
    // Unknowns: z_ij for i <= j. Equations: (J0^T Z + Z J0)_ij = delta_ij
    // for i <= j.
    let unknowns: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .collect();
    let k = unknowns.len();
    let mut a = vec![vec![Rational::new(); k]; k];
    let mut b = vec![Rational::new(); k];
    for (row, &(i, j)) in unknowns.iter().enumerate() {
        // (J0^T Z)_ij = sum_l J0[l][i] Z[l][j];
        // (Z J0)_ij   = sum_l Z[i][l] J0[l][j].
        for l in 0..n {
            let c1 = &j0[l][i];
            if *c1 != 0 {
                let col = unknowns
                    .iter()
                    .position(|&(p, q)| (p, q) == (l.min(j), l.max(j)))
                    .unwrap();
                a[row][col] += c1;
            }
            let c2 = &j0[l][j];
            if *c2 != 0 {
                let col = unknowns
                    .iter()
                    .position(|&(p, q)| (p, q) == (i.min(l), i.max(l)))
                    .unwrap();
                a[row][col] += c2;
            }
        }
        b[row] = Rational::from(i32::from(i == j));
    }
    let sol = rat_solve(a, b).ok_or_else(|| {
        // Singular exactly when some eigenvalue pair sums to zero, which
        // for a real spectrum means a saddle or a degenerate center.
        BoundsError::UnsupportedFixedPoint(
            "saddle not supported: the linearization has an eigenvalue pair summing to zero"
                .into(),
        )
    })?;
    let mut z = vec![vec![Rational::new(); n]; n];
    for (idx, &(i, j)) in unknowns.iter().enumerate() {
        z[i][j] = sol[idx].clone();
        z[j][i] = sol[idx].clone();
    }
    if !rat_is_positive_definite(&z) {
        let neg: Vec<Vec<Rational>> = z
            .iter()
            .map(|row| row.iter().map(|v| Rational::from(-v)).collect())
            .collect();
        let msg = if rat_is_positive_definite(&neg) {
            "origin is a stable fixed point, not a repeller"
        } else {
            "saddle not supported: no positive definite zeta increases along \
             all linearized trajectories"
        };
        return Err(BoundsError::UnsupportedFixedPoint(msg.into()));
    }
    // Normalize so max |entry| = 1.
    let mut max = Rational::new();
    for row in &z {
        for v in row {
            let mag = Rational::from(v.clone().abs());
            if mag > max {
                max = mag;
            }
        }
    }
    for row in z.iter_mut() {
        for v in row.iter_mut() {
            *v /= &max;
        }
    }
    let mut zeta = RatPoly::zero(n);
    for i in 0..n {
        for j in i..n {
            let mut exps = vec![0u32; n];
            exps[i] += 1;
            exps[j] += 1;
            let coeff = if i == j {
                z[i][i].clone()
            } else {
                Rational::from(&z[i][j] * &Rational::from(2))
            };
            zeta.add_term(&Monomial::new(exps), &coeff);
        }
    }
    Ok((zeta, z))
}

/// Assembles the deterministic drift program at a *fixed* bound value as a
/// feasibility question (used by the certification bisection).
pub fn det_feasibility_program(
    spec: &ProblemSpec,
    direction: Direction,
    degree: u32,
    bound_value: &Rational,
    prune: bool,
) -> Result<(ProgramBuilder, Vec<SosConstraint>, AffinePolynomial), BoundsError> {
    spec.validate()?;
    let mut builder = ProgramBuilder::new();
    let ansatz = make_storage_ansatz(&mut builder, spec.dim(), degree, "V");
    let mut core = lie_derivative_affine(&spec.f, &ansatz);
    core = core.add(&AffinePolynomial::from_poly(&spec.phi));
    core.add_term(
        &Monomial::unit(spec.dim()),
        &AffineExpr::constant(Rational::from(-bound_value)),
    );
    let body = orient(core, direction);
    let cons = SosConstraint::new("drift-feas", body, prune)?;
    Ok((builder, vec![cons], ansatz))
}

/// Evaluates the time derivative of a storage form along a state:
/// `f.grad V`, with the chain rule for the logarithmic ansatz.
pub fn storage_derivative_at(
    spec: &ProblemSpec,
    storage: &StorageForm,
    state: &[f64],
) -> Result<f64, BoundsError> {
    match storage {
        StorageForm::Polynomial(v) => {
            let vdot = lie_derivative(&spec.f, v)?;
            Ok(vdot.evaluate_f64(state))
        }
        StorageForm::LogAnsatz {
            alpha,
            zeta,
            p,
            eps,
        } => {
            let fz = lie_derivative(&spec.f, zeta)?;
            let fp = lie_derivative(&spec.f, p)?;
            let denom = eps.to_f64() + zeta.evaluate_f64(state);
            Ok(alpha.to_f64() * fz.evaluate_f64(state) / denom + fp.evaluate_f64(state))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::parse;

    fn vars2() -> Vec<String> {
        vec!["x".into(), "y".into()]
    }

    fn p(t: &str) -> RatPoly {
        parse(t, &vars2()).unwrap()
    }

    fn vdp_spec(mu: i64) -> ProblemSpec {
        let mut params = BTreeMap::new();
        params.insert("mu".to_string(), Rational::from(mu));
        let f2 = crate::poly::parse_with_params("mu*(1 - x^2)*y - x", &vars2(), &params).unwrap();
        ProblemSpec {
            var_names: vars2(),
            f: vec![p("y"), f2],
            phi: p("x^2 + y^2"),
            sigma: Some(
                DiffusionMatrix::from_sigma(vec![
                    vec![Rational::from(0)],
                    vec![Rational::from(1)],
                ])
                .unwrap(),
            ),
            eps: None,
            domain: Some(p("x^2 + y^2 - 1")),
            zeta: Some(p("x^2 - x*y + y^2")),
            params,
        }
    }

    #[test]
    fn zeta_matrix_extraction() {
        let z = zeta_matrix(&p("x^2 - x*y + y^2")).unwrap();
        assert_eq!(z[0][0], Rational::from(1));
        assert_eq!(z[0][1], Rational::from((-1, 2)));
        assert_eq!(z[1][1], Rational::from(1));
        // Rank-deficient quadratic rejected.
        assert!(zeta_matrix(&p("x^2")).is_none());
        // Inhomogeneous rejected.
        assert!(zeta_matrix(&p("x^2 + y^2 + 1")).is_none());
    }

    #[test]
    fn construct_zeta_van_der_pol() {
        let spec = vdp_spec(1);
        let (zeta, z) = construct_zeta(&spec.f).unwrap();
        // Lyapunov solve for J0 = [[0,1],[-1,1]] gives
        // Z = [[3/2, -1/2], [-1/2, 1]], normalized by 3/2.
        assert_eq!(z[0][0], Rational::from(1));
        assert_eq!(z[0][1], Rational::from((-1, 3)));
        assert_eq!(z[1][1], Rational::from((2, 3)));
        assert_eq!(zeta_admissible(&spec.f, &zeta), Some(true));
        // The classic hand-picked form is admissible too.
        assert_eq!(zeta_admissible(&spec.f, &p("x^2 - x*y + y^2")), Some(true));
    }

    #[test]
    fn construct_zeta_isotropic_repeller() {
        let f = vec![p("x"), p("y")];
        let (zeta, z) = construct_zeta(&f).unwrap();
        // J0 = I: Z = I/2 before normalization, identity after.
        assert_eq!(z[0][0], Rational::from(1));
        assert_eq!(z[1][1], Rational::from(1));
        assert_eq!(z[0][1], Rational::from(0));
        assert_eq!(zeta, p("x^2 + y^2"));
    }

    #[test]
    fn construct_zeta_rejects_saddle_and_moving_origin() {
        let saddle = vec![p("x"), p("0 - y")];
        match construct_zeta(&saddle) {
            Err(BoundsError::UnsupportedFixedPoint(msg)) => {
                assert!(msg.contains("saddle"), "{msg}");
            }
            other => panic!("expected saddle rejection, got {other:?}"),
        }
        // A saddle with nonzero eigenvalue sums takes the sign-test branch.
        let saddle2 = vec![p("x"), p("-2*y")];
        match construct_zeta(&saddle2) {
            Err(BoundsError::UnsupportedFixedPoint(msg)) => {
                assert!(msg.contains("saddle"), "{msg}");
            }
            other => panic!("expected saddle rejection, got {other:?}"),
        }
        let stable = vec![p("0 - x"), p("0 - y")];
        match construct_zeta(&stable) {
            Err(BoundsError::UnsupportedFixedPoint(msg)) => {
                assert!(msg.contains("stable"), "{msg}");
            }
            other => panic!("expected unsupported fixed point, got {other:?}"),
        }
        let shifted = vec![p("x + 1"), p("y")];
        assert!(matches!(
            construct_zeta(&shifted),
            Err(BoundsError::NotAFixedPoint)
        ));
    }

    #[test]
    fn log_ansatz_pieces_hand_expansion() {
        // alpha = 1, zeta = x^2 + y^2, P = 0, phi = 0, L = 0, f = 0, D = I:
        // L1 = zeta lap(zeta) - |grad zeta|^2 = 0, L2 = 4, L3 = 0, L0 = 0.
        let spec = ProblemSpec {
            var_names: vars2(),
            f: vec![RatPoly::zero(2), RatPoly::zero(2)],
            phi: RatPoly::zero(2),
            sigma: Some(DiffusionMatrix::identity(2)),
            eps: Some(Rational::from((1, 10))),
            domain: None,
            zeta: Some(p("x^2 + y^2")),
            params: BTreeMap::new(),
        };
        let mut builder = ProgramBuilder::new();
        let bound = builder.new_var("L", VarKind::BoundLower);
        let p_ansatz = AffinePolynomial::zero(2);
        let alpha = AffineExpr::constant(Rational::from(1));
        let pieces = log_ansatz_pieces(
            &spec,
            spec.sigma.as_ref().unwrap(),
            spec.zeta.as_ref().unwrap(),
            &p_ansatz,
            &alpha,
            bound,
        )
        .unwrap();
        let zero_vals: BTreeMap<VarId, Rational> = [(bound, Rational::new())].into();
        assert!(pieces.l0.substitute(&zero_vals).is_zero());
        assert!(pieces.l1.substitute(&zero_vals).is_zero());
        assert_eq!(pieces.l2.substitute(&zero_vals), p("4"));
        assert!(pieces.l3.substitute(&zero_vals).is_zero());
    }

    #[test]
    fn vanishing_body_reduces_to_alpha_lie_zeta() {
        // With phi = 0 and all P coefficients and L set to zero, the
        // vanishing-noise body equals alpha * f.grad(zeta) exactly.
        let mut spec = vdp_spec(1);
        spec.phi = RatPoly::zero(2);
        let zeta = spec.zeta.clone().unwrap();
        let mut builder = ProgramBuilder::new();
        let p_ansatz = make_storage_ansatz(&mut builder, 2, 4, "P");
        let bound = builder.new_var("L", VarKind::BoundLower);
        let alpha = builder.new_var("alpha", VarKind::Alpha);
        let f_dot_grad_zeta = lie_derivative(&spec.f, &zeta).unwrap();
        let mut base = lie_derivative_affine(&spec.f, &p_ansatz);
        base = base.add(&AffinePolynomial::from_poly(&spec.phi));
        base.add_term(
            &Monomial::unit(2),
            &AffineExpr::scaled_var(bound, Rational::from(-1)),
        );
        let body =
            AffinePolynomial::poly_times_var(&f_dot_grad_zeta, alpha).add(&base.mul_poly(&zeta));
        let mut values: BTreeMap<VarId, Rational> = BTreeMap::new();
        for v in builder.vars() {
            values.insert(v.id, Rational::new());
        }
        values.insert(alpha, Rational::from(1));
        assert_eq!(body.substitute(&values), f_dot_grad_zeta);
    }

    #[test]
    fn domain_validation() {
        assert!(validate_domain(&p("x^2 + y^2 - 1")).is_ok());
        assert!(matches!(
            validate_domain(&p("-1")),
            Err(BoundsError::DegenerateDomain(_))
        ));
        assert!(matches!(
            validate_domain(&p("-1 - x^2 - y^2")),
            Err(BoundsError::DegenerateDomain(_))
        ));
    }

    #[test]
    fn multiplier_degree_rule() {
        assert_eq!(default_multiplier_degree(14, 2), 12);
        assert_eq!(default_multiplier_degree(7, 2), 4);
        assert_eq!(default_multiplier_degree(2, 4), 0);
    }
}
