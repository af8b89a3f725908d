//! Primal-dual path-following interior-point method.
//!
//! Nesterov-Todd scaling with a Mehrotra predictor-corrector, dense Schur
//! complement, all arithmetic in MPFR floats at the precision requested in
//! [`SolverSettings`]. Free variables are handled by block elimination of
//! the augmented system
//!
//! ```text
//! [ M   B ] [dy]   [h]
//! [ B^T 0 ] [du] = [r_f]
//! ```
//!
//! where `M_ij = sum_b <A_i, W A_j W>` is the usual scaled Schur complement.
//! Infeasibility is reported when the dual (resp. primal) objective diverges
//! past a configurable threshold, not via a homogeneous embedding.

use rug::{Assign, Float, Rational};

use super::{SdpProblem, SdpSolution, Sense, SolveMode, SolveStatus, SolverSettings, SdpError};
use crate::linalg::{max_abs_vec, FloatMat};

/// Sparse symmetric coefficient matrix for one (equality, block) pair.
/// Entries are stored once with `i >= j`; an off-diagonal entry `(i, j, c)`
/// stands for both `A[i][j]` and `A[j][i]` equal to `c`.
#[derive(Clone)]
struct SparseSym {
    entries: Vec<(usize, usize, Float)>,
}

impl SparseSym {
    /// Frobenius inner product with a dense symmetric matrix.
    fn inner(&self, dense: &FloatMat, scratch: &mut Float, acc: &mut Float) {
        acc.assign(0);
        for (i, j, c) in &self.entries {
            scratch.assign(c * dense.at(*i, *j));
            if i != j {
                *scratch *= 2u32;
            }
            *acc += &*scratch;
        }
    }

    /// Adds `w * A` into a dense matrix.
    fn add_scaled_into(&self, w: &Float, dense: &mut FloatMat, scratch: &mut Float) {
        for (i, j, c) in &self.entries {
            scratch.assign(c * w);
            *dense.at_mut(*i, *j) += &*scratch;
            if i != j {
                *dense.at_mut(*j, *i) += &*scratch;
            }
        }
    }

    /// Congruence `W A W` for symmetric `W`, exploiting the sparsity of `A`:
    /// `W A W = sum_{(k,l)} a_kl (W e_k)(W e_l)^T (+ transpose for k != l)`.
    fn congruence(&self, w: &FloatMat, scratch: &mut Float) -> FloatMat {
        let n = w.rows();
        let prec = w.prec();
        let mut out = FloatMat::zeros(prec, n, n);
        let mut fac = Float::new(prec);
        for (k, l, c) in &self.entries {
            for i in 0..n {
                let wik = w.at(i, *k);
                if wik.is_zero() {
                    continue;
                }
                fac.assign(c * wik);
                for j in 0..n {
                    scratch.assign(&fac * w.at(j, *l));
                    *out.at_mut(i, j) += &*scratch;
                }
            }
            if k != l {
                for i in 0..n {
                    let wil = w.at(i, *l);
                    if wil.is_zero() {
                        continue;
                    }
                    fac.assign(c * wil);
                    for j in 0..n {
                        scratch.assign(&fac * w.at(j, *k));
                        *out.at_mut(i, j) += &*scratch;
                    }
                }
            }
        }
        out
    }
}

/// One eliminated free variable: `d_pivot = constant + sum w_v d_v` over
/// variables that survive elimination.
struct Elimination {
    pivot: usize,
    constant: Rational,
    terms: Vec<(usize, Rational)>,
}

/// Substitutes pure-free equality rows (no PSD entries) out of the problem
/// by exact Gaussian elimination. Such rows arise when a body monomial
/// cannot be covered by the Gram basis and its affine coefficient is forced
/// to zero; left in place they make the Schur complement singular.
///
/// Returns the eliminations (in application order) and the objective offset
/// accumulated by substituting into the objective, in the problem's stated
/// sense.
fn eliminate_free_rows(
    p: &mut SdpProblem,
) -> Result<(Vec<Elimination>, Rational), SdpError> {
    let mut eliminations: Vec<Elimination> = Vec::new();
    let mut offset = Rational::new();
    loop {
        let Some(row_idx) = p
            .equalities
            .iter()
            .position(|eq| eq.block_terms.is_empty())
        else {
            break;
        };
        let row = p.equalities.remove(row_idx);
        if row.free_terms.is_empty() {
            if row.rhs != 0 {
                return Err(SdpError::Inconsistent(format!(
                    "free-variable constraints force 0 = {}",
                    row.rhs
                )));
            }
            continue;
        }
        // Pivot on the largest coefficient for stability of the exact
        // arithmetic (keeps numerators small).
        let (pos, _) = row
            .free_terms
            .iter()
            .enumerate()
            .max_by(|(_, (_, a)), (_, (_, b))| {
                Rational::from(a.clone().abs()).cmp(&Rational::from(b.clone().abs()))
            })
            .expect("nonempty terms");
        let (pivot, wp) = row.free_terms[pos].clone();
        // d_pivot = (rhs - sum_{v != pivot} w_v d_v) / w_p.
        let constant = Rational::from(&row.rhs / &wp);
        let terms: Vec<(usize, Rational)> = row
            .free_terms
            .iter()
            .filter(|(v, _)| *v != pivot)
            .map(|(v, w)| (*v, -Rational::from(w / &wp)))
            .collect();

        let substitute = |list: &mut Vec<(usize, Rational)>| -> Rational {
            // Returns the constant contribution c_p * e0 produced by the
            // substitution.
            let mut shift = Rational::new();
            if let Some(pos) = list.iter().position(|(v, _)| *v == pivot) {
                let (_, cp) = list.remove(pos);
                shift = Rational::from(&cp * &constant);
                for (v, w) in &terms {
                    let add = Rational::from(&cp * w);
                    match list.iter_mut().find(|(lv, _)| lv == v) {
                        Some((_, lw)) => *lw += add,
                        None => list.push((*v, add)),
                    }
                }
                list.retain(|(_, w)| *w != 0);
            }
            shift
        };
        for eq in p.equalities.iter_mut() {
            let shift = substitute(&mut eq.free_terms);
            eq.rhs -= shift;
        }
        let obj_shift = substitute(&mut p.objective.free_terms);
        offset += obj_shift;
        eliminations.push(Elimination {
            pivot,
            constant,
            terms,
        });
    }
    Ok((eliminations, offset))
}

/// Problem data converted once to the working precision, with free-variable
/// columns that never appear in any equality removed (their value is fixed
/// to zero and restored on extraction).
struct PreparedData {
    block_dims: Vec<usize>,
    m: usize,
    nf: usize,
    /// `a[eq][block]`, possibly empty per pair.
    a: Vec<Vec<SparseSym>>,
    /// Equality indices touching each block.
    eqs_of_block: Vec<Vec<usize>>,
    /// Dense free-variable matrix, `m x nf`.
    bmat: FloatMat,
    b_rhs: Vec<Float>,
    /// Objective on blocks (dense, usually zero) and free vars, in
    /// internal minimize sense.
    c_blocks: Vec<FloatMat>,
    c_free: Vec<Float>,
    /// +1 if the original sense was minimize, -1 if maximize.
    sense_sign: i32,
    kept_free: Vec<usize>,
    orig_free: usize,
    eliminations: Vec<Elimination>,
    /// Constant added to the reported objective by eliminations (original
    /// sense).
    obj_offset: Rational,
    warnings: Vec<String>,
}

fn prepare(problem: &SdpProblem, prec: u32) -> Result<PreparedData, SdpError> {
    let mut p = problem.clone();
    let mut warnings = p.presolve()?;
    let (eliminations, obj_offset) = eliminate_free_rows(&mut p)?;
    if !eliminations.is_empty() {
        warnings.push(format!(
            "eliminated {} free variable(s) via linear equality rows",
            eliminations.len()
        ));
    }

    // Drop free variables that appear in no equality; they are unconstrained
    // and only well-defined if absent from the objective too. Eliminated
    // pivots are reconstructed later, not dropped.
    let mut used = vec![false; p.free_vars];
    for eq in &p.equalities {
        for &(k, _) in &eq.free_terms {
            used[k] = true;
        }
    }
    for &(k, _) in &p.objective.free_terms {
        if !used[k] {
            return Err(SdpError::Inconsistent(format!(
                "objective references free variable {k} absent from all equalities (unbounded)"
            )));
        }
    }
    let kept_free: Vec<usize> = (0..p.free_vars).filter(|&k| used[k]).collect();
    let pivot_count = eliminations.len();
    if kept_free.len() + pivot_count != p.free_vars {
        warnings.push(format!(
            "fixed {} unconstrained free variable(s) to zero",
            p.free_vars - kept_free.len() - pivot_count
        ));
    }
    let remap: Vec<Option<usize>> = {
        let mut r = vec![None; p.free_vars];
        for (new, &old) in kept_free.iter().enumerate() {
            r[old] = Some(new);
        }
        r
    };

    let m = p.equalities.len();
    let nf = kept_free.len();
    let nblocks = p.blocks.len();
    let empty = SparseSym { entries: Vec::new() };
    let mut a = vec![vec![empty.clone(); nblocks]; m];
    let mut bmat = FloatMat::zeros(prec, m, nf);
    let mut b_rhs: Vec<Float> = Vec::with_capacity(m);
    let mut eqs_of_block = vec![Vec::new(); nblocks];
    for (idx, eq) in p.equalities.iter().enumerate() {
        for &(bl, i, j, ref c) in &eq.block_terms {
            a[idx][bl]
                .entries
                .push((i, j, Float::with_val(prec, c)));
        }
        for &(k, ref c) in &eq.free_terms {
            let nk = remap[k].expect("kept free var");
            *bmat.at_mut(idx, nk) += &Float::with_val(prec, c);
        }
        for bl in 0..nblocks {
            if !a[idx][bl].entries.is_empty() {
                eqs_of_block[bl].push(idx);
            }
        }
        b_rhs.push(Float::with_val(prec, &eq.rhs));
    }

    let sense_sign = match p.objective.sense {
        Sense::Minimize => 1,
        Sense::Maximize => -1,
    };
    let mut c_blocks: Vec<FloatMat> = p
        .blocks
        .iter()
        .map(|&d| FloatMat::zeros(prec, d, d))
        .collect();
    for &(bl, i, j, ref c) in &p.objective.block_terms {
        let v = Float::with_val(prec, c) * sense_sign;
        *c_blocks[bl].at_mut(i, j) += &v;
        if i != j {
            *c_blocks[bl].at_mut(j, i) += &v;
        }
    }
    let mut c_free: Vec<Float> = vec![Float::new(prec); nf];
    for &(k, ref c) in &p.objective.free_terms {
        if let Some(nk) = remap[k] {
            c_free[nk] += &(Float::with_val(prec, c) * sense_sign);
        }
    }

    Ok(PreparedData {
        block_dims: p.blocks.clone(),
        m,
        nf,
        a,
        eqs_of_block,
        bmat,
        b_rhs,
        c_blocks,
        c_free,
        sense_sign,
        kept_free,
        orig_free: problem.free_vars,
        eliminations,
        obj_offset,
        warnings,
    })
}

struct Iterate {
    x: Vec<FloatMat>,
    s: Vec<FloatMat>,
    y: Vec<Float>,
    u: Vec<Float>,
}

struct Residuals {
    r_p: Vec<Float>,
    r_d: Vec<FloatMat>,
    r_f: Vec<Float>,
    rel_p: Float,
    rel_d: Float,
    mu: Float,
    xs_inner: Float,
    pobj: Float,
    dobj: Float,
}

fn residuals(data: &PreparedData, it: &Iterate, prec: u32) -> Residuals {
    let mut scratch = Float::new(prec);
    let mut acc = Float::new(prec);
    // Primal residual.
    let mut r_p = Vec::with_capacity(data.m);
    for i in 0..data.m {
        let mut r = data.b_rhs[i].clone();
        for (bl, x) in it.x.iter().enumerate() {
            if data.a[i][bl].entries.is_empty() {
                continue;
            }
            data.a[i][bl].inner(x, &mut scratch, &mut acc);
            r -= &acc;
        }
        for k in 0..data.nf {
            scratch.assign(data.bmat.at(i, k) * &it.u[k]);
            r -= &scratch;
        }
        r_p.push(r);
    }
    // Dual residual per block: R_d = C - S - sum y_i A_i.
    let mut r_d = Vec::with_capacity(data.block_dims.len());
    for (bl, &dim) in data.block_dims.iter().enumerate() {
        let mut rd = data.c_blocks[bl].sub(&it.s[bl]);
        let _ = dim;
        for &i in &data.eqs_of_block[bl] {
            let negy = (-it.y[i].clone()).clone();
            data.a[i][bl].add_scaled_into(&negy, &mut rd, &mut scratch);
        }
        r_d.push(rd);
    }
    // Free dual residual: r_f = c_f - B^T y.
    let mut r_f = Vec::with_capacity(data.nf);
    for k in 0..data.nf {
        let mut r = data.c_free[k].clone();
        for i in 0..data.m {
            scratch.assign(data.bmat.at(i, k) * &it.y[i]);
            r -= &scratch;
        }
        r_f.push(r);
    }

    let mut xs_inner = Float::new(prec);
    let mut total_dim = 0usize;
    for (x, s) in it.x.iter().zip(&it.s) {
        xs_inner += x.inner(s);
        total_dim += x.rows();
    }
    let mu = xs_inner.clone() / Float::with_val(prec, total_dim.max(1) as u32);

    let mut pobj = Float::new(prec);
    for (c, x) in data.c_blocks.iter().zip(&it.x) {
        pobj += c.inner(x);
    }
    for (c, u) in data.c_free.iter().zip(&it.u) {
        scratch.assign(c * u);
        pobj += &scratch;
    }
    let mut dobj = Float::new(prec);
    for (b, y) in data.b_rhs.iter().zip(&it.y) {
        scratch.assign(b * y);
        dobj += &scratch;
    }

    let b_scale = Float::with_val(prec, 1) + max_abs_vec(&data.b_rhs);
    let rel_p = max_abs_vec(&r_p) / b_scale;
    let mut c_scale = Float::with_val(prec, 1);
    for c in &data.c_blocks {
        let m = c.max_abs();
        if m > c_scale {
            c_scale = m;
        }
    }
    let cf_max = max_abs_vec(&data.c_free);
    if cf_max > c_scale {
        c_scale = cf_max;
    }
    let mut rd_max = Float::new(prec);
    for rd in &r_d {
        let m = rd.max_abs();
        if m > rd_max {
            rd_max = m;
        }
    }
    let rf_max = max_abs_vec(&r_f);
    if rf_max > rd_max {
        rd_max = rf_max;
    }
    let rel_d = rd_max / c_scale;

    Residuals {
        r_p,
        r_d,
        r_f,
        rel_p,
        rel_d,
        mu,
        xs_inner,
        pobj,
        dobj,
    }
}

/// Largest step `alpha` with `X + alpha dX` staying PSD, capped at 1, using
/// the minimum eigenvalue of `L^-1 dX L^-T`. The eigensolve runs at reduced
/// precision: step lengths only gate the fraction-to-boundary rule, so 128
/// bits is ample and much cheaper at high working precisions.
fn max_step(lx: &FloatMat, dx: &FloatMat, prec: u32) -> Float {
    let y = lx.solve_lower_mat(dx);
    let b = lx.solve_lower_mat(&y.transpose());
    let mut sym = b.with_prec(prec.min(128));
    sym.symmetrize();
    let lam_min = match sym.min_eigenvalue() {
        Ok(l) => l,
        Err(_) => return Float::with_val(prec, 1e-3),
    };
    if lam_min >= 0 {
        Float::with_val(prec, 1)
    } else {
        let mut a = Float::with_val(prec, lam_min.recip());
        a = -a;
        // Shave the reduced-precision eigenvalue error off the step.
        a *= Float::with_val(prec, 1.0 - 1e-20);
        if a > 1 {
            Float::with_val(prec, 1)
        } else {
            a
        }
    }
}

struct Direction {
    dx: Vec<FloatMat>,
    ds: Vec<FloatMat>,
    dy: Vec<Float>,
    du: Vec<Float>,
}

/// Factorized augmented system, reusable across predictor and corrector.
struct SchurSystem {
    lm: FloatMat,
    /// `M^-1 B` (empty when there are no free variables).
    g: FloatMat,
    /// Cholesky factor of `B^T M^-1 B`.
    ln: Option<FloatMat>,
}

impl SchurSystem {
    fn solve(&self, data: &PreparedData, h: &[Float], r_f: &[Float], prec: u32) -> (Vec<Float>, Vec<Float>) {
        let w1 = self.lm.chol_solve(h);
        if data.nf == 0 {
            return (w1, Vec::new());
        }
        let ln = self.ln.as_ref().expect("free-var system factorized");
        let mut rhs: Vec<Float> = Vec::with_capacity(data.nf);
        let mut scratch = Float::new(prec);
        for k in 0..data.nf {
            let mut acc = -r_f[k].clone();
            for i in 0..data.m {
                scratch.assign(data.bmat.at(i, k) * &w1[i]);
                acc += &scratch;
            }
            rhs.push(acc);
        }
        let du = ln.chol_solve(&rhs);
        let mut dy = w1;
        for i in 0..data.m {
            for k in 0..data.nf {
                scratch.assign(self.g.at(i, k) * &du[k]);
                dy[i] -= &scratch;
            }
        }
        (dy, du)
    }
}

fn compute_direction(
    data: &PreparedData,
    schur: &SchurSystem,
    w: &[FloatMat],
    res: &Residuals,
    r_c: &[FloatMat],
    prec: u32,
) -> Direction {
    let mut scratch = Float::new(prec);
    let mut acc = Float::new(prec);
    // R_x = R_c - W R_d W; h = r_p - A(R_x).
    let mut h: Vec<Float> = res.r_p.clone();
    let mut r_x: Vec<FloatMat> = Vec::with_capacity(w.len());
    for (bl, wb) in w.iter().enumerate() {
        let wrw = wb.matmul(&res.r_d[bl]).matmul(wb);
        let rx = r_c[bl].sub(&wrw);
        for &i in &data.eqs_of_block[bl] {
            data.a[i][bl].inner(&rx, &mut scratch, &mut acc);
            h[i] -= &acc;
        }
        r_x.push(rx);
    }
    let (dy, du) = schur.solve(data, &h, &res.r_f, prec);
    // dS = R_d - A*(dy); dX = R_c - W dS W.
    let mut dx = Vec::with_capacity(w.len());
    let mut ds = Vec::with_capacity(w.len());
    for (bl, wb) in w.iter().enumerate() {
        let mut dsb = res.r_d[bl].clone();
        for &i in &data.eqs_of_block[bl] {
            let negy = -dy[i].clone();
            data.a[i][bl].add_scaled_into(&negy, &mut dsb, &mut scratch);
        }
        let mut dxb = r_c[bl].sub(&wb.matmul(&dsb).matmul(wb));
        dxb.symmetrize();
        dsb.symmetrize();
        dx.push(dxb);
        ds.push(dsb);
    }
    Direction { dx, ds, dy, du }
}

/// Solves the SDP. Infeasible or unbounded problems surface as a status,
/// not an error; errors are reserved for malformed input.
pub fn solve(problem: &SdpProblem, settings: &SolverSettings) -> Result<SdpSolution, SdpError> {
    solve_from(problem, settings, None)
}

/// Warm-start data: a previous solution of the *same* problem plus a
/// centering push added to the block diagonals.
struct WarmStart<'a> {
    previous: &'a SdpSolution,
    push: Float,
}

fn solve_from(
    problem: &SdpProblem,
    settings: &SolverSettings,
    warm: Option<WarmStart<'_>>,
) -> Result<SdpSolution, SdpError> {
    settings.validate()?;
    let prec = settings.prec;
    let data = prepare(problem, prec)?;

    let mut it = match &warm {
        Some(ws) if ws.previous.y.len() == data.m => {
            let x = ws
                .previous
                .blocks
                .iter()
                .map(|b| {
                    let mut m = b.with_prec(prec);
                    for i in 0..m.rows() {
                        *m.at_mut(i, i) += &ws.push;
                    }
                    m
                })
                .collect();
            let s = ws
                .previous
                .dual_blocks
                .iter()
                .map(|b| {
                    let mut m = b.with_prec(prec);
                    for i in 0..m.rows() {
                        *m.at_mut(i, i) += &ws.push;
                    }
                    m
                })
                .collect();
            let y = ws
                .previous
                .y
                .iter()
                .map(|v| Float::with_val(prec, v))
                .collect();
            let u = data
                .kept_free
                .iter()
                .map(|&old| Float::with_val(prec, &ws.previous.free_values[old]))
                .collect();
            Iterate { x, s, y, u }
        }
        _ => Iterate {
            x: data
                .block_dims
                .iter()
                .map(|&d| {
                    FloatMat::scaled_identity(
                        prec,
                        d,
                        &Float::with_val(prec, settings.initial_radius),
                    )
                })
                .collect(),
            s: data
                .block_dims
                .iter()
                .map(|&d| {
                    FloatMat::scaled_identity(
                        prec,
                        d,
                        &Float::with_val(prec, settings.initial_radius),
                    )
                })
                .collect(),
            y: vec![Float::new(prec); data.m],
            u: vec![Float::new(prec); data.nf],
        },
    };

    let tol_feas = Float::with_val(prec, settings.tol_feas);
    let tol_gap = Float::with_val(prec, settings.tol_gap);
    let tau = Float::with_val(prec, settings.step_frac);
    let mut status = SolveStatus::IterLimit;
    let mut iterations = 0usize;
    let mut tiny_steps = 0usize;
    let mut best_quality: Option<Float> = None;
    let mut stagnant = 0usize;
    let mut scratch = Float::new(prec);

    let mut final_res = residuals(&data, &it, prec);
    for iter in 0..settings.max_iter {
        iterations = iter + 1;
        let res = residuals(&data, &it, prec);

        let gap_rel = {
            let denom = Float::with_val(prec, 1)
                + res.pobj.clone().abs()
                + res.dobj.clone().abs();
            res.xs_inner.clone().abs() / denom
        };
        if settings.trace {
            eprintln!(
                "it {iter:3} mu {:9.2e} rp {:9.2e} rd {:9.2e} gap {:9.2e} pobj {:13.6e} dobj {:13.6e}",
                res.mu.to_f64(),
                res.rel_p.to_f64(),
                res.rel_d.to_f64(),
                gap_rel.to_f64(),
                res.pobj.to_f64(),
                res.dobj.to_f64()
            );
        }
        let converged_feas = res.rel_p <= tol_feas && res.rel_d <= tol_feas;
        if converged_feas && gap_rel <= tol_gap {
            status = SolveStatus::Optimal;
            final_res = res;
            break;
        }
        if let SolveMode::FeasibilityMargin { target } = settings.mode {
            // Margin objective is maximized; internal sense is minimize of
            // the negated objective.
            let margin_val = -res.pobj.clone();
            if res.rel_p <= tol_feas && margin_val >= target {
                status = SolveStatus::Optimal;
                final_res = res;
                break;
            }
        }
        // Divergence-based infeasibility certificates.
        if res.dobj > settings.infeas_threshold {
            status = SolveStatus::PrimalInfeasible;
            final_res = res;
            break;
        }
        if res.pobj < -settings.infeas_threshold {
            status = SolveStatus::DualInfeasible;
            final_res = res;
            break;
        }
        // Stall detection: quality is the worst of the three measures.
        let quality = {
            let mut q = res.rel_p.clone();
            if res.rel_d > q {
                q = res.rel_d.clone();
            }
            if gap_rel > q {
                q = gap_rel.clone();
            }
            q
        };
        match &best_quality {
            Some(b) if quality >= b.clone() * Float::with_val(prec, 0.9999) => stagnant += 1,
            _ => {
                best_quality = Some(quality);
                stagnant = 0;
            }
        }
        if stagnant > 30 || tiny_steps >= 3 {
            status = SolveStatus::Stalled;
            final_res = res;
            break;
        }

        // Nesterov-Todd scaling W_b = L (L^T S L)^{-1/2} L^T per block,
        // where L is the Cholesky factor of X.
        let mut w = Vec::with_capacity(it.x.len());
        let mut lx_factors = Vec::with_capacity(it.x.len());
        let mut ls_factors = Vec::with_capacity(it.x.len());
        let mut scaling_failed = false;
        for bl in 0..it.x.len() {
            let lx = match it.x[bl].cholesky_perturbed() {
                Ok((l, _)) => l,
                Err(_) => {
                    scaling_failed = true;
                    break;
                }
            };
            let ls = match it.s[bl].cholesky_perturbed() {
                Ok((l, _)) => l,
                Err(_) => {
                    scaling_failed = true;
                    break;
                }
            };
            let a = lx.t_matmul(&it.s[bl].matmul(&lx));
            let mut asym = a;
            asym.symmetrize();
            let inv_sqrt = match asym.sym_map(|l| {
                if *l <= 0 {
                    // Guard against rounding-negative eigenvalues.
                    Float::with_val(prec, 2f64.powi((prec as i32) / 2))
                } else {
                    l.clone().sqrt().recip()
                }
            }) {
                Ok(m) => m,
                Err(_) => {
                    scaling_failed = true;
                    break;
                }
            };
            let mut wb = lx.matmul(&inv_sqrt).matmul(&lx.transpose());
            wb.symmetrize();
            w.push(wb);
            lx_factors.push(lx);
            ls_factors.push(ls);
        }
        if scaling_failed {
            status = SolveStatus::Stalled;
            final_res = res;
            break;
        }

        // Schur complement M and the free-variable reduction.
        let mut mmat = FloatMat::zeros(prec, data.m, data.m);
        for bl in 0..it.x.len() {
            let eqs = &data.eqs_of_block[bl];
            for (pos, &j) in eqs.iter().enumerate() {
                let t = data.a[j][bl].congruence(&w[bl], &mut scratch);
                let mut acc = Float::new(prec);
                for &i in &eqs[..=pos] {
                    data.a[i][bl].inner(&t, &mut scratch, &mut acc);
                    *mmat.at_mut(i, j) += &acc;
                    if i != j {
                        let v = mmat.at(i, j).clone();
                        mmat.set(j, i, &v);
                    }
                }
            }
        }
        let lm = match mmat.cholesky_perturbed() {
            Ok((l, _)) => l,
            Err(_) => {
                status = SolveStatus::Stalled;
                final_res = res;
                break;
            }
        };
        let schur = if data.nf > 0 {
            let g = {
                // Column-wise M^-1 B.
                let mut g = FloatMat::zeros(prec, data.m, data.nf);
                let mut col: Vec<Float> = vec![Float::new(prec); data.m];
                for k in 0..data.nf {
                    for i in 0..data.m {
                        col[i].assign(data.bmat.at(i, k));
                    }
                    let sol = lm.chol_solve(&col);
                    for i in 0..data.m {
                        g.set(i, k, &sol[i]);
                    }
                }
                g
            };
            let nmat = data.bmat.t_matmul(&g);
            let mut nsym = nmat;
            nsym.symmetrize();
            let ln = match nsym.cholesky_perturbed() {
                Ok((l, _)) => l,
                Err(_) => {
                    status = SolveStatus::Stalled;
                    final_res = res;
                    break;
                }
            };
            SchurSystem { lm, g, ln: Some(ln) }
        } else {
            SchurSystem {
                lm,
                g: FloatMat::zeros(prec, data.m, 0),
                ln: None,
            }
        };

        // Predictor: affine direction (sigma = 0, R_c = -X).
        let r_c_aff: Vec<FloatMat> = it.x.iter().map(|x| x.scale(&Float::with_val(prec, -1))).collect();
        let aff = compute_direction(&data, &schur, &w, &res, &r_c_aff, prec);
        let mut alpha_p_aff = Float::with_val(prec, 1);
        let mut alpha_d_aff = Float::with_val(prec, 1);
        for bl in 0..it.x.len() {
            let ap = max_step(&lx_factors[bl], &aff.dx[bl], prec);
            if ap < alpha_p_aff {
                alpha_p_aff = ap;
            }
            let ad = max_step(&ls_factors[bl], &aff.ds[bl], prec);
            if ad < alpha_d_aff {
                alpha_d_aff = ad;
            }
        }
        // mu after the affine step.
        let mut mu_aff = Float::new(prec);
        let mut total_dim = 0usize;
        for bl in 0..it.x.len() {
            let xa = {
                let mut t = it.x[bl].clone();
                t.axpy(&alpha_p_aff, &aff.dx[bl]);
                t
            };
            let sa = {
                let mut t = it.s[bl].clone();
                t.axpy(&alpha_d_aff, &aff.ds[bl]);
                t
            };
            mu_aff += xa.inner(&sa);
            total_dim += xa.rows();
        }
        mu_aff /= Float::with_val(prec, total_dim.max(1) as u32);
        let sigma = {
            let ratio = mu_aff / &res.mu;
            let mut s = ratio.clone() * &ratio * &ratio;
            if s > 1 {
                s.assign(1);
            }
            if s < 1e-12 {
                s.assign(1e-12);
            }
            s
        };

        // Corrector: R_c = sigma mu S^{-1} - X - sym(dX_aff dS_aff S^{-1}).
        // The second-order term can point far outside the cone near the
        // central-path boundary (S^{-1} blows up), so a centering-only
        // direction is kept as a fallback and the better step is taken.
        let mut r_c_center = Vec::with_capacity(it.x.len());
        let mut r_c = Vec::with_capacity(it.x.len());
        for bl in 0..it.x.len() {
            let s_inv = ls_factors[bl].chol_inverse();
            let target = sigma.clone() * &res.mu;
            let mut center = s_inv.scale(&target);
            center = center.sub(&it.x[bl]);
            center.symmetrize();
            let second = aff.dx[bl].matmul(&aff.ds[bl]).matmul(&s_inv);
            let mut second_sym = second.add(&second.transpose());
            second_sym = second_sym.scale(&Float::with_val(prec, 0.5));
            let mut rc = center.sub(&second_sym);
            rc.symmetrize();
            r_c_center.push(center);
            r_c.push(rc);
        }
        let step_pair = |dir: &Direction| -> (Float, Float) {
            let mut ap = Float::with_val(prec, 1);
            let mut ad = Float::with_val(prec, 1);
            for bl in 0..it.x.len() {
                let a = max_step(&lx_factors[bl], &dir.dx[bl], prec);
                if a < ap {
                    ap = a;
                }
                let a = max_step(&ls_factors[bl], &dir.ds[bl], prec);
                if a < ad {
                    ad = a;
                }
            }
            (ap, ad)
        };
        let mut dir = compute_direction(&data, &schur, &w, &res, &r_c, prec);
        let (mut alpha_p, mut alpha_d) = step_pair(&dir);
        let quality = |p: &Float, d: &Float| if p < d { p.clone() } else { d.clone() };
        let q_aff = quality(&alpha_p_aff, &alpha_d_aff);
        if quality(&alpha_p, &alpha_d) < q_aff.clone() * Float::with_val(prec, 0.5) {
            let center_dir = compute_direction(&data, &schur, &w, &res, &r_c_center, prec);
            let (cp, cd) = step_pair(&center_dir);
            if quality(&cp, &cd) > quality(&alpha_p, &alpha_d) {
                dir = center_dir;
                alpha_p = cp;
                alpha_d = cd;
            }
        }
        // Iterated correctors: re-estimate the second-order term with the
        // current direction and keep the refinement while it lengthens the
        // step. Factorizations are reused, so each pass costs only
        // right-hand-side solves and step-length eigenvalue checks.
        for _ in 0..3 {
            let q_now = quality(&alpha_p, &alpha_d);
            if q_now > 0.9 {
                break;
            }
            let mut r_c_it = Vec::with_capacity(it.x.len());
            for bl in 0..it.x.len() {
                let s_inv = ls_factors[bl].chol_inverse();
                let second = dir.dx[bl].matmul(&dir.ds[bl]).matmul(&s_inv);
                let mut second_sym = second.add(&second.transpose());
                second_sym = second_sym.scale(&Float::with_val(prec, 0.5));
                let mut rc = r_c_center[bl].sub(&second_sym);
                rc.symmetrize();
                r_c_it.push(rc);
            }
            let cand = compute_direction(&data, &schur, &w, &res, &r_c_it, prec);
            let (cp, cd) = step_pair(&cand);
            if quality(&cp, &cd) > q_now * Float::with_val(prec, 1.05) {
                dir = cand;
                alpha_p = cp;
                alpha_d = cd;
            } else {
                break;
            }
        }
        alpha_p *= &tau;
        alpha_d *= &tau;
        if alpha_p > 1 {
            alpha_p.assign(1);
        }
        if alpha_d > 1 {
            alpha_d.assign(1);
        }
        if settings.trace {
            eprintln!(
                "      sigma {:9.2e} a_aff ({:9.2e},{:9.2e}) alpha ({:9.2e},{:9.2e})",
                sigma.to_f64(),
                alpha_p_aff.to_f64(),
                alpha_d_aff.to_f64(),
                alpha_p.to_f64(),
                alpha_d.to_f64()
            );
        }
        if alpha_p < 1e-10 && alpha_d < 1e-10 {
            tiny_steps += 1;
        } else {
            tiny_steps = 0;
        }

        for bl in 0..it.x.len() {
            it.x[bl].axpy(&alpha_p, &dir.dx[bl]);
            it.s[bl].axpy(&alpha_d, &dir.ds[bl]);
        }
        for k in 0..data.nf {
            scratch.assign(&alpha_p * &dir.du[k]);
            it.u[k] += &scratch;
        }
        for i in 0..data.m {
            scratch.assign(&alpha_d * &dir.dy[i]);
            it.y[i] += &scratch;
        }
        final_res = residuals(&data, &it, prec);
    }

    // Translate back to the original sense and free-variable indexing, and
    // reconstruct eliminated variables in reverse order (later expressions
    // never reference earlier pivots).
    let sense = Float::with_val(prec, data.sense_sign);
    let offset = Float::with_val(prec, &data.obj_offset);
    let objective = final_res.pobj.clone() * &sense + &offset;
    let dual_objective = final_res.dobj.clone() * &sense + &offset;
    let mut free_values: Vec<Float> = vec![Float::new(prec); data.orig_free];
    for (new, &old) in data.kept_free.iter().enumerate() {
        free_values[old].assign(&it.u[new]);
    }
    let mut scratch2 = Float::new(prec);
    for elim in data.eliminations.iter().rev() {
        let mut v = Float::with_val(prec, &elim.constant);
        for (var, w) in &elim.terms {
            scratch2.assign(&free_values[*var] * Float::with_val(prec, w));
            v += &scratch2;
        }
        free_values[elim.pivot] = v;
    }
    let gap_rel = {
        let denom = Float::with_val(prec, 1)
            + final_res.pobj.clone().abs()
            + final_res.dobj.clone().abs();
        final_res.xs_inner.clone().abs() / denom
    };

    let mut solution = SdpSolution {
        status,
        blocks: it.x,
        free_values,
        objective,
        dual_objective,
        primal_residual: final_res.rel_p.clone(),
        dual_residual: final_res.rel_d.clone(),
        gap: gap_rel,
        iterations,
        y: it.y,
        dual_blocks: it.s,
        warnings: data.warnings.clone(),
    };
    if solution.status == SolveStatus::IterLimit {
        // An iterate that already meets the tolerances is still optimal.
        if solution.primal_residual <= tol_feas
            && solution.dual_residual <= tol_feas
            && solution.gap <= tol_gap
        {
            solution.status = SolveStatus::Optimal;
        }
    }
    Ok(solution)
}

/// Re-solves at a (typically higher) precision, warm-starting from a
/// previous solution of the same problem, and reports the relative objective
/// drift. Falls back to a cold start if the warm start stalls.
pub fn refine(
    problem: &SdpProblem,
    warm: &SdpSolution,
    settings: &SolverSettings,
) -> Result<(SdpSolution, Float), SdpError> {
    settings.validate()?;
    // Recenter by adding sqrt(mu) I to both X and S; with the iterate near
    // optimality this keeps the first Newton systems well conditioned.
    let prec = settings.prec;
    let mut total_dim = 0usize;
    let mut xs = Float::new(prec);
    for (x, s) in warm.blocks.iter().zip(&warm.dual_blocks) {
        let xp = x.with_prec(prec);
        let sp = s.with_prec(prec);
        xs += xp.inner(&sp);
        total_dim += x.rows();
    }
    let mu = xs / Float::with_val(prec, total_dim.max(1) as u32);
    let push = if mu <= 0 {
        Float::with_val(prec, 1e-8)
    } else {
        mu.sqrt()
    };

    let solved = solve_from(
        problem,
        settings,
        Some(WarmStart {
            previous: warm,
            push,
        }),
    )?;
    let solved = match solved.status {
        SolveStatus::Stalled | SolveStatus::IterLimit => solve(problem, settings)?,
        _ => solved,
    };
    let drift = {
        let old = warm.objective.clone().abs();
        let mut d = solved.objective.clone() - Float::with_val(prec, &warm.objective);
        d.abs_mut();
        let denom = Float::with_val(prec, 1) + old;
        d / denom
    };
    Ok((solved, drift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::{LinearEq, Objective};
    use rug::Rational;

    fn settings128() -> SolverSettings {
        SolverSettings::with_prec(128)
    }

    /// min t s.t. diag(t, t) >= 0 -> t* = 0.
    #[test]
    fn smallest_psd_scaling() {
        let problem = SdpProblem {
            blocks: vec![2],
            free_vars: 1,
            equalities: vec![
                LinearEq {
                    block_terms: vec![(0, 0, 0, Rational::from(1))],
                    free_terms: vec![(0, Rational::from(-1))],
                    rhs: Rational::new(),
                },
                LinearEq {
                    block_terms: vec![(0, 1, 1, Rational::from(1))],
                    free_terms: vec![(0, Rational::from(-1))],
                    rhs: Rational::new(),
                },
                LinearEq {
                    block_terms: vec![(0, 1, 0, Rational::from(1))],
                    free_terms: vec![],
                    rhs: Rational::new(),
                },
            ],
            objective: Objective::single_free(Sense::Minimize, 0),
        };
        let sol = solve(&problem, &settings128()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.objective.clone().abs().to_f64() < 1e-10);
    }

    /// Classic 2x2 test: min x11 + x22 s.t. x12 = 1, X >= 0. Optimum is 2
    /// at X = ones.
    #[test]
    fn rank_one_completion() {
        let problem = SdpProblem {
            blocks: vec![2],
            free_vars: 0,
            equalities: vec![LinearEq {
                block_terms: vec![(0, 1, 0, Rational::from(1))],
                free_terms: vec![],
                rhs: Rational::from(2),
            }],
            objective: Objective {
                sense: Sense::Minimize,
                block_terms: vec![(0, 0, 0, Rational::from(1)), (0, 1, 1, Rational::from(1))],
                free_terms: vec![],
            },
        };
        let sol = solve(&problem, &settings128()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective.to_f64() - 2.0).abs() < 1e-9);
    }

    /// Infeasible: X11 = -1 with X PSD.
    #[test]
    fn detects_primal_infeasibility() {
        let problem = SdpProblem {
            blocks: vec![1],
            free_vars: 0,
            equalities: vec![LinearEq {
                block_terms: vec![(0, 0, 0, Rational::from(1))],
                free_terms: vec![],
                rhs: Rational::from(-1),
            }],
            objective: Objective::feasibility(),
        };
        let sol = solve(&problem, &settings128()).unwrap();
        assert_eq!(sol.status, SolveStatus::PrimalInfeasible);
    }
}
