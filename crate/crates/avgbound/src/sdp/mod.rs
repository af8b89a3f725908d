//! Standard-form semidefinite programs and their extended-precision solver.
//!
//! A problem consists of symmetric PSD matrix blocks, free scalar variables,
//! linear equality constraints over both, and a linear objective. Problem
//! data is exact rational; the solver rounds once to the working precision.

mod serialize;
mod solver;

pub use serialize::{problem_from_text, problem_to_text, solution_to_text};
pub use solver::{refine, solve};

use rug::{Float, Rational};
use thiserror::Error;

use crate::linalg::FloatMat;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("equality {index} references out-of-range entry: {what}")]
    BadIndex { index: usize, what: String },
    #[error("structurally inconsistent equalities: {0}")]
    Inconsistent(String),
    #[error("invalid solver settings: {0}")]
    BadSettings(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// One linear equality `sum <A_b, X_b> + sum c_k u_k = rhs`.
///
/// A block term `(block, i, j, c)` with `i >= j` denotes the symmetric
/// coefficient matrix with `A[i][j] = A[j][i] = c`, so an off-diagonal term
/// contributes `2 c X[i][j]` to the functional.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearEq {
    pub block_terms: Vec<(usize, usize, usize, Rational)>,
    pub free_terms: Vec<(usize, Rational)>,
    pub rhs: Rational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Linear objective over block entries and free scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub sense: Sense,
    pub block_terms: Vec<(usize, usize, usize, Rational)>,
    pub free_terms: Vec<(usize, Rational)>,
}

impl Objective {
    pub fn feasibility() -> Self {
        Objective {
            sense: Sense::Minimize,
            block_terms: Vec::new(),
            free_terms: Vec::new(),
        }
    }

    pub fn single_free(sense: Sense, index: usize) -> Self {
        Objective {
            sense,
            block_terms: Vec::new(),
            free_terms: vec![(index, Rational::from(1))],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    /// Dimensions of the PSD blocks.
    pub blocks: Vec<usize>,
    /// Number of free scalar variables.
    pub free_vars: usize,
    pub equalities: Vec<LinearEq>,
    pub objective: Objective,
}

impl SdpProblem {
    /// Structural validation: index ranges, canonical lower-triangle
    /// references, empty or duplicate rows. Duplicate rows with equal
    /// right-hand sides are dropped; with different right-hand sides the
    /// problem is reported inconsistent.
    pub fn presolve(&mut self) -> Result<Vec<String>, SdpError> {
        let mut warnings = Vec::new();
        for (idx, eq) in self.equalities.iter().enumerate() {
            for &(b, i, j, _) in &eq.block_terms {
                if b >= self.blocks.len() || i >= self.blocks[b] || j > i {
                    return Err(SdpError::BadIndex {
                        index: idx,
                        what: format!("block term ({b},{i},{j})"),
                    });
                }
            }
            for &(k, _) in &eq.free_terms {
                if k >= self.free_vars {
                    return Err(SdpError::BadIndex {
                        index: idx,
                        what: format!("free term {k}"),
                    });
                }
            }
        }
        let mut seen: Vec<(String, Rational, usize)> = Vec::new();
        let mut keep = vec![true; self.equalities.len()];
        for (idx, eq) in self.equalities.iter().enumerate() {
            if eq.block_terms.is_empty() && eq.free_terms.is_empty() {
                if eq.rhs != 0 {
                    return Err(SdpError::Inconsistent(format!(
                        "equality {idx} has empty support and nonzero rhs {}",
                        eq.rhs
                    )));
                }
                warnings.push(format!("dropping empty equality row {idx}"));
                keep[idx] = false;
                continue;
            }
            let mut sig_terms: Vec<String> = eq
                .block_terms
                .iter()
                .map(|(b, i, j, c)| format!("b{b}:{i}:{j}:{c}"))
                .chain(eq.free_terms.iter().map(|(k, c)| format!("f{k}:{c}")))
                .collect();
            sig_terms.sort();
            let sig = sig_terms.join(";");
            if let Some((_, rhs, first)) = seen.iter().find(|(s, _, _)| *s == sig) {
                if *rhs == eq.rhs {
                    warnings.push(format!("dropping duplicate equality row {idx} (= row {first})"));
                    keep[idx] = false;
                } else {
                    return Err(SdpError::Inconsistent(format!(
                        "equality rows {first} and {idx} share support but differ in rhs"
                    )));
                }
            } else {
                seen.push((sig, eq.rhs.clone(), idx));
            }
        }
        let mut it = keep.iter();
        self.equalities.retain(|_| *it.next().unwrap());
        Ok(warnings)
    }

    /// Adds a margin variable `t` so every PSD block `X_b` stands for
    /// `X_b^orig - t I`. Maximizing `t` turns a feasibility question into
    /// "how far inside the cone can we go"; the original blocks are
    /// recovered as `X_b + t I`.
    ///
    /// Returns the free index of `t`.
    pub fn add_margin_variable(&mut self) -> usize {
        let t_index = self.free_vars;
        self.free_vars += 1;
        for eq in &mut self.equalities {
            let mut tcoeff = Rational::new();
            for &(_, i, j, ref c) in &eq.block_terms {
                if i == j {
                    tcoeff += c;
                }
            }
            if tcoeff != 0 {
                eq.free_terms.push((t_index, tcoeff));
            }
        }
        self.objective = Objective::single_free(Sense::Maximize, t_index);
        t_index
    }

    pub fn num_equalities(&self) -> usize {
        self.equalities.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    Stalled,
    IterLimit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveMode {
    Optimize,
    /// Stop as soon as primal/dual residuals meet tolerance and the margin
    /// objective (by convention the last free variable) exceeds the given
    /// value.
    FeasibilityMargin { target: f64 },
}

#[derive(Debug, Clone)]
pub struct SolverSettings {
    /// Working mantissa bits (>= 53).
    pub prec: u32,
    pub max_iter: usize,
    /// Relative primal/dual feasibility tolerance.
    pub tol_feas: f64,
    /// Relative duality-gap tolerance.
    pub tol_gap: f64,
    /// Fraction-to-the-boundary step factor, in (0, 1).
    pub step_frac: f64,
    pub mode: SolveMode,
    /// Dual (resp. primal) objective magnitude treated as divergence, i.e.
    /// as an infeasibility certificate.
    pub infeas_threshold: f64,
    /// Initial iterate is `radius * I` on every block.
    pub initial_radius: f64,
    /// Print per-iteration progress to stderr.
    pub trace: bool,
}

impl SolverSettings {
    /// Defaults scaled to the working precision: tolerances leave roughly
    /// half of the mantissa as headroom.
    pub fn with_prec(prec: u32) -> Self {
        let tol = if prec >= 192 { 1e-18 } else { 1e-12 };
        SolverSettings {
            prec,
            max_iter: 300,
            tol_feas: tol,
            tol_gap: tol,
            step_frac: 0.98,
            mode: SolveMode::Optimize,
            infeas_threshold: 1e12,
            initial_radius: 100.0,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        if self.prec < crate::scalar::MIN_MANTISSA_BITS {
            return Err(SdpError::BadSettings(format!(
                "precision {} below minimum {}",
                self.prec,
                crate::scalar::MIN_MANTISSA_BITS
            )));
        }
        if !(self.tol_feas > 0.0 && self.tol_gap > 0.0) {
            return Err(SdpError::BadSettings("tolerances must be positive".into()));
        }
        if !(self.step_frac > 0.0 && self.step_frac < 1.0) {
            return Err(SdpError::BadSettings(
                "step fraction must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// Primal PSD block values.
    pub blocks: Vec<FloatMat>,
    /// Free scalar values.
    pub free_values: Vec<Float>,
    /// Objective in the problem's original sense.
    pub objective: Float,
    pub dual_objective: Float,
    /// Achieved tolerances.
    pub primal_residual: Float,
    pub dual_residual: Float,
    pub gap: Float,
    pub iterations: usize,
    /// Equality multipliers (for warm restarts).
    pub y: Vec<Float>,
    /// Dual slack blocks (for warm restarts).
    pub dual_blocks: Vec<FloatMat>,
    /// Presolve notes (dropped rows, fixed variables).
    pub warnings: Vec<String>,
}
