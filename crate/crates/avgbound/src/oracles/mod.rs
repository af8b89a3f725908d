//! Independent ground-truth generators.
//!
//! Nothing here shares code with the bounding pipeline: time averages come
//! from direct RK4 integration, stationary expectations from a
//! finite-difference steady solve of the Fokker-Planck equation, and the
//! absorbing-domain property from a standalone SoS feasibility check.

mod absorb;
mod fp;
mod rk4;

pub use absorb::{absorbing_domain_check, g_monotonicity_probe, AbsorbOptions, AbsorbVerdict};
pub use fp::{fokker_planck_expectation, DensityGrid, FpOptions, FpResult};
pub use rk4::{simulate_average, SimOptions, SimResult, Trajectory};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("trajectory diverged at t = {t:.3} (|x| > {guard:.0e})")]
    Divergence { t: f64, guard: f64 },
    #[error("boundary mass {mass:.3e} exceeds threshold {threshold:.1e}; enlarge the domain")]
    BoundaryMass { mass: f64, threshold: f64 },
    #[error("no steady state within {steps} steps (last delta {last_delta:.3e})")]
    NoSteadyState { steps: usize, last_delta: f64 },
    #[error("the dimension-split solver supports diagonal diffusion matrices only")]
    OffDiagonalDiffusion,
    #[error("the Fokker-Planck oracle is implemented for 2-D problems")]
    NotTwoDimensional,
    #[error("stochastic oracle needs sigma and eps on the problem")]
    MissingNoise,
    #[error("invalid oracle options: {0}")]
    BadOptions(String),
    #[error(transparent)]
    Bounds(#[from] Box<crate::bounds::BoundsError>),
    #[error(transparent)]
    Sosc(#[from] crate::sosc::SoscError),
    #[error(transparent)]
    Sdp(#[from] crate::sdp::SdpError),
}

/// Flat-format polynomial for fast repeated f64 evaluation in the
/// integrators (the BTreeMap walk in `RatPoly` is too slow for 1e7 steps).
#[derive(Debug, Clone)]
pub(crate) struct FastPoly {
    /// (coefficient, exponent per variable).
    terms: Vec<(f64, Vec<u32>)>,
    dim: usize,
}

impl FastPoly {
    pub fn new(p: &crate::poly::RatPoly) -> Self {
        FastPoly {
            terms: p
                .terms()
                .map(|(m, c)| (c.to_f64(), m.exps().to_vec()))
                .collect(),
            dim: p.dim(),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut acc = 0.0;
        for (c, exps) in &self.terms {
            let mut t = *c;
            for (i, &e) in exps.iter().enumerate() {
                match e {
                    0 => {}
                    1 => t *= x[i],
                    2 => t *= x[i] * x[i],
                    _ => t *= x[i].powi(e as i32),
                }
            }
            acc += t;
        }
        acc
    }
}
