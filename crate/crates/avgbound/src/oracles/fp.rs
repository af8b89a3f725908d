//! Steady-state Fokker-Planck solver on a 2-D tensor grid.
//!
//! Solves `div(eps D grad rho - f rho) = 0` with zero-flux outer boundaries
//! by pseudo-time marching in delta form: the update solves
//!
//! ```text
//! (I - dt Lx)(I - dt Ly) delta = dt A rho,   rho <- rho + delta
//! ```
//!
//! where `A` is the second-order spatial residual (upwind-biased advection,
//! centered diffusion) and `Lx`, `Ly` are first-order-upwind implicit
//! factors (tridiagonal M-matrices). The converged density satisfies the
//! unsplit second-order equations, so the factorization never biases the
//! steady state; positivity is maintained by clamping, and the mass is
//! renormalized every step. Only diagonal diffusion matrices are supported
//! by the dimension-split factors.

use super::{FastPoly, OracleError};
use crate::bounds::ProblemSpec;
use crate::poly::RatPoly;

#[derive(Debug, Clone)]
pub struct FpOptions {
    /// Square domain `[-a, a]^2`.
    pub half_width: f64,
    /// Grid points per axis.
    pub n: usize,
    /// Convergence: `|delta|_1 < steady_tol * dt`.
    pub steady_tol: f64,
    pub max_steps: usize,
    /// Error out when this much mass sits on the boundary ring.
    pub boundary_threshold: f64,
    pub dt_initial: f64,
    pub dt_growth: f64,
    pub dt_max: f64,
    pub trace: bool,
}

impl Default for FpOptions {
    fn default() -> Self {
        FpOptions {
            half_width: 6.0,
            n: 257,
            steady_tol: 1e-10,
            max_steps: 40_000,
            boundary_threshold: 1e-6,
            dt_initial: 0.02,
            dt_growth: 1.05,
            dt_max: 0.5,
            trace: false,
        }
    }
}

/// Discrete stationary density on a uniform node-centered grid.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub half_width: f64,
    pub n: usize,
    /// Row-major `rho[ix * n + iy] >= 0`, trapezoid mass 1.
    pub rho: Vec<f64>,
    pub eps: f64,
}

impl DensityGrid {
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n {
            0.5
        } else {
            1.0
        }
    }

    /// Trapezoidal mass integral.
    pub fn mass(&self) -> f64 {
        let h = self.spacing();
        let mut acc = 0.0;
        for ix in 0..self.n {
            for iy in 0..self.n {
                acc += self.weight(ix) * self.weight(iy) * self.rho[ix * self.n + iy];
            }
        }
        acc * h * h
    }

    /// Trapezoidal expectation of a polynomial observable.
    pub fn expectation(&self, phi: &RatPoly) -> f64 {
        let fast = FastPoly::new(phi);
        let h = self.spacing();
        let mut acc = 0.0;
        for ix in 0..self.n {
            let x = self.coord(ix);
            for iy in 0..self.n {
                let y = self.coord(iy);
                acc += self.weight(ix)
                    * self.weight(iy)
                    * self.rho[ix * self.n + iy]
                    * fast.eval(&[x, y]);
            }
        }
        acc * h * h
    }

    /// Mass on the outermost node ring.
    pub fn boundary_mass(&self) -> f64 {
        let h = self.spacing();
        let mut acc = 0.0;
        for ix in 0..self.n {
            for iy in 0..self.n {
                if ix == 0 || iy == 0 || ix + 1 == self.n || iy + 1 == self.n {
                    acc += self.weight(ix) * self.weight(iy) * self.rho[ix * self.n + iy];
                }
            }
        }
        acc * h * h
    }

    pub fn min_density(&self) -> f64 {
        self.rho.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn normalize(&mut self) {
        let m = self.mass();
        if m > 0.0 {
            for v in &mut self.rho {
                *v /= m;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FpResult {
    pub expectation: f64,
    pub grid: DensityGrid,
    pub steps: usize,
    /// `|delta|_1 / dt` at convergence.
    pub final_residual: f64,
    pub boundary_mass: f64,
    /// Largest negative value clamped during the iteration (diagnostic).
    pub max_clamped: f64,
}

/// Second-order residual of the conservative operator along one line.
///
/// `rho_line` holds the density on the line, `vel[k]` the advective
/// velocity at face `k+1/2` (faces 0..m-1 between the m nodes), `b` the
/// constant diffusion coefficient, `h` the spacing. Returns the flux
/// divergence contribution `-(J_{i+1/2} - J_{i-1/2}) / w_i h`.
fn line_residual(rho_line: &[f64], vel: &[f64], b: f64, h: f64, out: &mut [f64]) {
    let m = rho_line.len();
    // Face fluxes; faces k = 0..m-2 sit between nodes k and k+1. Outer
    // boundary faces carry zero flux.
    let mut flux = vec![0.0; m - 1];
    for k in 0..m - 1 {
        let a = vel[k];
        // Upwind-biased second-order reconstruction of the face density,
        // falling back to first order beside the boundary.
        let face_rho = if a >= 0.0 {
            if k >= 1 {
                1.5 * rho_line[k] - 0.5 * rho_line[k - 1]
            } else {
                rho_line[k]
            }
        } else if k + 2 < m {
            1.5 * rho_line[k + 1] - 0.5 * rho_line[k + 2]
        } else {
            rho_line[k + 1]
        };
        let mut j = a * face_rho;
        if b > 0.0 {
            j -= b * (rho_line[k + 1] - rho_line[k]) / h;
        }
        flux[k] = j;
    }
    for i in 0..m {
        let jr = if i < m - 1 { flux[i] } else { 0.0 };
        let jl = if i > 0 { flux[i - 1] } else { 0.0 };
        let w = if i == 0 || i + 1 == m { 0.5 } else { 1.0 };
        out[i] = -(jr - jl) / (w * h);
    }
}

/// Solves `(I - dt L1) u = rhs` for the first-order upwind + centered
/// diffusion operator on one line (Thomas algorithm). The discrete `L1` is
/// an M-matrix, so the system is strictly diagonally dominant.
fn line_implicit_solve(rhs: &[f64], vel: &[f64], b: f64, h: f64, dt: f64, out: &mut [f64]) {
    let m = rhs.len();
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    for i in 0..m {
        let w = if i == 0 || i + 1 == m { 0.5 } else { 1.0 };
        let scale = dt / (w * h);
        diag[i] = 1.0;
        // Right face k = i (exists when i < m-1).
        if i + 1 < m {
            let a = vel[i];
            // J_r = a * (a>=0 ? rho_i : rho_{i+1}) - b (rho_{i+1} - rho_i)/h
            // contributes +J_r / (w h) to -(L1 rho)_i.
            if a >= 0.0 {
                diag[i] += scale * a;
            } else {
                upper[i] += scale * a;
            }
            diag[i] += scale * b / h;
            upper[i] -= scale * b / h;
        }
        // Left face k = i-1 (exists when i > 0); contributes -J_l / (w h).
        if i > 0 {
            let a = vel[i - 1];
            if a >= 0.0 {
                lower[i] -= scale * a;
            } else {
                diag[i] -= scale * a;
            }
            diag[i] += scale * b / h;
            lower[i] -= scale * b / h;
        }
    }
    // Thomas sweep.
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..m {
        let denom = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / denom;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    out[m - 1] = d[m - 1];
    for i in (0..m - 1).rev() {
        out[i] = d[i] - c[i] * out[i + 1];
    }
}

/// Computes the stationary expectation of the observable by evolving the
/// Fokker-Planck equation to steady state.
pub fn fokker_planck_expectation(
    spec: &ProblemSpec,
    opts: &FpOptions,
) -> Result<FpResult, OracleError> {
    if spec.dim() != 2 {
        return Err(OracleError::NotTwoDimensional);
    }
    let sigma = spec.sigma.as_ref().ok_or(OracleError::MissingNoise)?;
    let eps = spec
        .eps
        .as_ref()
        .map(|e| e.to_f64())
        .ok_or(OracleError::MissingNoise)?;
    if eps <= 0.0 {
        return Err(OracleError::BadOptions("eps must be positive".into()));
    }
    if sigma.entry(0, 1) != &rug::Rational::new() {
        return Err(OracleError::OffDiagonalDiffusion);
    }
    let n = opts.n;
    if n < 16 {
        return Err(OracleError::BadOptions("grid too coarse (n < 16)".into()));
    }
    let bx = eps * sigma.entry(0, 0).to_f64();
    let by = eps * sigma.entry(1, 1).to_f64();
    let f0 = FastPoly::new(&spec.f[0]);
    let f1 = FastPoly::new(&spec.f[1]);

    let mut grid = DensityGrid {
        half_width: opts.half_width,
        n,
        rho: vec![0.0; n * n],
        eps,
    };
    let h = grid.spacing();
    // Broad Gaussian initial density.
    let s2 = (opts.half_width / 3.0).powi(2);
    for ix in 0..n {
        let x = grid.coord(ix);
        for iy in 0..n {
            let y = grid.coord(iy);
            grid.rho[ix * n + iy] = (-(x * x + y * y) / (2.0 * s2)).exp();
        }
    }
    grid.normalize();

    // Precompute face velocities. x-faces: vel_x[(k, iy)] = f0 at
    // ((x_k + x_{k+1})/2, y_iy); y-faces analogous.
    let mut vel_x = vec![0.0; (n - 1) * n];
    for k in 0..n - 1 {
        let xm = grid.coord(k) + 0.5 * h;
        for iy in 0..n {
            vel_x[k * n + iy] = f0.eval(&[xm, grid.coord(iy)]);
        }
    }
    let mut vel_y = vec![0.0; n * (n - 1)];
    for ix in 0..n {
        let x = grid.coord(ix);
        for k in 0..n - 1 {
            let ym = grid.coord(k) + 0.5 * h;
            vel_y[ix * (n - 1) + k] = f1.eval(&[x, ym]);
        }
    }

    let mut dt = opts.dt_initial;
    let mut max_clamped: f64 = 0.0;
    let mut residual = vec![0.0; n * n];
    let mut line = vec![0.0; n];
    let mut line_vel = vec![0.0; n - 1];
    let mut line_out = vec![0.0; n];
    let mut steps = 0;
    let mut last_delta = f64::INFINITY;

    while steps < opts.max_steps {
        steps += 1;
        // Residual A rho (second order).
        residual.iter_mut().for_each(|v| *v = 0.0);
        // x-direction: lines of fixed iy.
        for iy in 0..n {
            for ix in 0..n {
                line[ix] = grid.rho[ix * n + iy];
            }
            for k in 0..n - 1 {
                line_vel[k] = vel_x[k * n + iy];
            }
            line_residual(&line, &line_vel, bx, h, &mut line_out);
            for ix in 0..n {
                residual[ix * n + iy] += line_out[ix];
            }
        }
        // y-direction: lines of fixed ix.
        for ix in 0..n {
            let row = &grid.rho[ix * n..(ix + 1) * n];
            line_residual(row, &vel_y[ix * (n - 1)..(ix + 1) * (n - 1)], by, h, &mut line_out);
            for iy in 0..n {
                residual[ix * n + iy] += line_out[iy];
            }
        }
        // Delta form: (I - dt Lx)(I - dt Ly) delta = dt * residual.
        let mut delta = vec![0.0; n * n];
        for iy in 0..n {
            for ix in 0..n {
                line[ix] = dt * residual[ix * n + iy];
            }
            for k in 0..n - 1 {
                line_vel[k] = vel_x[k * n + iy];
            }
            line_implicit_solve(&line, &line_vel, bx, h, dt, &mut line_out);
            for ix in 0..n {
                delta[ix * n + iy] = line_out[ix];
            }
        }
        for ix in 0..n {
            line.copy_from_slice(&delta[ix * n..(ix + 1) * n]);
            line_implicit_solve(
                &line,
                &vel_y[ix * (n - 1)..(ix + 1) * (n - 1)],
                by,
                h,
                dt,
                &mut line_out,
            );
            delta[ix * n..(ix + 1) * n].copy_from_slice(&line_out);
        }
        let mut delta_l1 = 0.0;
        for (rho, d) in grid.rho.iter_mut().zip(&delta) {
            *rho += d;
            delta_l1 += d.abs() * h * h;
            if *rho < 0.0 {
                max_clamped = max_clamped.max(-*rho);
                *rho = 0.0;
            }
        }
        grid.normalize();
        last_delta = delta_l1;
        if opts.trace && steps % 200 == 0 {
            eprintln!(
                "fp step {steps}: |delta|_1/dt {:.3e} dt {:.3}",
                delta_l1 / dt,
                dt
            );
        }
        if delta_l1 < opts.steady_tol * dt {
            let boundary_mass = grid.boundary_mass();
            if boundary_mass > opts.boundary_threshold {
                return Err(OracleError::BoundaryMass {
                    mass: boundary_mass,
                    threshold: opts.boundary_threshold,
                });
            }
            let expectation = grid.expectation(&spec.phi);
            return Ok(FpResult {
                expectation,
                grid,
                steps,
                final_residual: delta_l1 / dt,
                boundary_mass,
                max_clamped,
            });
        }
        dt = (dt * opts.dt_growth).min(opts.dt_max);
    }
    Err(OracleError::NoSteadyState {
        steps,
        last_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{parse, DiffusionMatrix};
    use rug::Rational;
    use std::collections::BTreeMap;

    fn vars2() -> Vec<String> {
        vec!["x".into(), "y".into()]
    }

    fn ou_spec(eps_num: i64, eps_den: i64) -> ProblemSpec {
        ProblemSpec {
            var_names: vars2(),
            f: vec![
                parse("0 - x", &vars2()).unwrap(),
                parse("0 - y", &vars2()).unwrap(),
            ],
            phi: parse("x^2 + y^2", &vars2()).unwrap(),
            sigma: Some(DiffusionMatrix::identity(2)),
            eps: Some(Rational::from((eps_num, eps_den))),
            domain: None,
            zeta: None,
            params: BTreeMap::new(),
        }
    }

    #[test]
    fn ou_closed_form() {
        // Stationary density is Gaussian with variance eps per axis, so
        // <x^2 + y^2> = 2 eps.
        let eps: f64 = 0.1;
        let spec = ou_spec(1, 10);
        let opts = FpOptions {
            half_width: 8.0 * eps.sqrt(),
            n: 257,
            steady_tol: 1e-9,
            max_steps: 20_000,
            ..FpOptions::default()
        };
        let result = fokker_planck_expectation(&spec, &opts).unwrap();
        let exact = 2.0 * eps;
        let rel = (result.expectation - exact).abs() / exact;
        assert!(rel < 0.01, "OU expectation {} vs {exact} (rel {rel:.3e})", result.expectation);
        assert!(result.grid.min_density() >= 0.0);
        assert!((result.grid.mass() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn grid_refinement_improves_ou() {
        let eps = 0.25;
        let spec = ou_spec(1, 4);
        let exact = 2.0 * eps;
        let run = |n: usize| {
            let opts = FpOptions {
                half_width: 4.0,
                n,
                steady_tol: 1e-10,
                max_steps: 30_000,
                ..FpOptions::default()
            };
            fokker_planck_expectation(&spec, &opts).unwrap().expectation
        };
        let e65 = (run(65) - exact).abs();
        let e129 = (run(129) - exact).abs();
        assert!(
            e129 * 3.0 <= e65 + 1e-12,
            "refinement gain too small: {e65:.3e} -> {e129:.3e}"
        );
    }

    #[test]
    fn boundary_mass_guard() {
        // Domain far too small for eps = 1: mass piles up at the boundary.
        let spec = ou_spec(1, 1);
        let opts = FpOptions {
            half_width: 1.0,
            n: 65,
            max_steps: 5_000,
            steady_tol: 1e-8,
            ..FpOptions::default()
        };
        match fokker_planck_expectation(&spec, &opts) {
            Err(OracleError::BoundaryMass { .. }) => {}
            other => panic!("expected boundary-mass error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_off_diagonal_diffusion() {
        let mut spec = ou_spec(1, 10);
        spec.sigma = Some(
            DiffusionMatrix::from_sigma(vec![
                vec![Rational::from(1), Rational::from(1)],
                vec![Rational::from(0), Rational::from(1)],
            ])
            .unwrap(),
        );
        assert!(matches!(
            fokker_planck_expectation(&spec, &FpOptions::default()),
            Err(OracleError::OffDiagonalDiffusion)
        ));
    }
}
