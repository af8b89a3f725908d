//! Classical fixed-step RK4 integration and long-time averaging.
//!
//! The observable is integrated alongside the state (an extra quadrature
//! component), so the time average inherits the fourth-order accuracy of
//! the integrator. A half-step re-run provides a Richardson consistency
//! check on every reported average.

use super::{FastPoly, OracleError};
use crate::bounds::ProblemSpec;
use crate::poly::RatPoly;

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub x0: Vec<f64>,
    pub step: f64,
    /// Transient time discarded before averaging.
    pub t_transient: f64,
    /// Final time; averaging runs over [t_transient, t_final].
    pub t_final: f64,
    /// Keep roughly this many samples in the returned trajectory.
    pub max_samples: usize,
    /// Abort when |x|_inf exceeds this.
    pub divergence_guard: f64,
    /// Re-run at h/2 and report the difference.
    pub richardson: bool,
}

impl SimOptions {
    /// Defaults sized for unit-scale oscillators: h = 1e-3, transient 100,
    /// averaging horizon 1e4.
    pub fn new(x0: Vec<f64>) -> Self {
        SimOptions {
            x0,
            step: 1e-3,
            t_transient: 100.0,
            t_final: 10_100.0,
            max_samples: 20_000,
            divergence_guard: 1e6,
            richardson: true,
        }
    }
}

/// Uniformly sampled trajectory on the attractor (post-transient states).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Integration step (not the sampling interval).
    pub step: f64,
    pub t_transient: f64,
}

impl Trajectory {
    /// States used for averaging (all stored states are post-transient).
    pub fn averaging_states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.iter().map(|s| s.as_slice())
    }

    /// Trapezoidal average of a polynomial observable over the samples.
    pub fn average_of(&self, phi: &RatPoly) -> f64 {
        let fast = FastPoly::new(phi);
        let n = self.states.len();
        if n < 2 {
            return self.states.first().map(|s| fast.eval(s)).unwrap_or(0.0);
        }
        let mut acc = 0.0;
        for (k, s) in self.states.iter().enumerate() {
            let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
            acc += w * fast.eval(s);
        }
        acc / (n as f64 - 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct SimResult {
    /// Fourth-order quadrature average of phi over [t_transient, t_final].
    pub average: f64,
    /// The same average recomputed at step h/2 (when requested).
    pub half_step_average: Option<f64>,
    pub trajectory: Trajectory,
}

impl SimResult {
    pub fn richardson_difference(&self) -> Option<f64> {
        self.half_step_average.map(|h| (h - self.average).abs())
    }
}

struct System {
    f: Vec<FastPoly>,
    phi: FastPoly,
    n: usize,
}

impl System {
    /// Derivative of the augmented state (x, z) with z' = phi(x).
    #[inline]
    fn deriv(&self, state: &[f64], out: &mut [f64]) {
        for (i, fi) in self.f.iter().enumerate() {
            out[i] = fi.eval(&state[..self.n]);
        }
        out[self.n] = self.phi.eval(&state[..self.n]);
    }
}

fn rk4_run(
    sys: &System,
    opts: &SimOptions,
    step: f64,
    collect: Option<&mut Trajectory>,
) -> Result<f64, OracleError> {
    let n = sys.n;
    let mut state = vec![0.0; n + 1];
    state[..n].copy_from_slice(&opts.x0);
    let mut k1 = vec![0.0; n + 1];
    let mut k2 = vec![0.0; n + 1];
    let mut k3 = vec![0.0; n + 1];
    let mut k4 = vec![0.0; n + 1];
    let mut tmp = vec![0.0; n + 1];

    let total_steps = (opts.t_final / step).round() as usize;
    let transient_steps = (opts.t_transient / step).round() as usize;
    let mut z_at_transient = 0.0;
    let stride = ((total_steps - transient_steps) / opts.max_samples.max(1)).max(1);
    let mut collector = collect;

    for s in 0..total_steps {
        if s == transient_steps {
            z_at_transient = state[n];
            if let Some(traj) = collector.as_deref_mut() {
                traj.times.push(s as f64 * step);
                traj.states.push(state[..n].to_vec());
            }
        }
        sys.deriv(&state, &mut k1);
        for i in 0..=n {
            tmp[i] = state[i] + 0.5 * step * k1[i];
        }
        sys.deriv(&tmp, &mut k2);
        for i in 0..=n {
            tmp[i] = state[i] + 0.5 * step * k2[i];
        }
        sys.deriv(&tmp, &mut k3);
        for i in 0..=n {
            tmp[i] = state[i] + step * k3[i];
        }
        sys.deriv(&tmp, &mut k4);
        for i in 0..=n {
            state[i] += step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t = (s + 1) as f64 * step;
        if state[..n].iter().any(|v| v.abs() > opts.divergence_guard) {
            return Err(OracleError::Divergence {
                t,
                guard: opts.divergence_guard,
            });
        }
        if s >= transient_steps && (s + 1 - transient_steps) % stride == 0 {
            if let Some(traj) = collector.as_deref_mut() {
                traj.times.push(t);
                traj.states.push(state[..n].to_vec());
            }
        }
    }
    let span = opts.t_final - opts.t_transient;
    Ok((state[n] - z_at_transient) / span)
}

/// Integrates the system with classical RK4 and returns the time average of
/// the observable over `[t_transient, t_final]`, the sampled post-transient
/// trajectory, and a half-step Richardson re-run.
pub fn simulate_average(spec: &ProblemSpec, opts: &SimOptions) -> Result<SimResult, OracleError> {
    if opts.step <= 0.0 || opts.t_final <= opts.t_transient {
        return Err(OracleError::BadOptions(
            "need step > 0 and t_final > t_transient".into(),
        ));
    }
    if opts.x0.len() != spec.dim() {
        return Err(OracleError::BadOptions(format!(
            "initial state has {} components, system has {}",
            opts.x0.len(),
            spec.dim()
        )));
    }
    let sys = System {
        f: spec.f.iter().map(FastPoly::new).collect(),
        phi: FastPoly::new(&spec.phi),
        n: spec.dim(),
    };
    let mut trajectory = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        step: opts.step,
        t_transient: opts.t_transient,
    };
    let average = rk4_run(&sys, opts, opts.step, Some(&mut trajectory))?;
    let half_step_average = if opts.richardson {
        Some(rk4_run(&sys, opts, opts.step / 2.0, None)?)
    } else {
        None
    };
    Ok(SimResult {
        average,
        half_step_average,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::parse;
    use std::collections::BTreeMap;

    fn vars2() -> Vec<String> {
        vec!["x".into(), "y".into()]
    }

    fn spec(fx: &str, fy: &str, phi: &str) -> ProblemSpec {
        ProblemSpec {
            var_names: vars2(),
            f: vec![
                parse(fx, &vars2()).unwrap(),
                parse(fy, &vars2()).unwrap(),
            ],
            phi: parse(phi, &vars2()).unwrap(),
            sigma: None,
            eps: None,
            domain: None,
            zeta: None,
            params: BTreeMap::new(),
        }
    }

    #[test]
    fn harmonic_oscillator_conserves_radius() {
        let s = spec("y", "0 - x", "x^2 + y^2");
        let mut opts = SimOptions::new(vec![1.0, 0.0]);
        opts.t_transient = 10.0;
        opts.t_final = 110.0;
        opts.richardson = false;
        let result = simulate_average(&s, &opts).unwrap();
        assert!((result.average - 1.0).abs() < 1e-6, "{}", result.average);
    }

    #[test]
    fn fixed_point_average_is_zero() {
        let s = spec("y", "(1 - x^2)*y - x", "x^2 + y^2");
        let mut opts = SimOptions::new(vec![0.0, 0.0]);
        opts.t_transient = 1.0;
        opts.t_final = 11.0;
        opts.richardson = false;
        let result = simulate_average(&s, &opts).unwrap();
        assert_eq!(result.average, 0.0);
    }

    #[test]
    fn divergence_guard_fires() {
        let s = spec("x^2 + 1", "y", "x^2");
        let mut opts = SimOptions::new(vec![1.0, 0.0]);
        opts.t_transient = 0.5;
        opts.t_final = 50.0;
        opts.richardson = false;
        assert!(matches!(
            simulate_average(&s, &opts),
            Err(OracleError::Divergence { .. })
        ));
    }

    #[test]
    fn rk4_is_fourth_order_on_known_solution() {
        // x' = -x from 1: x(1) = e^{-1}. Global error ratio between h and
        // 2h should approach 2^4.
        let s = spec("0 - x", "0 - y", "x");
        let run = |h: f64| -> f64 {
            let sys = System {
                f: s.f.iter().map(FastPoly::new).collect(),
                phi: FastPoly::new(&s.phi),
                n: 2,
            };
            let opts = SimOptions {
                x0: vec![1.0, 0.0],
                step: h,
                t_transient: 0.0,
                t_final: 1.0,
                max_samples: 1,
                divergence_guard: 1e6,
                richardson: false,
            };
            // Average of x over [0,1] = 1 - e^{-1}; compare quadrature.
            rk4_run(&sys, &opts, h, None).unwrap()
        };
        let exact = 1.0 - (-1.0f64).exp();
        let e1 = (run(0.02) - exact).abs();
        let e2 = (run(0.01) - exact).abs();
        let order = (e1 / e2).log2();
        assert!(order > 3.5, "empirical order {order:.2}");
    }

    #[test]
    fn trajectory_sampling_is_post_transient() {
        let s = spec("y", "(1 - x^2)*y - x", "x^2 + y^2");
        let mut opts = SimOptions::new(vec![2.0, 0.0]);
        opts.t_transient = 50.0;
        opts.t_final = 150.0;
        opts.richardson = false;
        opts.max_samples = 500;
        let result = simulate_average(&s, &opts).unwrap();
        assert!(result.trajectory.times.first().copied().unwrap_or(0.0) >= 50.0);
        assert!(result.trajectory.states.len() >= 400);
        // All sampled states sit near the limit cycle, away from origin.
        for st in result.trajectory.averaging_states() {
            let r2 = st[0] * st[0] + st[1] * st[1];
            assert!(r2 > 0.5, "sample at radius^2 = {r2}");
        }
    }
}
