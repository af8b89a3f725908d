//! Scratch driver: van der Pol deterministic bounds at increasing degree.

use avgbound::bounds::{
    det_global_bound, det_local_bound, stoch_bound, vanishing_noise_lower_bound,
    weak_noise_lower_bound, BoundOptions, Direction,
};
use avgbound::Rational;
use avgbound::problem::parse_problem;

const VDP: &str = "\
vars x y
param mu 1.0
f x = y
f y = mu*(1 - x^2)*y - x
phi = x^2 + y^2
sigma = 0; 1
domain g = x^2 + y^2 - 1
zeta = x^2 - x*y + y^2
";

fn main() {
    let spec = parse_problem(VDP).unwrap();
    let args: Vec<String> = std::env::args().collect();
    let what = args.get(1).map(String::as_str).unwrap_or("ub");
    let degrees: Vec<u32> = args
        .get(2)
        .map(|s| s.split(',').map(|d| d.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![4, 6, 8]);
    for d in degrees {
        let mut opts = BoundOptions::degree(d);
        opts.trace = std::env::var("TRACE").is_ok();
        if let Ok(t) = std::env::var("TAU") {
            let mut s = avgbound::sdp::SolverSettings::with_prec(opts.effective_precision());
            s.step_frac = t.parse().unwrap();
            opts.solver = Some(s);
        }
        let t0 = std::time::Instant::now();
        let res = match what {
            "ub" => det_global_bound(&spec, Direction::Upper, &opts),
            "lb" => det_global_bound(&spec, Direction::Lower, &opts),
            "locallb" => det_local_bound(&spec, Direction::Lower, &opts),
            "vanish" => vanishing_noise_lower_bound(&spec, &opts),
            "weak" => {
                let eps: f64 = std::env::var("EPS").map(|e| e.parse().unwrap()).unwrap_or(1e-3);
                let spec2 = spec.with_eps(Rational::from_f64(eps).unwrap());
                weak_noise_lower_bound(&spec2, &opts, None)
            }
            "stochub" | "stochlb" => {
                let eps: f64 = std::env::var("EPS").map(|e| e.parse().unwrap()).unwrap_or(1e-1);
                let spec2 = spec.with_eps(Rational::from_f64(eps).unwrap());
                let dir = if what == "stochub" { Direction::Upper } else { Direction::Lower };
                stoch_bound(&spec2, dir, &opts)
            }
            other => panic!("unknown mode {other}"),
        };
        match res {
            Ok(r) => eprintln!(
                "{what} d={d}: bound {:.6} status {:?} iters {} gap {:.1e} r {:.1e} lam0 {:.2e} wall {:.1?} (prec {})",
                r.value,
                r.status,
                r.iterations,
                r.gap,
                r.max_residual().to_f64(),
                r.lambda0(),
                t0.elapsed(),
                opts.effective_precision(),
            ),
            Err(e) => eprintln!("{what} d={d}: ERROR {e} after {:.1?}", t0.elapsed()),
        }
    }
}
