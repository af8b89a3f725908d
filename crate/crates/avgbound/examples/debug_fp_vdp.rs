//! Scratch driver: van der Pol Fokker-Planck expectations per eps.

use avgbound::oracles::{fokker_planck_expectation, FpOptions};
use avgbound::problem::parse_problem;
use avgbound::Rational;

const VDP: &str = "\
vars x y
param mu 1.0
f x = y
f y = mu*(1 - x^2)*y - x
phi = x^2 + y^2
sigma = 0; 1
";

fn main() {
    let spec = parse_problem(VDP).unwrap();
    let args: Vec<String> = std::env::args().collect();
    let eps: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let n: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(257);
    let a: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(6.0);
    let spec = spec.with_eps(Rational::from_f64(eps).unwrap());
    let opts = FpOptions {
        half_width: a,
        n,
        steady_tol: 1e-10,
        max_steps: 60_000,
        trace: std::env::var("TRACE").is_ok(),
        ..FpOptions::default()
    };
    let t0 = std::time::Instant::now();
    match fokker_planck_expectation(&spec, &opts) {
        Ok(r) => eprintln!(
            "eps {eps} n {n} a {a}: <phi> {:.6} steps {} bmass {:.1e} clamp {:.1e} wall {:.1?}",
            r.expectation, r.steps, r.boundary_mass, r.max_clamped, t0.elapsed()
        ),
        Err(e) => eprintln!("eps {eps} n {n} a {a}: ERR {e} ({:.1?})", t0.elapsed()),
    }
}
